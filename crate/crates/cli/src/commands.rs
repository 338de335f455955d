use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sdn_core::config::RunConfig;
use sdn_core::data::{grid_ppm, Dataset, FactorSpec};
use sdn_core::metrics::{beta_vae_metric, factor_vae_metric, MetricReport, VaeCode, METRICS_CSV_HEADER};
use sdn_core::numerics::Tensor;
use sdn_core::rng::seeded;
use sdn_core::train::{eval_indices, Trainer, CHECKPOINT_FILE};
use sdn_core::vae::{evaluate, interpolate as interpolate_images, sample as sample_images, threads_from_env, Checkpoint, EvalOptions, VaeModel};
use sdn_core::{Error, Result};

use crate::{EvalArgs, GenerateArgs, InterpolateArgs, MetricArg, MetricsArgs, SampleArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.ini";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

/// Attaches the path to I/O errors.
pub fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {}", path.display(), io))),
        other => other,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        at_path(dir, fs::create_dir_all(dir).map_err(Error::from))?;
    }
    at_path(path, fs::write(path, bytes).map_err(Error::from))
}

pub fn print_image_hint(path: &Path) {
    println!("wrote {} (binary PNM; convert with e.g. `magick {} out.png` or `pnmtopng`)", path.display(), path.display());
}

/// `RxC` (or `R×C`) with both sides positive.
pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X', '×']).ok_or_else(|| format!("expected ROWSxCOLS, got {:?}", s))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count in {:?}", s))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count in {:?}", s))?;
    if r == 0 || c == 0 {
        return Err(format!("grid {:?} has no cells", s));
    }
    Ok((r, c))
}

struct Loaded {
    run: RunConfig,
    model: VaeModel,
    ckpt: Checkpoint,
}

fn load_model(path: &Path) -> Result<Loaded> {
    let ckpt = at_path(path, Checkpoint::load(path))?;
    let run = RunConfig::parse(&ckpt.config_text)?;
    if run.digest() != ckpt.config_digest {
        return Err(Error::format("checkpoint", "embedded config does not match its digest"));
    }
    let model = VaeModel::new(run.model.clone())?;
    Ok(Loaded { run, model, ckpt })
}

fn load_dataset(path: &Path, model: &VaeModel) -> Result<Dataset> {
    let ds = at_path(path, Dataset::load(path))?;
    let (s, c) = (&ds.spec, &model.config);
    if s.image_size != c.image_size || s.channels != c.channels {
        return Err(Error::config(format!(
            "dataset holds {}x{}x{} images, the model expects {}x{}x{}",
            s.channels, s.image_size, s.image_size, c.channels, c.image_size, c.image_size
        )));
    }
    Ok(ds)
}

pub fn generate_data(a: GenerateArgs) -> Result<()> {
    let spec = FactorSpec::scenes(a.size as usize)?;
    let ds = Dataset::generate(spec, a.seed)?;
    write_file(&a.out, &ds.to_bytes())?;
    let s = &ds.spec;
    println!("images = {}", ds.len());
    println!("shape = {}x{}x{} ({} bits)", s.channels, s.image_size, s.image_size, s.bits);
    for f in &s.factors {
        println!("factor {} = {}", f.name, f.cardinality);
    }
    println!("pixel_sha256 = {}", ds.pixel_digest());
    println!("config_digest = {}", hex::encode(ds.config_digest));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn resolve_run(a: &TrainArgs) -> Result<RunConfig> {
    let mut run = RunConfig::load(&a.config)?;
    run.apply_overrides(a.set.iter().map(String::as_str))?;
    if let Some(d) = a.decoder {
        run.set("model.decoder", &sdn_core::vae::DecoderKind::from(d).to_string())?;
    }
    if let Some(b) = a.beta {
        run.set("train.beta", &b.to_string())?;
    }
    if let Some(s) = a.seed {
        run.set("train.seed", &s.to_string())?;
    }
    if let Some(p) = &a.dataset {
        run.set("data.path", &p.to_string_lossy())?;
    }
    run.validate()?;
    Ok(run)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let run = resolve_run(&a)?;
    let data_path = Path::new(&run.data.path).to_path_buf();
    let probe = VaeModel::new(run.model.clone())?;
    let dataset = load_dataset(&data_path, &probe)?;
    at_path(&a.out, fs::create_dir_all(&a.out).map_err(Error::from))?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let mut trainer = if ckpt_path.exists() {
        if !a.resume {
            return Err(Error::config(format!("{} already exists; pass --resume to continue it", ckpt_path.display())));
        }
        let ckpt = at_path(&ckpt_path, Checkpoint::load(&ckpt_path))?;
        if ckpt.config_digest != run.digest() {
            return Err(Error::config(format!(
                "checkpoint config digest {} differs from this run's {}",
                hex::encode(ckpt.config_digest),
                run.digest_hex()
            )));
        }
        Trainer::from_checkpoint(&ckpt, &dataset)?
    } else {
        Trainer::new(run.clone(), &dataset)?
    };
    let text = format!("# config_digest={}\n{}", run.digest_hex(), run.render());
    write_file(&a.out.join(CONFIG_FILE), text.as_bytes())?;
    eprintln!(
        "training {} decoder, beta {}, seed {}, steps {}..{}, config digest {}",
        run.model.decoder,
        run.train.beta,
        run.train.seed,
        trainer.step,
        run.train.total_steps,
        run.digest_hex()
    );
    let result = trainer.run(&a.out, |row| {
        eprintln!(
            "step {:>7}  -elbo {:.4} bpd  recon {:.4}  kl {:.4}  beta*kl {:.4}  lr {:.3e}",
            row.step, row.elbo_bpd, row.recon_bpd, row.kl_bpd, row.beta_kl_bpd, row.lr
        );
    });
    match result {
        Ok(summary) => {
            println!("config_digest = {}", run.digest_hex());
            println!("final_step = {}", summary.final_step);
            if let Some(last) = summary.rows.last() {
                println!("neg_elbo_bpd = {}", last.elbo_bpd);
            }
            println!("log = {}", summary.log_path.display());
            println!("checkpoint = {}", summary.checkpoint_path.display());
            Ok(())
        }
        Err(Error::NonFinite { context, diagnostics }) => {
            let path = a.out.join(DIAGNOSTICS_FILE);
            write_file(&path, format!("{}\n{}", context, diagnostics).as_bytes())?;
            Err(Error::NonFinite { context: format!("{} (diagnostics in {})", context, path.display()), diagnostics })
        }
        Err(e) => Err(e),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset, &m.model)?;
    let mut idx = eval_indices(&m.run, ds.len())?;
    if let Some(n) = a.limit {
        idx.truncate(n);
    }
    let opts = EvalOptions {
        iwae_samples: a.iwae.map(|k| k as usize),
        seed: a.seed,
        batch: a.batch as usize,
        threads: threads_from_env()?,
        ..EvalOptions::default()
    };
    let r = evaluate(&m.model, m.ckpt.eval_params(), &ds, &idx, &opts)?;
    let (elbo, se) = r.elbo_bpd();
    println!("config_digest = {}", m.run.digest_hex());
    println!("checkpoint_step = {}", m.ckpt.state.as_ref().map_or(0, |s| s.step));
    println!("images = {}", idx.len());
    println!("neg_elbo_bpd = {}", elbo);
    println!("neg_elbo_se_bpd = {}", se);
    println!("recon_bpd = {}", r.recon_bpd());
    println!("kl_bpd = {}", r.kl_bpd());
    if let Some((k, iwae, se)) = r.iwae_bpd() {
        println!("neg_iwae{}_bpd = {}", k, iwae);
        println!("neg_iwae{}_se_bpd = {}", k, se);
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset, &m.model)?;
    let mut code = VaeCode::new(&m.model, m.ckpt.eval_params(), &ds);
    let (name, value) = match a.metric {
        MetricArg::Betavae => ("betavae", beta_vae_metric(&mut code, &ds, &m.run.metrics, a.seed)?),
        MetricArg::Factorvae => ("factorvae", factor_vae_metric(&mut code, &ds, &m.run.metrics, a.seed)?),
    };
    let label = format!("{}_beta{}", m.run.model.decoder, m.run.train.beta);
    let report = MetricReport::over_seeds(name, &label, &[value], a.seed, &m.run.digest_hex())?;
    println!("{}", METRICS_CSV_HEADER);
    println!("{}", report.csv_row());
    if let Some(out) = &a.out {
        let fresh = !out.exists();
        let mut f = at_path(out, fs::OpenOptions::new().create(true).append(true).open(out).map_err(Error::from))?;
        let mut text = String::new();
        if fresh {
            text.push_str(METRICS_CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&report.csv_row());
        text.push('\n');
        at_path(out, f.write_all(text.as_bytes()).map_err(Error::from))?;
    }
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let (rows, cols) = a.grid;
    let images = sample_images(&m.model, m.ckpt.eval_params(), &mut seeded(a.seed), rows * cols, a.temperature, a.random_pixels)?;
    let comment = format!(
        "sdn sample config_digest={} temperature={} seed={} grid={}x{} random_pixels={}",
        m.run.digest_hex(),
        a.temperature,
        a.seed,
        rows,
        cols,
        a.random_pixels
    );
    write_file(&a.out, &grid_ppm(&images, m.model.config.bits, rows, cols, &comment)?)?;
    print_image_hint(&a.out);
    Ok(())
}

pub fn interpolate(a: InterpolateArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset, &m.model)?;
    for i in [a.index_a, a.index_b] {
        if i >= ds.len() {
            return Err(Error::invalid(format!("image index {} out of range 0..{}", i, ds.len())));
        }
    }
    let bits = m.model.config.bits;
    let xa = ds.batch(&[a.index_a], &[], bits)?;
    let xb = ds.batch(&[a.index_b], &[], bits)?;
    let steps = a.steps as usize;
    let strip = interpolate_images(&m.model, m.ckpt.eval_params(), &xa, &xb, steps)?;
    let all = Tensor::stack_batch(&[xa, strip, xb])?;
    let comment = format!(
        "sdn interpolate config_digest={} a={} b={} steps={} (outer cells are the inputs)",
        m.run.digest_hex(),
        a.index_a,
        a.index_b,
        steps
    );
    write_file(&a.out, &grid_ppm(&all, bits, 1, steps + 2, &comment)?)?;
    print_image_hint(&a.out);
    Ok(())
}
