use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{holdout_split, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::{ParamStore, Session};
use crate::rng::{derived, RngState, SdnRng};
use crate::train::{beta_schedule, clip_global_norm, ema_update, global_norm, lr_schedule, Optimizer, TrainConfig};
use crate::vae::{draw_eps, elbo_graph, mean, Checkpoint, ElboOptions, KlEstimator, TrainingState, VaeModel};
use crate::Float;

/// Streams of the training seed.
const INIT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

pub const LOG_CSV_HEADER: &str = "step,elbo_bpd,recon_bpd,kl_bpd,beta_kl_bpd,lr,seconds";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// One row of the training log: means over the training batches since the
/// previous row, in bits per dimension. `elbo_bpd` is the negative ELBO
/// without β.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub elbo_bpd: Float,
    pub recon_bpd: Float,
    pub kl_bpd: Float,
    pub beta_kl_bpd: Float,
    pub lr: Float,
    pub seconds: Option<f64>,
}

impl LogRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.elbo_bpd,
            self.recon_bpd,
            self.kl_bpd,
            self.beta_kl_bpd,
            self.lr,
            self.seconds.map(|s| format!("{:.3}", s)).unwrap_or_default()
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = || Error::format("training log", format!("bad row {:?}", line));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<Float>().map_err(|_| bad());
        Ok(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            elbo_bpd: num(f[1])?,
            recon_bpd: num(f[2])?,
            kl_bpd: num(f[3])?,
            beta_kl_bpd: num(f[4])?,
            lr: num(f[5])?,
            seconds: if f[6].is_empty() { None } else { Some(f[6].parse().map_err(|_| bad())?) },
        })
    }
}

/// Reads a training log: the config digest from the first line and every row.
pub fn read_log(path: &Path) -> Result<(String, Vec<LogRow>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let digest = lines
        .next()
        .and_then(|l| l.strip_prefix("# config_digest="))
        .ok_or_else(|| Error::format("training log", "missing config digest line"))?
        .to_string();
    if lines.next() != Some(LOG_CSV_HEADER) {
        return Err(Error::format("training log", "missing header"));
    }
    let rows = lines.filter(|l| !l.is_empty()).map(LogRow::parse).collect::<Result<_>>()?;
    Ok((digest, rows))
}

/// Scalars of one optimization step, in nats per example.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub beta: Float,
    pub lr: Float,
    pub loss: Float,
    pub recon: Float,
    pub kl: Float,
    pub grad_norm: Float,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub start_step: u64,
    pub final_step: u64,
    pub rows: Vec<LogRow>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Optimization state of one run. Every random choice derives from
/// `train.seed`, so a run is a pure function of its configuration and
/// dataset, and resuming from a checkpoint continues it bit for bit.
pub struct Trainer<'d> {
    pub run: RunConfig,
    pub model: VaeModel,
    pub params: ParamStore,
    pub optimizer: Optimizer,
    pub ema: ParamStore,
    pub step: u64,
    rng: SdnRng,
    sampler: BatchSampler,
    dataset: &'d Dataset,
}

impl<'d> Trainer<'d> {
    pub fn new(run: RunConfig, dataset: &'d Dataset) -> Result<Self> {
        run.validate()?;
        let model = VaeModel::new(run.model.clone())?;
        let params = model.init(&mut derived(run.train.seed, INIT_STREAM))?;
        let optimizer = Optimizer::new(run.train.optimizer, &params);
        let ema = params.clone();
        let rng = derived(run.train.seed, NOISE_STREAM);
        let sampler = sampler_for(&run, dataset)?;
        Ok(Trainer { run, model, params, optimizer, ema, step: 0, rng, sampler, dataset })
    }

    /// Restores a run from a checkpoint that carries training state.
    pub fn from_checkpoint(ckpt: &Checkpoint, dataset: &'d Dataset) -> Result<Self> {
        let run = RunConfig::parse(&ckpt.config_text)?;
        if run.digest() != ckpt.config_digest {
            return Err(Error::format("checkpoint", "config text does not match its digest"));
        }
        let state = ckpt.state.as_ref().ok_or_else(|| Error::invalid("checkpoint has no training state to resume"))?;
        let mut t = Trainer::new(run, dataset)?;
        for (name, shape) in t.model.param_shapes() {
            match ckpt.params.get(&name) {
                Some(p) if p.shape() == shape.as_slice() => {}
                _ => return Err(Error::format("checkpoint", format!("parameter {} missing or misshapen", name))),
            }
        }
        t.params = ckpt.params.clone();
        t.optimizer.step = state.step;
        t.optimizer.first = state.first_moment.clone();
        t.optimizer.second = state.second_moment.clone();
        t.ema = state.ema.clone();
        t.rng = state.rng.restore();
        t.step = state.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_digest: self.run.digest(),
            config_text: self.run.render(),
            params: self.params.clone(),
            state: Some(TrainingState {
                step: self.step,
                first_moment: self.optimizer.first.clone(),
                second_moment: self.optimizer.second.clone(),
                ema: self.ema.clone(),
                rng: RngState::capture(&self.rng),
            }),
        }
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.run.train
    }

    /// One optimization step. On a non-finite loss or gradient nothing is
    /// updated and the error carries a diagnostic dump.
    pub fn step_once(&mut self) -> Result<StepStats> {
        let cfg = &self.run.train;
        let step = self.step;
        let beta = beta_schedule(step, cfg.beta, cfg.beta_anneal_steps);
        let lr = lr_schedule(step, cfg.lr, cfg.lr_decay);
        let batch = self.sampler.batch(step);
        let x = self.dataset.batch(&batch.indices, &batch.flips, self.model.config.bits)?;
        let eps = draw_eps(&mut self.rng, batch.indices.len(), self.model.config.latent_dim);
        let opts = ElboOptions { beta, free_bits: cfg.free_bits, estimator: KlEstimator::Analytic };

        let mut s = Session::new(&self.params);
        let vars = elbo_graph(&self.model, &mut s, &x, &eps, opts)?;
        s.graph.backward(vars.loss)?;
        let loss = s.graph.value(vars.loss).item();
        let recon = s.graph.value(vars.recon).data().to_vec();
        let kl = s.graph.value(vars.kl).data().to_vec();
        let mut grads = s.gradients();
        let grad_norm = global_norm(&grads);

        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training step {}", step),
                diagnostics: self.diagnostics(step, lr, beta, &batch.indices, loss, &recon, &kl, &grads),
            });
        }
        if cfg.clip_grad {
            clip_global_norm(&mut grads, cfg.clip_norm);
        }
        let decay = cfg.ema_decay;
        self.optimizer.update(&mut self.params, &grads, lr)?;
        ema_update(&mut self.ema, &self.params, decay);
        self.step += 1;
        Ok(StepStats { step, beta, lr, loss, recon: mean(&recon), kl: mean(&kl), grad_norm })
    }

    #[allow(clippy::too_many_arguments)]
    fn diagnostics(&self, step: u64, lr: Float, beta: Float, indices: &[usize], loss: Float, recon: &[Float], kl: &[Float], grads: &[Tensor]) -> String {
        let stats = |v: &[Float]| {
            let finite: Vec<Float> = v.iter().copied().filter(|x| x.is_finite()).collect();
            let bad = format!("non-finite {}/{}", v.len() - finite.len(), v.len());
            if finite.is_empty() {
                return bad;
            }
            let lo = finite.iter().copied().fold(Float::INFINITY, Float::min);
            let hi = finite.iter().copied().fold(Float::NEG_INFINITY, Float::max);
            format!("min {:.6e} max {:.6e} {}", lo, hi, bad)
        };
        let mut out = format!(
            "step = {}\nlr = {:.6e}\nbeta = {}\nloss = {:.6e}\nconfig_digest = {}\nbatch_indices = {:?}\nrecon: {}\nkl: {}\n",
            step,
            lr,
            beta,
            loss,
            self.run.digest_hex(),
            indices,
            stats(recon),
            stats(kl)
        );
        out.push_str("parameter  |param|  |grad|  grad finite\n");
        for ((name, p), g) in self.params.iter().zip(grads) {
            out.push_str(&format!("{}  {:.6e}  {:.6e}  {}\n", name, p.norm(), g.norm(), g.all_finite()));
        }
        out
    }

    /// Trains to `train.total_steps`, writing `train_log.csv` and
    /// `checkpoint.bin` under `out_dir`. A trainer restored from a checkpoint
    /// trims log rows past its step and appends.
    pub fn run(&mut self, out_dir: &Path, on_row: impl FnMut(&LogRow)) -> Result<TrainSummary> {
        self.run_until(out_dir, self.run.train.total_steps, on_row)
    }

    /// Like [`Trainer::run`] but stops after step `stop` (capped at the
    /// configured total), as an interrupted run would.
    pub fn run_until(&mut self, out_dir: &Path, stop: u64, mut on_row: impl FnMut(&LogRow)) -> Result<TrainSummary> {
        fs::create_dir_all(out_dir)?;
        let log_path = out_dir.join(LOG_FILE);
        let ckpt_path = out_dir.join(CHECKPOINT_FILE);
        let digest = self.run.digest_hex();
        let mut log = self.open_log(&log_path, &digest)?;

        let start_step = self.step;
        let total = self.run.train.total_steps;
        let dims = self.model.config.dims() as Float * std::f64::consts::LN_2 as Float;
        let clock = Instant::now();
        let mut rows = Vec::new();
        let mut acc = (0.0, 0.0, 0.0, 0usize);
        while self.step < total.min(stop) {
            let st = self.step_once()?;
            acc.0 += st.recon;
            acc.1 += st.kl;
            acc.2 += st.beta * st.kl;
            acc.3 += 1;
            let done = self.step;
            if done % self.run.train.eval_every == 0 || done == total {
                let n = acc.3 as Float;
                let (recon, kl, bkl) = (acc.0 / n, acc.1 / n, acc.2 / n);
                let row = LogRow {
                    step: done,
                    elbo_bpd: -(recon - kl) / dims,
                    recon_bpd: -recon / dims,
                    kl_bpd: kl / dims,
                    beta_kl_bpd: bkl / dims,
                    lr: st.lr,
                    seconds: self.run.train.log_wall_time.then(|| clock.elapsed().as_secs_f64()),
                };
                writeln!(log, "{}", row.csv_row())?;
                log.flush()?;
                on_row(&row);
                rows.push(row);
                acc = (0.0, 0.0, 0.0, 0);
            }
            if done % self.run.train.checkpoint_every == 0 || done == total {
                self.checkpoint().save(&ckpt_path)?;
            }
        }
        Ok(TrainSummary { start_step, final_step: self.step, rows, log_path, checkpoint_path: ckpt_path })
    }

    fn open_log(&self, path: &Path, digest: &str) -> Result<File> {
        if self.step == 0 || !path.exists() {
            let mut f = File::create(path)?;
            writeln!(f, "# config_digest={}\n{}", digest, LOG_CSV_HEADER)?;
            return Ok(f);
        }
        let (found, rows) = read_log(path)?;
        if found != digest {
            return Err(Error::invalid(format!("{} belongs to config {}, not {}", path.display(), found, digest)));
        }
        let kept: Vec<&LogRow> = rows.iter().filter(|r| r.step <= self.step).collect();
        let mut text = format!("# config_digest={}\n{}\n", digest, LOG_CSV_HEADER);
        for r in kept {
            text.push_str(&r.csv_row());
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(OpenOptions::new().append(true).open(path)?)
    }
}

/// Training pool after the held-out split, as a minibatch schedule.
fn sampler_for(run: &RunConfig, dataset: &Dataset) -> Result<BatchSampler> {
    let spec = &dataset.spec;
    let m = &run.model;
    if spec.image_size != m.image_size || spec.channels != m.channels {
        return Err(Error::config(format!(
            "dataset images are {}x{}x{} but the model expects {}x{}x{}",
            spec.channels, spec.image_size, spec.image_size, m.channels, m.image_size, m.image_size
        )));
    }
    let pool = if run.data.holdout == 0 {
        (0..dataset.len()).collect()
    } else {
        holdout_split(dataset.len(), run.data.holdout, run.data.split_seed)?.0
    };
    BatchSampler::new(pool, run.train.batch_size, run.train.seed, true, run.data.flip)
}

/// Dataset indices held out for evaluation (all images when `holdout` is 0).
pub fn eval_indices(run: &RunConfig, n: usize) -> Result<Vec<usize>> {
    if run.data.holdout == 0 {
        Ok((0..n).collect())
    } else {
        Ok(holdout_split(n, run.data.holdout, run.data.split_seed)?.1)
    }
}
