use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sha2::{Digest, Sha256};

use sdn_core::layers::{dependency_probe, reference_parameter_counts, ConvBaseline, Direction, SdnConfig, SdnLayer, SpatialLayer};
use sdn_core::metrics::{runtime_bench, BenchLayer, BENCH_CSV_HEADER};
use sdn_core::params::ParamStore;
use sdn_core::rng::derived;
use sdn_core::Result;

use crate::commands::{print_image_hint, write_file};

#[derive(Args)]
pub struct RuntimeArgs {
    /// Input side lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Timed passes per layer and scale (at least 30).
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// Discarded passes before timing (at least 5).
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeLayer {
    Sdn,
    Conv,
}

#[derive(Args)]
pub struct JacobianArgs {
    #[arg(long, value_enum, default_value = "sdn")]
    layer: ProbeLayer,
    /// Sweep directions of the SDN layer (bt, rl, lr, tb).
    #[arg(long, value_delimiter = ',', default_value = "bt")]
    directions: Vec<Direction>,
    /// Kernel size of the conv layer.
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Grid side length (at most 16).
    #[arg(long, default_value_t = 6)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PGM output: row p, column q is white when output p depends on input q.
    #[arg(long)]
    out: PathBuf,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn tags(dirs: &[Direction]) -> String {
    dirs.iter().map(|d| d.tag()).collect::<Vec<_>>().join(",")
}

pub fn params(channels: usize) -> Result<()> {
    println!("channels = {}", channels);
    for (name, count) in reference_parameter_counts(channels)? {
        println!("{:<14} {}", name, count);
    }
    Ok(())
}

pub fn runtime(a: RuntimeArgs) -> Result<()> {
    let layers = [
        BenchLayer::Conv(3),
        BenchLayer::Conv(5),
        BenchLayer::Sdn(vec![Direction::BottomToTop]),
        BenchLayer::Sdn(vec![Direction::BottomToTop, Direction::TopToBottom]),
    ];
    let settings = format!(
        "bench runtime\nscales = {:?}\nbatch = {}\nchannels = {}\nrepeats = {}\nwarmup = {}\nseed = {}\n",
        a.scales, a.batch, a.channels, a.repeats, a.warmup, a.seed
    );
    let mut csv = format!("# config_digest={}\n{}\n", digest(&settings), BENCH_CSV_HEADER);
    for &scale in &a.scales {
        for layer in &layers {
            let r = runtime_bench(layer, scale, a.batch, a.channels, a.repeats, a.warmup, a.seed)?;
            eprintln!("{:<9} scale {:>3}: {:.3} ms ± {:.3}", r.layer, scale, r.mean_ms, r.std_ms);
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
    }
    match &a.out {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", csv),
    }
    Ok(())
}

pub fn jacobian(a: JacobianArgs) -> Result<()> {
    let layer: Box<dyn SpatialLayer> = match a.layer {
        ProbeLayer::Sdn => Box::new(SdnLayer::new("probe", SdnConfig::square(a.channels, &a.directions))?),
        ProbeLayer::Conv => Box::new(ConvBaseline::new("probe", a.kernel, a.channels, a.channels, 1)?),
    };
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut derived(a.seed, 1))?;
    let m = dependency_probe(layer.as_ref(), &store, a.grid, a.seed)?;
    let what = match a.layer {
        ProbeLayer::Sdn => format!("sdn directions={}", tags(&a.directions)),
        ProbeLayer::Conv => format!("conv kernel={}", a.kernel),
    };
    let settings = format!("bench jacobian {} grid={} channels={} seed={}", what, a.grid, a.channels, a.seed);
    write_file(&a.out, &m.to_pgm(&format!("{} config_digest={}", settings, digest(&settings))))?;
    let n = m.positions();
    println!("{}", settings);
    println!("support = {} of {}", m.count(), n * n);
    println!("full = {}", m.is_full());
    print_image_hint(&a.out);
    Ok(())
}
