use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::layers::{ConvBaseline, Direction, SdnConfig, SdnLayer, SpatialLayer, StageTimes};
use crate::params::{ParamStore, Session};
use crate::rng::{derived, uniform_tensor};
use crate::Float;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BenchLayer {
    /// Square conv with the given kernel size.
    Conv(usize),
    Sdn(Vec<Direction>),
}

impl fmt::Display for BenchLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchLayer::Conv(k) => write!(f, "{}x{}CNN", k, k),
            BenchLayer::Sdn(d) => write!(f, "{}dir-SDN", d.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub layer: String,
    pub scale: usize,
    pub batch: usize,
    pub channels: usize,
    pub repeats: usize,
    pub mean_ms: Float,
    pub std_ms: Float,
    /// Sweep-stage time; SDN layers only.
    pub sweep: Option<(Float, Float)>,
}

/// Smallest accepted number of timed passes and of discarded warm-up passes.
pub const MIN_REPEATS: usize = 30;
pub const MIN_WARMUP: usize = 5;

pub const BENCH_CSV_HEADER: &str = "layer,scale,batch,channels,repeats,mean_ms,std_ms,sweep_mean_ms,sweep_std_ms";

impl BenchResult {
    pub fn csv_row(&self) -> String {
        let (sm, ss) = match self.sweep {
            Some((m, s)) => (format!("{:.4}", m), format!("{:.4}", s)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{:.4},{:.4},{},{}",
            self.layer, self.scale, self.batch, self.channels, self.repeats, self.mean_ms, self.std_ms, sm, ss
        )
    }
}

fn mean_std(v: &[Float]) -> (Float, Float) {
    let n = v.len() as Float;
    let m = v.iter().sum::<Float>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<Float>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Forward-pass wall time of one layer on `[batch, channels, scale, scale]`
/// inputs; the first `warmup` passes are discarded.
pub fn runtime_bench(
    layer: &BenchLayer,
    scale: usize,
    batch: usize,
    channels: usize,
    repeats: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchResult> {
    if scale == 0 || batch == 0 || channels == 0 {
        return Err(Error::config("benchmark scale, batch and channels must be > 0"));
    }
    if repeats < MIN_REPEATS || warmup < MIN_WARMUP {
        return Err(Error::config(format!(
            "benchmarks need >= {} timed repeats and >= {} warm-up passes, got {} and {}",
            MIN_REPEATS, MIN_WARMUP, repeats, warmup
        )));
    }
    let mut rng = derived(seed, 0);
    let x = uniform_tensor(&mut rng, &[batch, channels, scale, scale], -1.0, 1.0);
    let mut store = ParamStore::new();
    let mut total = Vec::with_capacity(repeats);
    let mut sweeps = Vec::with_capacity(repeats);
    match layer {
        BenchLayer::Conv(k) => {
            let l = ConvBaseline::new("b", *k, channels, channels, 1)?;
            l.init(&mut store, &mut rng)?;
            for k in 0..warmup + repeats {
                let mut s = Session::inference(&store);
                let xv = s.graph.constant(x.clone());
                let t0 = Instant::now();
                l.forward(&mut s, xv)?;
                if k >= warmup {
                    total.push(t0.elapsed().as_secs_f64() as Float * 1e3);
                }
            }
        }
        BenchLayer::Sdn(dirs) => {
            let l = SdnLayer::new("b", SdnConfig::square(channels, dirs))?;
            l.init(&mut store, &mut rng)?;
            for k in 0..warmup + repeats {
                let mut s = Session::inference(&store);
                let xv = s.graph.constant(x.clone());
                let t0 = Instant::now();
                let (_, StageTimes { sweeps: sw, .. }) = l.forward_timed(&mut s, xv)?;
                if k >= warmup {
                    total.push(t0.elapsed().as_secs_f64() as Float * 1e3);
                    sweeps.push(sw.as_secs_f64() as Float * 1e3);
                }
            }
        }
    }
    let (mean_ms, std_ms) = mean_std(&total);
    Ok(BenchResult {
        layer: layer.to_string(),
        scale,
        batch,
        channels,
        repeats,
        mean_ms,
        std_ms,
        sweep: if sweeps.is_empty() { None } else { Some(mean_std(&sweeps)) },
    })
}
