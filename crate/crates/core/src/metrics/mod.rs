//! Likelihood in bits per dimension, disentanglement scores and the layer
//! benchmarks.

mod bench;
mod disentangle;

pub use bench::{runtime_bench, BenchLayer, BenchResult, BENCH_CSV_HEADER, MIN_REPEATS, MIN_WARMUP};
pub use disentangle::{beta_vae_metric, factor_vae_metric, rank_normalize, DisentangleOptions, LatentCode, VaeCode};

use crate::error::{Error, Result};
use crate::Float;

/// Negative log-likelihood in nats to bits per dimension.
pub fn bits_per_dim(total_nats: Float, num_dims: usize) -> Float {
    total_nats / (num_dims as Float * std::f64::consts::LN_2 as Float)
}

pub const METRICS_CSV_HEADER: &str = "metric,name,value,std,seed,config_digest";

/// One reported number. The timestamp is kept in memory only so that
/// reruns write identical files.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub name: String,
    pub value: Float,
    pub std: Float,
    pub seed: u64,
    pub config_digest: String,
    pub timestamp: u64,
}

impl MetricReport {
    /// Mean and sample std over per-seed values.
    pub fn over_seeds(metric: &str, name: &str, values: &[Float], seed: u64, config_digest: &str) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a metric report needs at least one seed"));
        }
        let n = values.len() as Float;
        let mean = values.iter().sum::<Float>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<Float>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        if !mean.is_finite() {
            return Err(Error::NonFinite { context: format!("metric {}", metric), diagnostics: format!("values {:?}", values) });
        }
        let timestamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(MetricReport {
            metric: metric.to_string(),
            name: name.to_string(),
            value: mean,
            std,
            seed,
            config_digest: config_digest.to_string(),
            timestamp,
        })
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.metric, self.name, self.value, self.std, self.seed, self.config_digest)
    }
}
