//! Likelihood bounds over a set of dataset images, in bits per dimension.

use std::thread;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;
use crate::rng::{derived, normal_tensor};
use crate::vae::model::VaeModel;
use crate::vae::objective::{elbo, iwae_bound, ElboOptions, KlEstimator};
use crate::Float;

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "SDN_NUM_THREADS";

/// Noise streams start here; image `i` uses stream `EVAL_STREAM + i`.
const EVAL_STREAM: u64 = 1 << 41;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Importance samples for the IWAE bound; `None` skips it.
    pub iwae_samples: Option<usize>,
    pub seed: u64,
    /// Images per forward pass. Batch boundaries do not depend on `threads`.
    pub batch: usize,
    pub threads: usize,
    /// Importance samples decoded together.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { iwae_samples: None, seed: 0, batch: 64, threads: 1, chunk: 64 }
    }
}

/// Per-image bounds in nats, in the order of the evaluated indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dims: usize,
    pub recon: Vec<Float>,
    pub kl: Vec<Float>,
    /// `recon - kl` with the single-sample KL estimate.
    pub elbo: Vec<Float>,
    pub iwae: Option<(usize, Vec<Float>)>,
}

/// Mean and standard error of a negated bound, in bits per dimension.
pub fn bpd_mean_se(nats: &[Float], dims: usize) -> (Float, Float) {
    let scale = -1.0 / (dims as Float * std::f64::consts::LN_2 as Float);
    let n = nats.len() as Float;
    let m = nats.iter().sum::<Float>() / n;
    let var = if nats.len() > 1 { nats.iter().map(|v| (v - m).powi(2)).sum::<Float>() / (n - 1.0) } else { 0.0 };
    (m * scale, (var / n).sqrt() * scale.abs())
}

impl EvalReport {
    pub fn elbo_bpd(&self) -> (Float, Float) {
        bpd_mean_se(&self.elbo, self.dims)
    }

    pub fn recon_bpd(&self) -> Float {
        bpd_mean_se(&self.recon, self.dims).0
    }

    pub fn kl_bpd(&self) -> Float {
        -bpd_mean_se(&self.kl, self.dims).0
    }

    pub fn iwae_bpd(&self) -> Option<(usize, Float, Float)> {
        self.iwae.as_ref().map(|(k, v)| {
            let (m, se) = bpd_mean_se(v, self.dims);
            (*k, m, se)
        })
    }
}

/// Worker count from `SDN_NUM_THREADS`; 1 when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config(format!("{} must be a positive integer, got {:?}", THREADS_ENV, v))),
        },
    }
}

struct Part {
    recon: Vec<Float>,
    kl: Vec<Float>,
    iwae: Vec<Float>,
}

fn eval_batch(model: &VaeModel, params: &ParamStore, dataset: &Dataset, idx: &[usize], opts: &EvalOptions) -> Result<Part> {
    let l = model.config.latent_dim;
    let k = opts.iwae_samples.unwrap_or(1);
    let mut first = Vec::with_capacity(idx.len() * l);
    let mut all = Vec::with_capacity(idx.len() * k * l);
    for &i in idx {
        let e = normal_tensor(&mut derived(opts.seed, EVAL_STREAM + i as u64), &[k, l], 1.0);
        first.extend_from_slice(&e.data()[..l]);
        all.extend_from_slice(e.data());
    }
    let x = dataset.batch(idx, &[], model.config.bits)?;
    let eps = Tensor::new(&[idx.len(), l], first)?;
    let terms = elbo(model, params, &x, &eps, ElboOptions { estimator: KlEstimator::SingleSample, ..ElboOptions::standard() })?;
    let iwae = match opts.iwae_samples {
        Some(_) => iwae_bound(model, params, &x, &Tensor::new(&[idx.len(), k, l], all)?, opts.chunk)?,
        None => Vec::new(),
    };
    Ok(Part { recon: terms.recon, kl: terms.kl, iwae })
}

/// ELBO, and optionally the IWAE bound, of every image in `indices`.
///
/// Image `i` always sees the same noise for a given seed, so K = 1 and the
/// ELBO share their sample and results do not depend on `threads`.
pub fn evaluate(model: &VaeModel, params: &ParamStore, dataset: &Dataset, indices: &[usize], opts: &EvalOptions) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if opts.batch == 0 || opts.threads == 0 || opts.iwae_samples == Some(0) {
        return Err(Error::config("evaluation batch, threads and IWAE samples must be > 0"));
    }
    let batches: Vec<&[usize]> = indices.chunks(opts.batch).collect();
    let per = batches.len().div_ceil(opts.threads);
    let parts: Vec<Result<Vec<Part>>> = thread::scope(|s| {
        let handles: Vec<_> = batches
            .chunks(per)
            .map(|group| s.spawn(move || group.iter().map(|b| eval_batch(model, params, dataset, b, opts)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut report = EvalReport { dims: model.config.dims(), recon: vec![], kl: vec![], elbo: vec![], iwae: None };
    let mut iwae = Vec::new();
    for group in parts {
        for p in group? {
            report.elbo.extend(p.recon.iter().zip(&p.kl).map(|(r, k)| r - k));
            report.recon.extend(p.recon);
            report.kl.extend(p.kl);
            iwae.extend(p.iwae);
        }
    }
    report.iwae = opts.iwae_samples.map(|k| (k, iwae));
    Ok(report)
}
