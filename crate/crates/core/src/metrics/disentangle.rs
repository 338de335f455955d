use std::collections::HashMap;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{derived, SdnRng};
use crate::vae::{posterior_means, VaeModel};
use crate::Float;

/// A representation of dataset images.
pub trait LatentCode {
    fn dim(&self) -> usize;

    /// One code vector per dataset index.
    fn encode(&mut self, indices: &[usize]) -> Result<Vec<Vec<Float>>>;
}

/// Posterior means of a trained VAE, cached per image.
pub struct VaeCode<'a> {
    pub model: &'a VaeModel,
    pub params: &'a ParamStore,
    pub dataset: &'a Dataset,
    cache: HashMap<usize, Vec<Float>>,
}

impl<'a> VaeCode<'a> {
    pub fn new(model: &'a VaeModel, params: &'a ParamStore, dataset: &'a Dataset) -> Self {
        VaeCode { model, params, dataset, cache: HashMap::new() }
    }
}

impl LatentCode for VaeCode<'_> {
    fn dim(&self) -> usize {
        self.model.config.latent_dim
    }

    fn encode(&mut self, indices: &[usize]) -> Result<Vec<Vec<Float>>> {
        let mut missing: Vec<usize> = indices.iter().copied().filter(|i| !self.cache.contains_key(i)).collect();
        missing.sort_unstable();
        missing.dedup();
        let l = self.dim();
        for chunk in missing.chunks(256) {
            let x = self.dataset.batch(chunk, &[], self.model.config.bits)?;
            let mu = posterior_means(self.model, self.params, &x)?;
            for (k, i) in chunk.iter().enumerate() {
                self.cache.insert(*i, mu.data()[k * l..(k + 1) * l].to_vec());
            }
        }
        Ok(indices.iter().map(|i| self.cache[i].clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisentangleOptions {
    pub train_votes: usize,
    pub eval_votes: usize,
    /// Image pairs averaged per β-VAE vote.
    pub pairs: usize,
    /// Images per FactorVAE vote.
    pub batch: usize,
    /// Gradient-descent iterations of the β-VAE classifier.
    pub classifier_iters: usize,
    pub classifier_lr: Float,
    /// Images used to estimate per-dimension scale for FactorVAE.
    pub std_samples: usize,
}

impl Default for DisentangleOptions {
    fn default() -> Self {
        DisentangleOptions {
            train_votes: 800,
            eval_votes: 200,
            pairs: 64,
            batch: 64,
            classifier_iters: 2000,
            classifier_lr: 1.0,
            std_samples: 10_000,
        }
    }
}

impl DisentangleOptions {
    fn validate(&self) -> Result<()> {
        if self.train_votes == 0 || self.eval_votes == 0 || self.pairs == 0 || self.batch < 2 || self.std_samples < 2 {
            return Err(Error::config("metric votes, pairs and std_samples must be >= 1, batch >= 2"));
        }
        if !(self.classifier_lr > 0.0) {
            return Err(Error::config("classifier_lr must be > 0"));
        }
        Ok(())
    }
}

/// Stream offsets per metric; vote `v` uses stream `base + v`.
const BETA_STREAM: u64 = 1 << 32;
const FACTOR_STREAM: u64 = 2 << 32;
const STD_STREAM: u64 = 3 << 32;

fn require_labels(dataset: &Dataset) -> Result<()> {
    if !dataset.has_labels() {
        return Err(Error::invalid("dataset has no factor labels"));
    }
    if !dataset.is_complete() {
        return Err(Error::invalid("disentanglement metrics need every factor combination in the dataset"));
    }
    Ok(())
}

/// A random factor tuple with factor `k` pinned to `value`.
fn tuple_with(rng: &mut SdnRng, card: &[usize], k: usize, value: usize) -> Vec<usize> {
    card.iter().enumerate().map(|(j, c)| if j == k { value } else { rng.random_range(0..*c) }).collect()
}

/// Empirical-CDF transform per dimension, fitted on `train` (midranks for ties).
pub fn rank_normalize(train: &[Vec<Float>], rows: &[Vec<Float>]) -> Vec<Vec<Float>> {
    let d = train.first().map_or(0, |r| r.len());
    let n = train.len() as Float;
    let sorted: Vec<Vec<Float>> = (0..d)
        .map(|j| {
            let mut col: Vec<Float> = train.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            col
        })
        .collect();
    rows.iter()
        .map(|r| {
            (0..d)
                .map(|j| {
                    let col = &sorted[j];
                    let below = col.partition_point(|v| *v < r[j]) as Float;
                    let at_most = col.partition_point(|v| *v <= r[j]) as Float;
                    (below + at_most) / (2.0 * n)
                })
                .collect()
        })
        .collect()
}

/// Multinomial logistic regression by full-batch gradient descent from zero.
/// Returns `[classes][dim + 1]` weights, bias last.
fn fit_softmax(x: &[Vec<Float>], y: &[usize], classes: usize, iters: usize, lr: Float) -> Vec<Vec<Float>> {
    let d = x[0].len();
    let n = x.len() as Float;
    let mut w = vec![vec![0.0; d + 1]; classes];
    let mut probs = vec![0.0; classes];
    for _ in 0..iters {
        let mut grad = vec![vec![0.0; d + 1]; classes];
        for (xi, &yi) in x.iter().zip(y) {
            for (c, p) in probs.iter_mut().enumerate() {
                *p = w[c][d] + xi.iter().zip(&w[c]).map(|(a, b)| a * b).sum::<Float>();
            }
            let m = probs.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
            let z: Float = probs.iter().map(|p| (p - m).exp()).sum();
            for (c, p) in probs.iter_mut().enumerate() {
                let err = (*p - m).exp() / z - if c == yi { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[c][j] += err * xi[j];
                }
                grad[c][d] += err;
            }
        }
        for c in 0..classes {
            for j in 0..=d {
                w[c][j] -= lr * grad[c][j] / n;
            }
        }
    }
    w
}

fn predict(w: &[Vec<Float>], x: &[Float]) -> usize {
    let d = x.len();
    let mut best = (0, Float::NEG_INFINITY);
    for (c, wc) in w.iter().enumerate() {
        let s = wc[d] + x.iter().zip(wc).map(|(a, b)| a * b).sum::<Float>();
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// β-VAE score: accuracy of a linear classifier predicting the fixed factor
/// from the mean absolute code difference of image pairs sharing only it.
pub fn beta_vae_metric(code: &mut dyn LatentCode, dataset: &Dataset, opts: &DisentangleOptions, seed: u64) -> Result<Float> {
    opts.validate()?;
    require_labels(dataset)?;
    let card = dataset.spec.cardinalities();
    let dim = code.dim();
    let total = opts.train_votes + opts.eval_votes;
    let mut features = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    for v in 0..total {
        let mut rng = derived(seed, BETA_STREAM + v as u64);
        let k = rng.random_range(0..card.len());
        let value = rng.random_range(0..card[k]);
        let mut idx = Vec::with_capacity(2 * opts.pairs);
        for _ in 0..opts.pairs {
            for _ in 0..2 {
                let t = tuple_with(&mut rng, &card, k, value);
                idx.push(dataset.find(&t).expect("dataset is complete"));
            }
        }
        let z = code.encode(&idx)?;
        let mut f = vec![0.0; dim];
        for pair in z.chunks_exact(2) {
            for j in 0..dim {
                f[j] += (pair[0][j] - pair[1][j]).abs() / opts.pairs as Float;
            }
        }
        features.push(f);
        targets.push(k);
    }
    let (train_x, eval_x) = features.split_at(opts.train_votes);
    let train_n = rank_normalize(train_x, train_x);
    let eval_n = rank_normalize(train_x, eval_x);
    let w = fit_softmax(&train_n, &targets[..opts.train_votes], card.len(), opts.classifier_iters, opts.classifier_lr);
    let hits = eval_n.iter().zip(&targets[opts.train_votes..]).filter(|(x, y)| predict(&w, x) == **y).count();
    Ok(hits as Float / opts.eval_votes as Float)
}

/// FactorVAE score: majority-vote accuracy of mapping the least-varying
/// (scale-normalized) code dimension to the fixed factor.
pub fn factor_vae_metric(code: &mut dyn LatentCode, dataset: &Dataset, opts: &DisentangleOptions, seed: u64) -> Result<Float> {
    opts.validate()?;
    require_labels(dataset)?;
    let card = dataset.spec.cardinalities();
    let dim = code.dim();

    let mut rng = derived(seed, STD_STREAM);
    let n = opts.std_samples.min(dataset.len());
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..dataset.len())).collect();
    let z = code.encode(&sample)?;
    let std: Vec<Float> = (0..dim)
        .map(|j| {
            let m = z.iter().map(|r| r[j]).sum::<Float>() / n as Float;
            (z.iter().map(|r| (r[j] - m).powi(2)).sum::<Float>() / (n - 1) as Float).sqrt()
        })
        .collect();
    let kept: Vec<usize> = (0..dim).filter(|j| std[*j] > 1e-12).collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("every code dimension has zero variance".into()));
    }

    let total = opts.train_votes + opts.eval_votes;
    let mut votes = Vec::with_capacity(total);
    for v in 0..total {
        let mut rng = derived(seed, FACTOR_STREAM + v as u64);
        let k = rng.random_range(0..card.len());
        let value = rng.random_range(0..card[k]);
        let idx: Vec<usize> =
            (0..opts.batch).map(|_| dataset.find(&tuple_with(&mut rng, &card, k, value)).expect("dataset is complete")).collect();
        let z = code.encode(&idx)?;
        let b = opts.batch as Float;
        let mut best = (0, Float::INFINITY);
        for (pos, &j) in kept.iter().enumerate() {
            let col: Vec<Float> = z.iter().map(|r| r[j] / std[j]).collect();
            let m = col.iter().sum::<Float>() / b;
            let var = col.iter().map(|c| (c - m).powi(2)).sum::<Float>() / (b - 1.0);
            if var < best.1 {
                best = (pos, var);
            }
        }
        votes.push((best.0, k));
    }
    let mut counts = vec![vec![0usize; card.len()]; kept.len()];
    for &(d, k) in &votes[..opts.train_votes] {
        counts[d][k] += 1;
    }
    let classify: Vec<usize> = counts
        .iter()
        .map(|row| row.iter().enumerate().fold((0, 0), |best, (k, c)| if *c > best.1 { (k, *c) } else { best }).0)
        .collect();
    let hits = votes[opts.train_votes..].iter().filter(|(d, k)| classify[*d] == *k).count();
    Ok(hits as Float / opts.eval_votes as Float)
}
