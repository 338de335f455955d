//! Evidence lower bound, its β / free-bits variants, and the importance
//! weighted bound.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::params::{ParamStore, Session};
use crate::rng::{normal_tensor, SdnRng};
use crate::vae::model::VaeModel;
use crate::Float;

/// How the KL term is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlEstimator {
    /// Closed-form Gaussian KL per latent dimension.
    Analytic,
    /// `log q(z|x) - log p(z)` at the reparameterized sample, per dimension.
    SingleSample,
}

/// `z = mu + exp(log_sigma) * eps`.
pub fn reparameterize(g: &mut Graph, mu: Var, log_sigma: Var, eps: &Tensor) -> Result<Var> {
    if g.shape(mu) != eps.shape() {
        return Err(Error::shape("reparameterize", format!("mu {:?} vs eps {:?}", g.shape(mu), eps.shape())));
    }
    let sigma = g.exp(log_sigma);
    let e = g.constant(eps.clone());
    let noise = g.mul(sigma, e)?;
    g.add(mu, noise)
}

/// Per-dimension KL `[B, L]`.
fn kl_per_dim(g: &mut Graph, mu: Var, log_sigma: Var, eps: &Tensor, z: Var, estimator: KlEstimator) -> Result<Var> {
    match estimator {
        KlEstimator::Analytic => {
            // 0.5 (mu^2 + sigma^2 - 1) - log sigma
            let m2 = g.square(mu);
            let two_ls = g.scale(log_sigma, 2.0);
            let s2 = g.exp(two_ls);
            let sum = g.add(m2, s2)?;
            let half = g.scale(sum, 0.5);
            let half = g.add_scalar(half, -0.5);
            g.sub(half, log_sigma)
        }
        KlEstimator::SingleSample => {
            // log q - log p = -0.5 eps^2 - log sigma + 0.5 z^2
            let z2 = g.square(z);
            let half = g.scale(z2, 0.5);
            let e2 = g.constant(eps.map(|e| -0.5 * e * e));
            let a = g.add(half, e2)?;
            g.sub(a, log_sigma)
        }
    }
}

/// Graph handles of one batch's objective terms.
pub struct ElboVars {
    /// Scalar loss to minimize: `-mean(recon - beta * kl_penalized)`.
    pub loss: Var,
    /// Per-example `log p(x|z)`, `[B]`.
    pub recon: Var,
    /// Per-example raw KL, `[B]`.
    pub kl: Var,
    /// Per-example KL after the free-bits clamp, `[B]`.
    pub kl_penalized: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboOptions {
    pub beta: Float,
    /// Per-dimension KL floor in nats.
    pub free_bits: Float,
    pub estimator: KlEstimator,
}

impl ElboOptions {
    /// `beta = 1`, no free bits, analytic KL.
    pub fn standard() -> Self {
        ElboOptions { beta: 1.0, free_bits: 0.0, estimator: KlEstimator::Analytic }
    }
}

/// Builds the objective of `x_bins [B, C, H, W]` with posterior noise `eps [B, L]`.
pub fn elbo_graph(model: &VaeModel, s: &mut Session<'_>, x_bins: &Tensor, eps: &Tensor, opts: ElboOptions) -> Result<ElboVars> {
    if !(opts.beta >= 0.0) || !(opts.free_bits >= 0.0) {
        return Err(Error::invalid(format!("beta and free_bits must be >= 0, got {} and {}", opts.beta, opts.free_bits)));
    }
    let (mu, log_sigma) = model.encode(s, x_bins)?;
    let z = reparameterize(&mut s.graph, mu, log_sigma, eps)?;
    let params = model.decode(s, z)?;
    let recon = model.log_likelihood(s, params, x_bins)?;
    let g = &mut s.graph;
    let kl_dims = kl_per_dim(g, mu, log_sigma, eps, z, opts.estimator)?;
    let kl = g.sum_axis(kl_dims, 1)?;
    let kl_penalized = if opts.free_bits > 0.0 {
        let clamped = g.max_scalar(kl_dims, opts.free_bits);
        g.sum_axis(clamped, 1)?
    } else {
        kl
    };
    let weighted = g.scale(kl_penalized, opts.beta);
    let objective = g.sub(recon, weighted)?;
    let mean = g.mean(objective);
    let loss = g.neg(mean);
    Ok(ElboVars { loss, recon, kl, kl_penalized })
}

/// Per-example values of one evaluation, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub beta: Float,
    pub recon: Vec<Float>,
    pub kl: Vec<Float>,
    pub kl_penalized: Vec<Float>,
}

impl ElboTerms {
    /// `recon - beta * kl` per example.
    pub fn elbo(&self) -> Vec<Float> {
        self.recon.iter().zip(&self.kl).map(|(r, k)| r - self.beta * k).collect()
    }

    /// `recon - beta * kl_penalized` per example.
    pub fn objective(&self) -> Vec<Float> {
        self.recon.iter().zip(&self.kl_penalized).map(|(r, k)| r - self.beta * k).collect()
    }
}

pub fn mean(v: &[Float]) -> Float {
    v.iter().sum::<Float>() / v.len() as Float
}

/// Forward-only evaluation of the objective terms.
pub fn elbo(model: &VaeModel, params: &ParamStore, x_bins: &Tensor, eps: &Tensor, opts: ElboOptions) -> Result<ElboTerms> {
    let mut s = Session::inference(params);
    let v = elbo_graph(model, &mut s, x_bins, eps, opts)?;
    let g = &s.graph;
    Ok(ElboTerms {
        beta: opts.beta,
        recon: g.value(v.recon).data().to_vec(),
        kl: g.value(v.kl).data().to_vec(),
        kl_penalized: g.value(v.kl_penalized).data().to_vec(),
    })
}

/// Draws the posterior noise for `batch` examples.
pub fn draw_eps(rng: &mut SdnRng, batch: usize, latent: usize) -> Tensor {
    normal_tensor(rng, &[batch, latent], 1.0)
}

/// Importance-weighted bound per example with `k` samples:
/// `logsumexp_k(log p(x|z_k) + log p(z_k) - log q(z_k|x)) - log k`.
///
/// `eps` is `[B, K, L]`; samples are decoded `chunk` at a time.
pub fn iwae_bound(model: &VaeModel, params: &ParamStore, x_bins: &Tensor, eps: &Tensor, chunk: usize) -> Result<Vec<Float>> {
    let [b, c, h, w] = x_bins.dims4()?;
    let l = model.config.latent_dim;
    if eps.rank() != 3 || eps.shape()[0] != b || eps.shape()[2] != l || eps.shape()[1] == 0 {
        return Err(Error::shape("iwae_bound", format!("eps {:?} for batch {} and latent {}", eps.shape(), b, l)));
    }
    let k = eps.shape()[1];
    let chunk = chunk.max(1);
    let pix = c * h * w;
    let mut out = Vec::with_capacity(b);
    for n in 0..b {
        let image = x_bins.slice_axis(0, n, 1)?;
        let mut s = Session::inference(params);
        let (mu, log_sigma) = model.encode(&mut s, &image)?;
        let (mu_v, ls_v) = (s.graph.value(mu).clone(), s.graph.value(log_sigma).clone());
        let mut log_w = Vec::with_capacity(k);
        let mut start = 0;
        while start < k {
            let m = chunk.min(k - start);
            let mut s = Session::inference(params);
            let e = Tensor::new(&[m, l], eps.data()[(n * k + start) * l..(n * k + start + m) * l].to_vec())?;
            let mu_rep = Tensor::from_fn(&[m, l], |i| mu_v.data()[i % l]);
            let ls_rep = Tensor::from_fn(&[m, l], |i| ls_v.data()[i % l]);
            let mu = s.graph.constant(mu_rep);
            let ls = s.graph.constant(ls_rep);
            let z = reparameterize(&mut s.graph, mu, ls, &e)?;
            let p = model.decode(&mut s, z)?;
            let xs = Tensor::from_fn(&[m, c, h, w], |i| image.data()[i % pix]);
            let recon = model.log_likelihood(&mut s, p, &xs)?;
            let kl_dims = kl_per_dim(&mut s.graph, mu, ls, &e, z, KlEstimator::SingleSample)?;
            let kl = s.graph.sum_axis(kl_dims, 1)?;
            let lw = s.graph.sub(recon, kl)?;
            log_w.extend_from_slice(s.graph.value(lw).data());
            start += m;
        }
        let mx = log_w.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
        let lse = mx + log_w.iter().map(|v| (v - mx).exp()).sum::<Float>().ln();
        out.push(lse - (k as Float).ln());
    }
    Ok(out)
}
