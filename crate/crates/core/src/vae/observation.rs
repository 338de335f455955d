//! Pixel likelihoods over integer bins `0..=2^bits - 1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Backward, Graph, Tensor, Var};
use crate::rng::{normal, SdnRng};
use crate::Float;

/// Floor applied to every raw log-scale.
pub const LOG_SCALE_FLOOR: Float = -7.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservationModel {
    /// Discretized logistic: per pixel `(mu, log s)`.
    Logistic,
    /// Mixture of `components` discretized logistics; channels are independent.
    LogisticMixture { components: usize },
    /// Continuous Gaussian density at the bin value with a fixed std in bin
    /// units. Not normalized over bins; for debugging only.
    Gaussian { std: Float },
}

impl ObservationModel {
    /// Decoder output channels needed per image channel.
    pub fn params_per_channel(&self) -> usize {
        match self {
            ObservationModel::Logistic => 2,
            ObservationModel::LogisticMixture { components } => 3 * components,
            ObservationModel::Gaussian { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ObservationModel::LogisticMixture { components: 0 } => Err(Error::config("mixture needs at least one component")),
            ObservationModel::Gaussian { std } if !(std > 0.0) => Err(Error::config("gaussian std must be > 0")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ObservationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationModel::Logistic => f.write_str("logistic"),
            ObservationModel::LogisticMixture { .. } => f.write_str("mixture"),
            ObservationModel::Gaussian { .. } => f.write_str("gaussian"),
        }
    }
}

/// Parses the tag only; component count and std come from separate keys.
impl FromStr for ObservationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ObservationModel::Logistic),
            "mixture" => Ok(ObservationModel::LogisticMixture { components: 5 }),
            "gaussian" => Ok(ObservationModel::Gaussian { std: 1.0 }),
            _ => Err(Error::config(format!("unknown observation model {:?} (logistic|mixture|gaussian)", s))),
        }
    }
}

pub fn top_bin(bits: u32) -> Float {
    ((1u64 << bits) - 1) as Float
}

/// Location in bin units from a raw decoder output in roughly `[-1, 1]`.
pub fn location_from_raw(raw: Float, bits: u32) -> Float {
    top_bin(bits) / 2.0 * (raw + 1.0)
}

/// Log-mass of bin `x` under a logistic with location `mu` and log-scale
/// `log_s`, all in bin units. Bin 0 takes the left tail and the top bin
/// the right tail.
pub fn dl_log_prob(x: Float, mu: Float, log_s: Float, top: Float) -> Float {
    let u = (-log_s).exp();
    let c = x - mu;
    let a = (c + 0.5) * u;
    let b = (c - 0.5) * u;
    if x <= 0.0 {
        -softplus(-a)
    } else if x >= top {
        -softplus(b)
    } else {
        // log(sigmoid(a) - sigmoid(b)) = log sigmoid(a) + log sigmoid(-b) + log(1 - e^-u)
        -softplus(-a) - softplus(b) + (-(-u).exp_m1()).ln()
    }
}

/// `(d/d mu, d/d log_s)` of [`dl_log_prob`].
fn dl_grad(x: Float, mu: Float, log_s: Float, top: Float) -> (Float, Float) {
    let u = (-log_s).exp();
    let c = x - mu;
    let a = (c + 0.5) * u;
    let b = (c - 0.5) * u;
    if x <= 0.0 {
        let da = sigmoid(-a);
        (-u * da, -a * da)
    } else if x >= top {
        let db = sigmoid(b);
        (u * db, b * db)
    } else {
        let da = sigmoid(-a);
        let db = sigmoid(b);
        (-u * (da - db), -a * da + b * db - u / u.exp_m1())
    }
}

fn check_bins(x: &Tensor, bits: u32) -> Result<()> {
    let top = top_bin(bits);
    match x.data().iter().find(|v| !(**v >= 0.0 && **v <= top && v.fract() == 0.0)) {
        Some(v) => Err(Error::invalid(format!("pixel bin {} outside 0..={}", v, top))),
        None => Ok(()),
    }
}

struct DiscretizedLogisticRule {
    x: Tensor,
    top: Float,
}

impl Backward for DiscretizedLogisticRule {
    fn name(&self) -> &'static str {
        "discretized_logistic"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (mu, ls) = (inputs[0].data(), inputs[1].data());
        let mut dmu = vec![0.0; mu.len()];
        let mut dls = vec![0.0; mu.len()];
        for (k, g) in grad.data().iter().enumerate() {
            let (a, b) = dl_grad(self.x.data()[k], mu[k], ls[k], self.top);
            dmu[k] = g * a;
            dls[k] = g * b;
        }
        let shape = grad.shape();
        vec![Some(Tensor::new(shape, dmu).expect("same shape")), Some(Tensor::new(shape, dls).expect("same shape"))]
    }
}

/// Elementwise discretized-logistic log-mass of the constant bins `x`.
pub fn discretized_logistic(g: &mut Graph, x: &Tensor, mu: Var, log_s: Var, bits: u32) -> Result<Var> {
    check_bins(x, bits)?;
    if g.shape(mu) != x.shape() || g.shape(log_s) != x.shape() {
        return Err(Error::shape(
            "discretized_logistic",
            format!("x {:?}, mu {:?}, log_s {:?}", x.shape(), g.shape(mu), g.shape(log_s)),
        ));
    }
    let top = top_bin(bits);
    let (m, l) = (g.value(mu).data(), g.value(log_s).data());
    let out = x.data().iter().zip(m.iter().zip(l)).map(|(xv, (mv, lv))| dl_log_prob(*xv, *mv, *lv, top)).collect();
    let value = Tensor::new(x.shape(), out)?;
    Ok(g.record(value, &[mu, log_s], DiscretizedLogisticRule { x: x.clone(), top }))
}

/// Per-example log-likelihood `[B]` of bins `x [B, C, H, W]` given decoder
/// output `params [B, P*C, H, W]` with the parameter kinds stacked as
/// channel blocks of size `C`.
pub fn log_likelihood(g: &mut Graph, model: ObservationModel, params: Var, x: &Tensor, bits: u32) -> Result<Var> {
    let [b, c, h, w] = x.dims4()?;
    let per = model.params_per_channel();
    let expect = [b, per * c, h, w];
    if g.shape(params) != expect {
        return Err(Error::shape("log_likelihood", format!("params {:?}, expected {:?}", g.shape(params), expect)));
    }
    let p = c * h * w;
    let flat_x = x.clone().reshape(&[b, p])?;
    let per_pixel = match model {
        ObservationModel::Logistic => {
            let parts = g.reshape(params, &[b, 2, p])?;
            let (mu, ls) = location_and_scale(g, parts, &[b, p], bits)?;
            discretized_logistic(g, &flat_x, mu, ls, bits)?
        }
        ObservationModel::LogisticMixture { components: k } => {
            let parts = g.reshape(params, &[b, 3, k, p])?;
            let logits = g.slice(parts, 1, 0, 1)?;
            let logits = g.reshape(logits, &[b, k, p])?;
            let log_pi = g.log_softmax(logits, 1)?;
            let rest = g.slice(parts, 1, 1, 2)?;
            let rest = g.reshape(rest, &[b, 2, k * p])?;
            let (mu, ls) = location_and_scale(g, rest, &[b, k, p], bits)?;
            let xk = Tensor::from_fn(&[b, k, p], |i| flat_x.data()[(i / (k * p)) * p + i % p]);
            let lp = discretized_logistic(g, &xk, mu, ls, bits)?;
            let joint = g.add(log_pi, lp)?;
            g.logsumexp(joint, 1)?
        }
        ObservationModel::Gaussian { std } => {
            check_bins(&flat_x, bits)?;
            let raw = g.reshape(params, &[b, p])?;
            let mu = affine_location(g, raw, bits);
            let xc = g.constant(flat_x);
            let d = g.sub(xc, mu)?;
            let sq = g.square(d);
            let q = g.scale(sq, -0.5 / (std * std));
            g.add_scalar(q, -std.ln() - 0.5 * (2.0 * std::f64::consts::PI as Float).ln())
        }
    };
    g.sum_axis(per_pixel, 1)
}

fn affine_location(g: &mut Graph, raw: Var, bits: u32) -> Var {
    let half = top_bin(bits) / 2.0;
    let shifted = g.add_scalar(raw, 1.0);
    g.scale(shifted, half)
}

/// Splits `[B, 2, ...]` into location (bin units) and floored log-scale,
/// both reshaped to `shape`.
fn location_and_scale(g: &mut Graph, parts: Var, shape: &[usize], bits: u32) -> Result<(Var, Var)> {
    let raw_mu = g.slice(parts, 1, 0, 1)?;
    let raw_mu = g.reshape(raw_mu, shape)?;
    let raw_ls = g.slice(parts, 1, 1, 1)?;
    let raw_ls = g.reshape(raw_ls, shape)?;
    let mu = affine_location(g, raw_mu, bits);
    let ls = g.max_scalar(raw_ls, LOG_SCALE_FLOOR);
    Ok((mu, ls))
}

/// One pixel's distribution in value form.
#[derive(Clone, Debug)]
pub enum PixelDist {
    /// `(log weight, location, log-scale)` per component.
    Mixture(Vec<(Float, Float, Float)>),
    Gaussian { mu: Float, std: Float },
}

impl PixelDist {
    pub fn log_prob(&self, x: Float, bits: u32) -> Float {
        let top = top_bin(bits);
        match self {
            PixelDist::Mixture(parts) => {
                let terms: Vec<Float> = parts.iter().map(|(lw, mu, ls)| lw + dl_log_prob(x, *mu, *ls, top)).collect();
                let m = terms.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
                m + terms.iter().map(|t| (t - m).exp()).sum::<Float>().ln()
            }
            PixelDist::Gaussian { mu, std } => {
                let d = (x - mu) / std;
                -0.5 * d * d - std.ln() - 0.5 * (2.0 * std::f64::consts::PI as Float).ln()
            }
        }
    }

    /// Most probable bin; ties go to the lower bin.
    pub fn mode(&self, bits: u32) -> u16 {
        let top = top_bin(bits);
        match self {
            PixelDist::Gaussian { mu, .. } => mu.round().clamp(0.0, top) as u16,
            PixelDist::Mixture(_) => {
                let mut best = (0u16, Float::NEG_INFINITY);
                for v in 0..=top as u16 {
                    let lp = self.log_prob(v as Float, bits);
                    if lp > best.1 {
                        best = (v, lp);
                    }
                }
                best.0
            }
        }
    }

    pub fn sample(&self, bits: u32, rng: &mut SdnRng) -> u16 {
        let top = top_bin(bits);
        let v = match self {
            PixelDist::Gaussian { mu, std } => mu + std * normal(rng),
            PixelDist::Mixture(parts) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = parts.len() - 1;
                for (k, (lw, _, _)) in parts.iter().enumerate() {
                    acc += lw.exp();
                    if (u as Float) < acc {
                        pick = k;
                        break;
                    }
                }
                let (_, mu, ls) = parts[pick];
                let p: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                let p = p as Float;
                mu + ls.exp() * (p.ln() - (1.0 - p).ln())
            }
        };
        v.round().clamp(0.0, top) as u16
    }
}

/// Value-form distributions for every pixel of `params [B, P*C, H, W]`,
/// in `[B, C, H, W]` order.
pub fn pixel_dists(model: ObservationModel, params: &Tensor, channels: usize, bits: u32) -> Result<Vec<PixelDist>> {
    let [b, pc, h, w] = params.dims4()?;
    let per = model.params_per_channel();
    if pc != per * channels {
        return Err(Error::shape("pixel_dists", format!("{} parameter channels for {} x {}", pc, per, channels)));
    }
    let hw = h * w;
    let p = channels * hw;
    let d = params.data();
    let at = |n: usize, block: usize, i: usize| d[(n * per + block) * p + i];
    let mut out = Vec::with_capacity(b * p);
    for n in 0..b {
        for i in 0..p {
            out.push(match model {
                ObservationModel::Logistic => {
                    PixelDist::Mixture(vec![(0.0, location_from_raw(at(n, 0, i), bits), at(n, 1, i).max(LOG_SCALE_FLOOR))])
                }
                ObservationModel::LogisticMixture { components: k } => {
                    let logits: Vec<Float> = (0..k).map(|c| at(n, c, i)).collect();
                    let m = logits.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
                    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<Float>().ln();
                    PixelDist::Mixture(
                        (0..k)
                            .map(|c| (logits[c] - lse, location_from_raw(at(n, k + c, i), bits), at(n, 2 * k + c, i).max(LOG_SCALE_FLOOR)))
                            .collect(),
                    )
                }
                ObservationModel::Gaussian { std } => PixelDist::Gaussian { mu: location_from_raw(at(n, 0, i), bits), std },
            });
        }
    }
    Ok(out)
}
