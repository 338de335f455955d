use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::{ParamStore, Session};
use crate::rng::{normal_tensor, SdnRng};
use crate::vae::model::VaeModel;
use crate::vae::observation::pixel_dists;
use crate::Float;

/// How decoded pixel distributions become bins.
pub enum PixelChoice<'r> {
    /// Most probable bin.
    Mode,
    /// A draw from each pixel's distribution.
    Sample(&'r mut SdnRng),
}

/// Decodes latents `z [N, L]` into bin images `[N, C, H, W]`.
pub fn decode_images(model: &VaeModel, params: &ParamStore, z: &Tensor, choice: PixelChoice<'_>) -> Result<Tensor> {
    let mut s = Session::inference(params);
    let zv = s.graph.constant(z.clone());
    let p = model.decode(&mut s, zv)?;
    let out = s.graph.value(p);
    let [n, _, h, w] = out.dims4()?;
    let c = &model.config;
    let dists = pixel_dists(c.observation, out, c.channels, c.bits)?;
    let bins: Vec<Float> = match choice {
        PixelChoice::Mode => dists.iter().map(|d| d.mode(c.bits) as Float).collect(),
        PixelChoice::Sample(rng) => dists.iter().map(|d| d.sample(c.bits, rng) as Float).collect(),
    };
    Tensor::new(&[n, c.channels, h, w], bins)
}

/// `n` images decoded from `z ~ N(0, temperature^2 I)`.
pub fn sample(model: &VaeModel, params: &ParamStore, rng: &mut SdnRng, n: usize, temperature: Float, random_pixels: bool) -> Result<Tensor> {
    if !(temperature >= 0.0) {
        return Err(Error::invalid(format!("temperature must be >= 0, got {}", temperature)));
    }
    let z = normal_tensor(rng, &[n, model.config.latent_dim], 1.0).map(|v| v * temperature);
    let choice = if random_pixels { PixelChoice::Sample(rng) } else { PixelChoice::Mode };
    decode_images(model, params, &z, choice)
}

/// Posterior means `[N, L]` of bin images.
pub fn posterior_means(model: &VaeModel, params: &ParamStore, x_bins: &Tensor) -> Result<Tensor> {
    let mut s = Session::inference(params);
    let (mu, _) = model.encode(&mut s, x_bins)?;
    Ok(s.graph.value(mu).clone())
}

/// Latents on the segment between the posterior means of `a` and `b`
/// (each `[1, C, H, W]`) at `steps` evenly spaced points, both ends included.
pub fn interpolation_latents(model: &VaeModel, params: &ParamStore, a: &Tensor, b: &Tensor, steps: usize) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::invalid(format!("interpolation needs at least 2 steps, got {}", steps)));
    }
    let both = Tensor::stack_batch(&[a.clone(), b.clone()])?;
    let means = posterior_means(model, params, &both)?;
    let l = model.config.latent_dim;
    let (za, zb) = (&means.data()[..l], &means.data()[l..]);
    Ok(Tensor::from_fn(&[steps, l], |i| {
        let t = (i / l) as Float / (steps - 1) as Float;
        (1.0 - t) * za[i % l] + t * zb[i % l]
    }))
}

/// Mode images along the latent segment from `a` to `b`; the ends are the
/// reconstructions of `a` and `b`.
pub fn interpolate(model: &VaeModel, params: &ParamStore, a: &Tensor, b: &Tensor, steps: usize) -> Result<Tensor> {
    let z = interpolation_latents(model, params, a, b, steps)?;
    decode_images(model, params, &z, PixelChoice::Mode)
}

/// Mode reconstruction through the posterior mean.
pub fn reconstruct(model: &VaeModel, params: &ParamStore, x_bins: &Tensor) -> Result<Tensor> {
    let z = posterior_means(model, params, x_bins)?;
    decode_images(model, params, &z, PixelChoice::Mode)
}
