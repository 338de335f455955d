use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{Direction, Residual, SdnConfig, SdnLayer, SpatialLayer};
use crate::numerics::{Tensor, Var};
use crate::params::{ParamStore, Session};
use crate::rng::{normal_tensor, SdnRng};
use crate::vae::observation::{log_likelihood, top_bin, ObservationModel};
use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Cnn,
    Sdn,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Cnn => "cnn",
            DecoderKind::Sdn => "sdn",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(DecoderKind::Cnn),
            "sdn" => Ok(DecoderKind::Sdn),
            _ => Err(Error::config(format!("unknown decoder {:?} (cnn|sdn)", s))),
        }
    }
}

/// Architecture of the vanilla VAE.
///
/// Encoder: one 4x4 stride-2 conv per entry of `encoder_channels` (ReLU),
/// FC `encoder_hidden` (ReLU), FC `2 * latent_dim`.
/// Decoder: FC `decoder_hidden` (ReLU), FC `base^2 * decoder_base_channels`
/// (ReLU), one 4x4 stride-2 upconv per entry of `decoder_channels` (ReLU),
/// then a final 4x4 stride-2 upconv to the observation parameters. The SDN
/// variant replaces the last entry of `decoder_channels` by an SDN layer
/// that upsamples by 2 inside its input projection.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub image_size: usize,
    pub channels: usize,
    pub bits: u32,
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub decoder_base_channels: usize,
    pub decoder_channels: Vec<usize>,
    pub decoder: DecoderKind,
    pub sdn_channels: usize,
    pub sdn_directions: Vec<Direction>,
    pub observation: ObservationModel,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            image_size: 32,
            channels: 3,
            bits: 5,
            latent_dim: 10,
            encoder_channels: vec![32, 32, 64, 64],
            encoder_hidden: 256,
            decoder_hidden: 256,
            decoder_base_channels: 256,
            decoder_channels: vec![64, 32, 32],
            decoder: DecoderKind::Cnn,
            sdn_channels: 200,
            sdn_directions: vec![Direction::BottomToTop],
            observation: ObservationModel::Logistic,
        }
    }
}

impl VaeConfig {
    /// Spatial side of the encoder's last feature map.
    pub fn encoder_side(&self) -> usize {
        self.image_size >> self.encoder_channels.len()
    }

    /// Spatial side of the decoder's first feature map.
    pub fn decoder_side(&self) -> usize {
        self.image_size >> (self.decoder_channels.len() + 1)
    }

    /// Number of pixel values per image.
    pub fn dims(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = |name: &str, v: usize| if v == 0 { Err(Error::config(format!("model.{} must be > 0", name))) } else { Ok(()) };
        nonzero("image_size", self.image_size)?;
        nonzero("channels", self.channels)?;
        nonzero("latent_dim", self.latent_dim)?;
        nonzero("encoder_hidden", self.encoder_hidden)?;
        nonzero("decoder_hidden", self.decoder_hidden)?;
        nonzero("decoder_base_channels", self.decoder_base_channels)?;
        if !(1..=16).contains(&self.bits) {
            return Err(Error::config(format!("model.bits must be in 1..=16, got {}", self.bits)));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::config("model.encoder_channels must be non-empty and positive"));
        }
        if self.decoder_channels.contains(&0) {
            return Err(Error::config("model.decoder_channels must be positive"));
        }
        let down = 1usize << self.encoder_channels.len();
        let up = 1usize << (self.decoder_channels.len() + 1);
        if self.image_size % down != 0 || self.image_size % up != 0 {
            return Err(Error::config(format!(
                "model.image_size {} must be divisible by {} (encoder) and {} (decoder)",
                self.image_size, down, up
            )));
        }
        if self.decoder == DecoderKind::Sdn {
            if self.decoder_channels.is_empty() {
                return Err(Error::config("the sdn decoder needs at least one entry in model.decoder_channels"));
            }
            nonzero("sdn_channels", self.sdn_channels)?;
            if self.sdn_directions.is_empty() {
                return Err(Error::config("model.sdn_directions must list at least one direction"));
            }
        }
        self.observation.validate()
    }
}

pub struct VaeModel {
    pub config: VaeConfig,
    sdn: Option<SdnLayer>,
}

impl VaeModel {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let sdn = match config.decoder {
            DecoderKind::Cnn => None,
            DecoderKind::Sdn => {
                let n = config.decoder_channels.len();
                let cin = if n >= 2 { config.decoder_channels[n - 2] } else { config.decoder_base_channels };
                Some(SdnLayer::new(
                    "dec.sdn",
                    SdnConfig {
                        in_channels: cin,
                        inner_channels: config.sdn_channels,
                        out_channels: config.decoder_channels[n - 1],
                        directions: config.sdn_directions.clone(),
                        residual: Residual::None,
                        upsample: Some(2),
                    },
                )?)
            }
        };
        Ok(VaeModel { config, sdn })
    }

    pub fn sdn_layer(&self) -> Option<&SdnLayer> {
        self.sdn.as_ref()
    }

    /// Input channels of every decoder upconv (including the final one) and
    /// its output channels.
    fn decoder_convs(&self) -> Vec<(String, usize, usize)> {
        let c = &self.config;
        let mut chain = vec![c.decoder_base_channels];
        chain.extend(&c.decoder_channels);
        let out_ch = c.observation.params_per_channel() * c.channels;
        let n = c.decoder_channels.len();
        let mut convs = Vec::new();
        for k in 0..n {
            if self.sdn.is_some() && k == n - 1 {
                continue;
            }
            convs.push((format!("dec.up{}", k), chain[k], chain[k + 1]));
        }
        convs.push(("dec.out".to_string(), chain[n], out_ch));
        convs
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let mut out = Vec::new();
        let mut cin = c.channels;
        for (k, &co) in c.encoder_channels.iter().enumerate() {
            out.push((format!("enc.conv{}.k", k), vec![co, cin, 4, 4]));
            out.push((format!("enc.conv{}.b", k), vec![co]));
            cin = co;
        }
        let flat = cin * c.encoder_side() * c.encoder_side();
        let base = c.decoder_side();
        for (name, i, o) in [
            ("enc.fc0", flat, c.encoder_hidden),
            ("enc.fc1", c.encoder_hidden, 2 * c.latent_dim),
            ("dec.fc0", c.latent_dim, c.decoder_hidden),
            ("dec.fc1", c.decoder_hidden, base * base * c.decoder_base_channels),
        ] {
            out.push((format!("{}.w", name), vec![i, o]));
            out.push((format!("{}.b", name), vec![o]));
        }
        for (name, i, o) in self.decoder_convs() {
            if name == "dec.out" {
                if let Some(sdn) = &self.sdn {
                    out.extend(sdn.param_shapes());
                }
            }
            out.push((format!("{}.k", name), vec![i, o, 4, 4]));
            out.push((format!("{}.b", name), vec![o]));
        }
        out
    }

    pub fn count_parameters(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Fresh parameters: He-normal weights before ReLUs, small output
    /// heads, zero biases. The SDN layer uses its own initializer.
    pub fn init(&self, rng: &mut SdnRng) -> Result<ParamStore> {
        let mut sdn_params = ParamStore::new();
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            if name.starts_with("dec.sdn.") {
                if sdn_params.is_empty() {
                    self.sdn.as_ref().expect("sdn names imply an sdn layer").init(&mut sdn_params, rng)?;
                }
                store.insert(name.clone(), sdn_params.get(&name).expect("sdn shapes match").clone())?;
                continue;
            }
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let fan_in = match (name.starts_with("dec.up") || name.starts_with("dec.out"), shape.len()) {
                    // a stride-2 4x4 upconv sums over 4 taps per input channel
                    (true, _) => shape[0] * 4,
                    (false, 4) => shape[1] * 16,
                    _ => shape[0],
                };
                let gain = if name == "enc.fc1.w" || name == "dec.out.k" { 0.1 } else { 2.0 };
                normal_tensor(rng, &shape, (gain / fan_in as Float).sqrt())
            };
            store.insert(name, t)?;
        }
        Ok(store)
    }

    /// Bins `[B, C, H, W]` to network input in `[-1, 1]`.
    pub fn normalize_input(&self, x_bins: &Tensor) -> Tensor {
        let top = top_bin(self.config.bits);
        x_bins.map(|v| 2.0 * v / top - 1.0)
    }

    /// Posterior mean and log-std, each `[B, latent]`.
    pub fn encode(&self, s: &mut Session<'_>, x_bins: &Tensor) -> Result<(Var, Var)> {
        let c = &self.config;
        let [b, ch, h, w] = x_bins.dims4()?;
        if ch != c.channels || h != c.image_size || w != c.image_size {
            return Err(Error::shape(
                "encode",
                format!("input {:?} does not match a {}x{}x{} model", x_bins.shape(), c.channels, c.image_size, c.image_size),
            ));
        }
        let mut h = s.graph.constant(self.normalize_input(x_bins));
        for k in 0..c.encoder_channels.len() {
            let kw = s.param(&format!("enc.conv{}.k", k))?;
            let kb = s.param(&format!("enc.conv{}.b", k))?;
            let y = s.graph.conv2d(h, kw, kb, 2, 1)?;
            h = s.graph.relu(y);
        }
        let flat: usize = s.graph.shape(h)[1..].iter().product();
        h = s.graph.reshape(h, &[b, flat])?;
        h = self.dense(s, h, "enc.fc0", true)?;
        let out = self.dense(s, h, "enc.fc1", false)?;
        let mu = s.graph.slice(out, 1, 0, c.latent_dim)?;
        let log_sigma = s.graph.slice(out, 1, c.latent_dim, c.latent_dim)?;
        Ok((mu, log_sigma))
    }

    fn dense(&self, s: &mut Session<'_>, x: Var, name: &str, relu: bool) -> Result<Var> {
        let w = s.param(&format!("{}.w", name))?;
        let b = s.param(&format!("{}.b", name))?;
        let y = s.graph.matmul_channels(x, w, b)?;
        Ok(if relu { s.graph.relu(y) } else { y })
    }

    /// Observation parameters `[B, P*C, H, W]` for latents `z [B, latent]`.
    pub fn decode(&self, s: &mut Session<'_>, z: Var) -> Result<Var> {
        let c = &self.config;
        let b = s.graph.shape(z)[0];
        let mut h = self.dense(s, z, "dec.fc0", true)?;
        h = self.dense(s, h, "dec.fc1", true)?;
        let base = c.decoder_side();
        h = s.graph.reshape(h, &[b, c.decoder_base_channels, base, base])?;
        for (name, _, _) in self.decoder_convs() {
            if name == "dec.out" {
                if let Some(sdn) = &self.sdn {
                    h = sdn.forward(s, h)?;
                }
            }
            let k = s.param(&format!("{}.k", name))?;
            let kb = s.param(&format!("{}.b", name))?;
            h = s.graph.conv2d_transposed(h, k, kb, 2)?;
            if name != "dec.out" {
                h = s.graph.relu(h);
            }
        }
        Ok(h)
    }

    /// Per-example `log p(x | params)`, `[B]`.
    pub fn log_likelihood(&self, s: &mut Session<'_>, params: Var, x_bins: &Tensor) -> Result<Var> {
        log_likelihood(&mut s.graph, self.config.observation, params, x_bins, self.config.bits)
    }
}
