//! Run configuration: a sectioned `key = value` text file.
//!
//! ```text
//! # comment
//! [train]
//! lr = 0.001
//! ```
//!
//! Every key must appear exactly once; unknown keys are rejected. The
//! digest is the SHA-256 of the canonical rendering, so formatting and
//! comments in the source file do not change it.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::Direction;
use crate::metrics::DisentangleOptions;
use crate::train::TrainConfig;
use crate::vae::{ObservationModel, VaeConfig};
use crate::Float;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub path: String,
    /// Images held out for evaluation; 0 trains on everything.
    pub holdout: usize,
    pub split_seed: u64,
    pub flip: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: "data/scenes.sdnd".into(), holdout: 0, split_seed: 0, flip: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: VaeConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub metrics: DisentangleOptions,
    /// Mixture size and Gaussian std, kept while another observation model
    /// is selected so that every key round-trips.
    obs_knobs: (usize, Float),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: VaeConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            metrics: DisentangleOptions::default(),
            obs_knobs: (5, 1.0),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, ty: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("{}: cannot parse {:?} as {}", key, value, ty)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{}: expected true or false, got {:?}", key, value))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str, ty: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim(), ty)).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn short(d: Direction) -> &'static str {
    match d {
        Direction::BottomToTop => "bt",
        Direction::RightToLeft => "rl",
        Direction::LeftToRight => "lr",
        Direction::TopToBottom => "tb",
    }
}

/// Every key in canonical order with its type name.
pub const SCHEMA: &[(&str, &str)] = &[
    ("model.image_size", "integer"),
    ("model.channels", "integer"),
    ("model.bits", "integer"),
    ("model.latent_dim", "integer"),
    ("model.encoder_channels", "integer list"),
    ("model.encoder_hidden", "integer"),
    ("model.decoder_hidden", "integer"),
    ("model.decoder_base_channels", "integer"),
    ("model.decoder_channels", "integer list"),
    ("model.decoder", "cnn|sdn"),
    ("model.sdn_channels", "integer"),
    ("model.sdn_directions", "direction list (bt,rl,lr,tb)"),
    ("model.observation", "logistic|mixture|gaussian"),
    ("model.mixture_components", "integer"),
    ("model.gaussian_std", "float"),
    ("data.path", "path"),
    ("data.holdout", "integer"),
    ("data.split_seed", "integer"),
    ("data.flip", "bool"),
    ("train.optimizer", "adamax|adam"),
    ("train.lr", "float"),
    ("train.lr_decay", "float"),
    ("train.batch_size", "integer"),
    ("train.total_steps", "integer"),
    ("train.beta", "float"),
    ("train.beta_anneal_steps", "integer"),
    ("train.free_bits", "float"),
    ("train.ema_decay", "float"),
    ("train.seed", "integer"),
    ("train.eval_every", "integer"),
    ("train.checkpoint_every", "integer"),
    ("train.clip_grad", "bool"),
    ("train.clip_norm", "float"),
    ("train.log_wall_time", "bool"),
    ("metrics.train_votes", "integer"),
    ("metrics.eval_votes", "integer"),
    ("metrics.pairs", "integer"),
    ("metrics.batch", "integer"),
    ("metrics.classifier_iters", "integer"),
    ("metrics.classifier_lr", "float"),
    ("metrics.std_samples", "integer"),
];

fn type_of(key: &str) -> Option<&'static str> {
    SCHEMA.iter().find(|(k, _)| *k == key).map(|(_, t)| *t)
}

impl RunConfig {
    /// Sets one `section.key`, checking its type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ty = type_of(key).ok_or_else(|| Error::config(format!("unknown key {}", key)))?;
        let v = value.trim();
        let (k, s) = self.knobs();
        let m = &mut self.model;
        let t = &mut self.train;
        let x = &mut self.metrics;
        match key {
            "model.image_size" => m.image_size = parse(key, v, ty)?,
            "model.channels" => m.channels = parse(key, v, ty)?,
            "model.bits" => m.bits = parse(key, v, ty)?,
            "model.latent_dim" => m.latent_dim = parse(key, v, ty)?,
            "model.encoder_channels" => m.encoder_channels = parse_list(key, v, ty)?,
            "model.encoder_hidden" => m.encoder_hidden = parse(key, v, ty)?,
            "model.decoder_hidden" => m.decoder_hidden = parse(key, v, ty)?,
            "model.decoder_base_channels" => m.decoder_base_channels = parse(key, v, ty)?,
            "model.decoder_channels" => m.decoder_channels = parse_list(key, v, ty)?,
            "model.decoder" => m.decoder = v.parse()?,
            "model.sdn_channels" => m.sdn_channels = parse(key, v, ty)?,
            "model.sdn_directions" => {
                m.sdn_directions = v.split(',').map(|d| d.trim().parse()).collect::<Result<_>>()?;
            }
            "model.observation" => {
                m.observation = match v.parse::<ObservationModel>()? {
                    ObservationModel::LogisticMixture { .. } => ObservationModel::LogisticMixture { components: k },
                    ObservationModel::Gaussian { .. } => ObservationModel::Gaussian { std: s },
                    o => o,
                };
            }
            "model.mixture_components" => {
                let k: usize = parse(key, v, ty)?;
                self.obs_knobs.0 = k;
                if let ObservationModel::LogisticMixture { components } = &mut m.observation {
                    *components = k;
                }
            }
            "model.gaussian_std" => {
                let s: Float = parse(key, v, ty)?;
                self.obs_knobs.1 = s;
                if let ObservationModel::Gaussian { std } = &mut m.observation {
                    *std = s;
                }
            }
            "data.path" => self.data.path = v.to_string(),
            "data.holdout" => self.data.holdout = parse(key, v, ty)?,
            "data.split_seed" => self.data.split_seed = parse(key, v, ty)?,
            "data.flip" => self.data.flip = parse_bool(key, v)?,
            "train.optimizer" => t.optimizer = v.parse()?,
            "train.lr" => t.lr = parse(key, v, ty)?,
            "train.lr_decay" => t.lr_decay = parse(key, v, ty)?,
            "train.batch_size" => t.batch_size = parse(key, v, ty)?,
            "train.total_steps" => t.total_steps = parse(key, v, ty)?,
            "train.beta" => t.beta = parse(key, v, ty)?,
            "train.beta_anneal_steps" => t.beta_anneal_steps = parse(key, v, ty)?,
            "train.free_bits" => t.free_bits = parse(key, v, ty)?,
            "train.ema_decay" => t.ema_decay = parse(key, v, ty)?,
            "train.seed" => t.seed = parse(key, v, ty)?,
            "train.eval_every" => t.eval_every = parse(key, v, ty)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, v, ty)?,
            "train.clip_grad" => t.clip_grad = parse_bool(key, v)?,
            "train.clip_norm" => t.clip_norm = parse(key, v, ty)?,
            "train.log_wall_time" => t.log_wall_time = parse_bool(key, v)?,
            "metrics.train_votes" => x.train_votes = parse(key, v, ty)?,
            "metrics.eval_votes" => x.eval_votes = parse(key, v, ty)?,
            "metrics.pairs" => x.pairs = parse(key, v, ty)?,
            "metrics.batch" => x.batch = parse(key, v, ty)?,
            "metrics.classifier_iters" => x.classifier_iters = parse(key, v, ty)?,
            "metrics.classifier_lr" => x.classifier_lr = parse(key, v, ty)?,
            "metrics.std_samples" => x.std_samples = parse(key, v, ty)?,
            _ => unreachable!("schema and setter agree"),
        }
        Ok(())
    }

    /// Current mixture size and Gaussian std, whichever model is active.
    fn knobs(&self) -> (usize, Float) {
        match self.model.observation {
            ObservationModel::LogisticMixture { components } => (components, self.obs_knobs.1),
            ObservationModel::Gaussian { std } => (self.obs_knobs.0, std),
            ObservationModel::Logistic => self.obs_knobs,
        }
    }

    fn get(&self, key: &str) -> String {
        let (m, d, t, x) = (&self.model, &self.data, &self.train, &self.metrics);
        let (k, s) = self.knobs();
        match key {
            "model.image_size" => m.image_size.to_string(),
            "model.channels" => m.channels.to_string(),
            "model.bits" => m.bits.to_string(),
            "model.latent_dim" => m.latent_dim.to_string(),
            "model.encoder_channels" => join(&m.encoder_channels),
            "model.encoder_hidden" => m.encoder_hidden.to_string(),
            "model.decoder_hidden" => m.decoder_hidden.to_string(),
            "model.decoder_base_channels" => m.decoder_base_channels.to_string(),
            "model.decoder_channels" => join(&m.decoder_channels),
            "model.decoder" => m.decoder.to_string(),
            "model.sdn_channels" => m.sdn_channels.to_string(),
            "model.sdn_directions" => m.sdn_directions.iter().map(|d| short(*d)).collect::<Vec<_>>().join(","),
            "model.observation" => m.observation.to_string(),
            "model.mixture_components" => k.to_string(),
            "model.gaussian_std" => s.to_string(),
            "data.path" => d.path.clone(),
            "data.holdout" => d.holdout.to_string(),
            "data.split_seed" => d.split_seed.to_string(),
            "data.flip" => d.flip.to_string(),
            "train.optimizer" => t.optimizer.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.lr_decay" => t.lr_decay.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.total_steps" => t.total_steps.to_string(),
            "train.beta" => t.beta.to_string(),
            "train.beta_anneal_steps" => t.beta_anneal_steps.to_string(),
            "train.free_bits" => t.free_bits.to_string(),
            "train.ema_decay" => t.ema_decay.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "train.clip_grad" => t.clip_grad.to_string(),
            "train.clip_norm" => t.clip_norm.to_string(),
            "train.log_wall_time" => t.log_wall_time.to_string(),
            "metrics.train_votes" => x.train_votes.to_string(),
            "metrics.eval_votes" => x.eval_votes.to_string(),
            "metrics.pairs" => x.pairs.to_string(),
            "metrics.batch" => x.batch.to_string(),
            "metrics.classifier_iters" => x.classifier_iters.to_string(),
            "metrics.classifier_lr" => x.classifier_lr.to_string(),
            "metrics.std_samples" => x.std_samples.to_string(),
            _ => unreachable!("schema and getter agree"),
        }
    }

    /// Canonical text: every key, schema order, no comments.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, _) in SCHEMA {
            let (sec, name) = key.split_once('.').expect("schema keys are dotted");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", sec));
                section = sec;
            }
            out.push_str(&format!("{} = {}\n", name, self.get(key)));
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.render().as_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// Parses a complete file. Every schema key must appear exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: Vec<(String, String)> = Vec::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::config(format!("line {}: {}", n + 1, m));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| at(format!("unterminated section header {:?}", line)))?.trim();
                if !SCHEMA.iter().any(|(k, _)| k.split_once('.').map(|p| p.0) == Some(name)) {
                    return Err(at(format!("unknown section [{}]", name)));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got {:?}", line)))?;
            let sec = section.as_deref().ok_or_else(|| at("key outside any section".into()))?;
            let full = format!("{}.{}", sec, k.trim());
            if type_of(&full).is_none() {
                return Err(at(format!("unknown key {}", full)));
            }
            if seen.iter().any(|(s, _)| *s == full) {
                return Err(at(format!("duplicate key {}", full)));
            }
            seen.push((full, v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        for (key, ty) in SCHEMA {
            let v = seen
                .iter()
                .find(|(s, _)| s == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::config(format!("missing key {} (expected {})", key, ty)))?;
            cfg.set(key, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read config {}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::config(format!("override {:?} is not key=value", p)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.path.is_empty() {
            return Err(Error::config("data.path must not be empty"));
        }
        Ok(())
    }
}
