use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::layers::sweep::{Direction, GATE_UPDATE};
use crate::layers::SpatialLayer;
use crate::numerics::{Tensor, Var};
use crate::params::{ParamStore, Session};
use crate::rng::{normal_tensor, SdnRng};
use crate::Float;

/// Names and shapes of one direction's gate cell.
#[derive(Clone, Debug)]
pub struct SdnCell {
    pub prefix: String,
    pub channels: usize,
}

impl SdnCell {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        SdnCell { prefix: prefix.into(), channels }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn input_bias_name(&self) -> String {
        format!("{}.b_in", self.prefix)
    }

    pub fn recurrent_bias_name(&self) -> String {
        format!("{}.b_rec", self.prefix)
    }

    /// Weights `[role, gate, C, C]` and the two `[gate, C]` biases.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        vec![
            (self.weight_name(), vec![4, 3, c, c]),
            (self.input_bias_name(), vec![3, c]),
            (self.recurrent_bias_name(), vec![3, c]),
        ]
    }

    pub fn count_parameters(&self) -> usize {
        let c = self.channels;
        3 * 4 * c * c + 3 * 2 * c
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SdnRng) -> Result<()> {
        let c = self.channels;
        // Four roles feed each gate.
        let std = 1.0 / ((4 * c) as Float).sqrt();
        store.insert(self.weight_name(), normal_tensor(rng, &[4, 3, c, c], std))?;
        store.insert(self.input_bias_name(), Tensor::zeros(&[3, c]))?;
        store.insert(self.recurrent_bias_name(), Tensor::zeros(&[3, c]))?;
        Ok(())
    }

    pub fn apply(&self, s: &mut Session<'_>, x: Var, dir: Direction) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b_in = s.param(&self.input_bias_name())?;
        let b_rec = s.param(&self.recurrent_bias_name())?;
        s.graph.sweep(x, w, b_in, b_rec, dir)
    }

    /// Sets the recurrent-side update-gate bias of every channel.
    pub fn set_update_bias(&self, store: &mut ParamStore, value: Float) -> Result<()> {
        let c = self.channels;
        let b = store
            .get_mut(&self.recurrent_bias_name())
            .ok_or_else(|| Error::invalid(format!("{} not initialized", self.prefix)))?;
        b.data_mut()[GATE_UPDATE * c..(GATE_UPDATE + 1) * c].iter_mut().for_each(|v| *v = value);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    None,
    /// `t * core(x) + (1 - t) * x` with a learned per-position gate
    /// `t = sigmoid(x W_g + b_g)`.
    Highway,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdnConfig {
    pub in_channels: usize,
    pub inner_channels: usize,
    pub out_channels: usize,
    pub directions: Vec<Direction>,
    pub residual: Residual,
    /// Spatial scale factor of the transposed-conv upsampler in project-in.
    pub upsample: Option<usize>,
}

impl SdnConfig {
    /// Square layer with `channels` everywhere and no upsampling.
    pub fn square(channels: usize, directions: &[Direction]) -> Self {
        SdnConfig {
            in_channels: channels,
            inner_channels: channels,
            out_channels: channels,
            directions: directions.to_vec(),
            residual: Residual::None,
            upsample: None,
        }
    }
}

/// Initial bias of the highway transform gate; `sigmoid(-2) ~ 0.12`, so a
/// fresh residual layer mostly passes its input through.
pub const HIGHWAY_GATE_BIAS: Float = -2.0;

/// Project-in → squash → directional sweeps → project-out.
#[derive(Clone, Debug)]
pub struct SdnLayer {
    pub prefix: String,
    pub config: SdnConfig,
    pub cells: Vec<SdnCell>,
}

/// Wall-clock split of one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimes {
    pub project: Duration,
    pub sweeps: Duration,
}

impl SdnLayer {
    pub fn new(prefix: impl Into<String>, config: SdnConfig) -> Result<Self> {
        let prefix = prefix.into();
        if config.directions.is_empty() {
            return Err(Error::config(format!("SDN layer {} needs at least one direction", prefix)));
        }
        if config.in_channels == 0 || config.inner_channels == 0 || config.out_channels == 0 {
            return Err(Error::config(format!("SDN layer {} has a zero channel count", prefix)));
        }
        if config.residual == Residual::Highway {
            if config.in_channels != config.out_channels {
                return Err(Error::config(format!(
                    "residual SDN layer {} needs in_channels == out_channels, got {} and {}",
                    prefix, config.in_channels, config.out_channels
                )));
            }
            if config.upsample.is_some() {
                return Err(Error::config(format!("residual SDN layer {} cannot upsample", prefix)));
            }
        }
        if config.upsample == Some(0) {
            return Err(Error::config("upsample factor must be >= 1"));
        }
        let cells = (0..config.directions.len())
            .map(|k| SdnCell::new(format!("{}.cell{}", prefix, k), config.inner_channels))
            .collect();
        Ok(SdnLayer { prefix, config, cells })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Shapes of every parameter; project-in, upsampler, cells, project-out, gate.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let mut out = vec![
            (self.name("in.w"), vec![c.in_channels, c.inner_channels]),
            (self.name("in.b"), vec![c.inner_channels]),
        ];
        if let Some(f) = c.upsample {
            out.push((self.name("up.k"), vec![c.inner_channels, c.inner_channels, 2 * f, 2 * f]));
            out.push((self.name("up.b"), vec![c.inner_channels]));
        }
        for cell in &self.cells {
            out.extend(cell.param_shapes());
        }
        out.push((self.name("out.w"), vec![c.inner_channels, c.out_channels]));
        out.push((self.name("out.b"), vec![c.out_channels]));
        if c.residual == Residual::Highway {
            out.push((self.name("gate.w"), vec![c.in_channels, c.out_channels]));
            out.push((self.name("gate.b"), vec![c.out_channels]));
        }
        out
    }

    pub fn project_in(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(&self.name("in.w"))?;
        let b = s.param(&self.name("in.b"))?;
        let mut h = s.graph.matmul_channels(x, w, b)?;
        if let Some(f) = self.config.upsample {
            let k = s.param(&self.name("up.k"))?;
            let b = s.param(&self.name("up.b"))?;
            h = s.graph.conv2d_transposed(h, k, b, f)?;
        }
        Ok(h)
    }

    /// Squash once, then one sweep per configured direction, each with its own cell.
    pub fn correct(&self, s: &mut Session<'_>, projected: Var) -> Result<Var> {
        let mut h = s.graph.tanh(projected);
        for (cell, &dir) in self.cells.iter().zip(&self.config.directions) {
            h = cell.apply(s, h, dir)?;
        }
        Ok(h)
    }

    pub fn project_out(&self, s: &mut Session<'_>, corrected: Var) -> Result<Var> {
        let w = s.param(&self.name("out.w"))?;
        let b = s.param(&self.name("out.b"))?;
        s.graph.matmul_channels(corrected, w, b)
    }

    fn residual(&self, s: &mut Session<'_>, x: Var, core: Var) -> Result<Var> {
        match self.config.residual {
            Residual::None => Ok(core),
            Residual::Highway => {
                let w = s.param(&self.name("gate.w"))?;
                let b = s.param(&self.name("gate.b"))?;
                let a = s.graph.matmul_channels(x, w, b)?;
                let t = s.graph.sigmoid(a);
                let carry = s.graph.one_minus(t);
                let moved = s.graph.mul(t, core)?;
                let kept = s.graph.mul(carry, x)?;
                s.graph.add(moved, kept)
            }
        }
    }

    /// Forward pass that also reports how long the projections and the
    /// sweeps took.
    pub fn forward_timed(&self, s: &mut Session<'_>, x: Var) -> Result<(Var, StageTimes)> {
        let t0 = Instant::now();
        let p = self.project_in(s, x)?;
        let t1 = Instant::now();
        let c = self.correct(s, p)?;
        let t2 = Instant::now();
        let core = self.project_out(s, c)?;
        let out = self.residual(s, x, core)?;
        let t3 = Instant::now();
        Ok((out, StageTimes { project: (t1 - t0) + (t3 - t2), sweeps: t2 - t1 }))
    }
}

impl SpatialLayer for SdnLayer {
    fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn out_channels(&self) -> usize {
        self.config.out_channels
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        SdnLayer::param_shapes(self)
    }

    fn init(&self, store: &mut ParamStore, rng: &mut SdnRng) -> Result<()> {
        let c = &self.config;
        store.insert(self.name("in.w"), normal_tensor(rng, &[c.in_channels, c.inner_channels], 1.0 / (c.in_channels as Float).sqrt()))?;
        store.insert(self.name("in.b"), Tensor::zeros(&[c.inner_channels]))?;
        if let Some(f) = c.upsample {
            let fan = (c.inner_channels * 4) as Float;
            store.insert(self.name("up.k"), normal_tensor(rng, &[c.inner_channels, c.inner_channels, 2 * f, 2 * f], 1.0 / fan.sqrt()))?;
            store.insert(self.name("up.b"), Tensor::zeros(&[c.inner_channels]))?;
        }
        for cell in &self.cells {
            cell.init(store, rng)?;
        }
        store.insert(self.name("out.w"), normal_tensor(rng, &[c.inner_channels, c.out_channels], 1.0 / (c.inner_channels as Float).sqrt()))?;
        store.insert(self.name("out.b"), Tensor::zeros(&[c.out_channels]))?;
        if c.residual == Residual::Highway {
            store.insert(self.name("gate.w"), normal_tensor(rng, &[c.in_channels, c.out_channels], 0.1 / (c.in_channels as Float).sqrt()))?;
            store.insert(self.name("gate.b"), Tensor::full(&[c.out_channels], HIGHWAY_GATE_BIAS))?;
        }
        Ok(())
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let p = self.project_in(s, x)?;
        let c = self.correct(s, p)?;
        let core = self.project_out(s, c)?;
        self.residual(s, x, core)
    }
}
