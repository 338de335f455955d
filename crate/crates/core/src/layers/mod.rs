//! Spatial dependency layers and the convolutional baselines they are
//! compared against.

mod baseline;
mod probe;
mod sdn;
pub mod sweep;

pub use baseline::ConvBaseline;
pub use probe::{dependency_probe, DependencyMatrix, MAX_PROBE_GRID};
pub use sdn::{Residual, SdnCell, SdnConfig, SdnLayer, StageTimes, HIGHWAY_GATE_BIAS};
pub use sweep::{sweep_values, Direction};

use crate::error::Result;
use crate::numerics::Var;
use crate::params::{ParamStore, Session};
use crate::rng::SdnRng;

/// A map from `[B, in, H, W]` to `[B, out, H', W']`.
pub trait SpatialLayer {
    fn in_channels(&self) -> usize;

    fn out_channels(&self) -> usize;

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;

    fn init(&self, store: &mut ParamStore, rng: &mut SdnRng) -> Result<()>;

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var>;

    /// Exact number of learnable scalars.
    fn count_parameters(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Layers applied in sequence.
pub struct LayerStack(pub Vec<Box<dyn SpatialLayer>>);

impl SpatialLayer for LayerStack {
    fn in_channels(&self) -> usize {
        self.0.first().map_or(0, |l| l.in_channels())
    }

    fn out_channels(&self) -> usize {
        self.0.last().map_or(0, |l| l.out_channels())
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.0.iter().flat_map(|l| l.param_shapes()).collect()
    }

    fn init(&self, store: &mut ParamStore, rng: &mut SdnRng) -> Result<()> {
        self.0.iter().try_for_each(|l| l.init(store, rng))
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        self.0.iter().try_fold(x, |h, l| l.forward(s, h))
    }
}

/// Parameter counts of the reference layers at a given channel width:
/// 3x3 conv, 5x5 conv, one projection, one cell, 1- and 2-direction SDN.
pub fn reference_parameter_counts(channels: usize) -> Result<Vec<(&'static str, usize)>> {
    let conv3 = ConvBaseline::new("c3", 3, channels, channels, 1)?;
    let conv5 = ConvBaseline::new("c5", 5, channels, channels, 1)?;
    let sdn1 = SdnLayer::new("s1", SdnConfig::square(channels, &[Direction::BottomToTop]))?;
    let sdn2 = SdnLayer::new("s2", SdnConfig::square(channels, &[Direction::BottomToTop, Direction::TopToBottom]))?;
    let project = sdn1.param_shapes().iter().filter(|(n, _)| n.starts_with("s1.in.")).map(|(_, s)| s.iter().product::<usize>()).sum();
    Ok(vec![
        ("3x3CNN", conv3.count_parameters()),
        ("5x5CNN", conv5.count_parameters()),
        ("Project phase", project),
        ("SDN cell", sdn1.cells[0].count_parameters()),
        ("1dir-SDN", sdn1.count_parameters()),
        ("2dir-SDN", sdn2.count_parameters()),
    ])
}
