use crate::error::{Error, Result};
use crate::layers::SpatialLayer;
use crate::numerics::{Tensor, Var};
use crate::params::{ParamStore, Session};
use crate::rng::{normal_tensor, SdnRng};
use crate::Float;

/// `depth` stacked same-padded `k x k` convolutions with ReLU between them.
///
/// Stands in for the ablation blocks: 3x3, 5x5 and 2x(3x3).
#[derive(Clone, Debug)]
pub struct ConvBaseline {
    pub prefix: String,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
}

impl ConvBaseline {
    pub fn new(prefix: impl Into<String>, kernel: usize, in_channels: usize, out_channels: usize, depth: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("baseline kernel must be odd, got {}", kernel)));
        }
        if depth == 0 {
            return Err(Error::config("baseline depth must be >= 1"));
        }
        Ok(ConvBaseline { prefix: prefix.into(), kernel, in_channels, out_channels, depth })
    }

    fn channels_at(&self, k: usize) -> (usize, usize) {
        let cin = if k == 0 { self.in_channels } else { self.out_channels };
        (cin, self.out_channels)
    }
}

impl SpatialLayer for ConvBaseline {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        (0..self.depth)
            .flat_map(|k| {
                let (cin, cout) = self.channels_at(k);
                [
                    (format!("{}.conv{}.k", self.prefix, k), vec![cout, cin, self.kernel, self.kernel]),
                    (format!("{}.conv{}.b", self.prefix, k), vec![cout]),
                ]
            })
            .collect()
    }

    fn init(&self, store: &mut ParamStore, rng: &mut SdnRng) -> Result<()> {
        for k in 0..self.depth {
            let (cin, cout) = self.channels_at(k);
            let fan = (cin * self.kernel * self.kernel) as Float;
            store.insert(format!("{}.conv{}.k", self.prefix, k), normal_tensor(rng, &[cout, cin, self.kernel, self.kernel], 1.0 / fan.sqrt()))?;
            store.insert(format!("{}.conv{}.b", self.prefix, k), Tensor::zeros(&[cout]))?;
        }
        Ok(())
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for k in 0..self.depth {
            if k > 0 {
                h = s.graph.relu(h);
            }
            let w = s.param(&format!("{}.conv{}.k", self.prefix, k))?;
            let b = s.param(&format!("{}.conv{}.b", self.prefix, k))?;
            h = s.graph.conv2d_same(h, w, b)?;
        }
        Ok(h)
    }
}
