use crate::error::{Error, Result};
use crate::layers::SpatialLayer;
use crate::numerics::Tensor;
use crate::params::{ParamStore, Session};
use crate::rng::{seeded, uniform_tensor};
use crate::Float;

/// Largest grid side the probe accepts.
pub const MAX_PROBE_GRID: usize = 16;

/// Jacobian entries at or below this magnitude count as "no dependency".
pub const PROBE_THRESHOLD: Float = 1e-9;

/// Output-position × input-position dependency support on a square grid.
/// Positions are row-major (`row * grid + col`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyMatrix {
    pub grid: usize,
    support: Vec<bool>,
}

impl DependencyMatrix {
    pub fn new(grid: usize, support: Vec<bool>) -> Self {
        assert_eq!(support.len(), grid.pow(4));
        DependencyMatrix { grid, support }
    }

    pub fn from_fn(grid: usize, f: impl Fn((usize, usize), (usize, usize)) -> bool) -> Self {
        let n = grid * grid;
        let support = (0..n * n).map(|k| f(((k / n) / grid, (k / n) % grid), ((k % n) / grid, (k % n) % grid))).collect();
        DependencyMatrix { grid, support }
    }

    pub fn positions(&self) -> usize {
        self.grid * self.grid
    }

    /// Whether output position `p` depends on input position `q`.
    pub fn get(&self, p: usize, q: usize) -> bool {
        self.support[p * self.positions() + q]
    }

    pub fn count(&self) -> usize {
        self.support.iter().filter(|b| **b).count()
    }

    pub fn is_full(&self) -> bool {
        self.support.iter().all(|b| *b)
    }

    /// Binary PGM (`P5`), one pixel per entry, white = dependent.
    pub fn to_pgm(&self, comment: &str) -> Vec<u8> {
        let n = self.positions();
        let mut out = format!("P5\n# {}\n{} {}\n255\n", comment, n, n).into_bytes();
        out.extend(self.support.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }
}

/// Jacobian support of `layer` on a `grid x grid` input, by one backward
/// pass per (output position, output channel). Entry `(p, q)` is set when
/// some channel pair has `|d out_p / d in_q| > 1e-9`.
pub fn dependency_probe(layer: &dyn SpatialLayer, params: &ParamStore, grid: usize, seed: u64) -> Result<DependencyMatrix> {
    if grid == 0 || grid > MAX_PROBE_GRID {
        return Err(Error::invalid(format!("probe grid must be in 1..={}, got {}", MAX_PROBE_GRID, grid)));
    }
    let cin = layer.in_channels();
    let mut rng = seeded(seed);
    let input = uniform_tensor(&mut rng, &[1, cin, grid, grid], -1.0, 1.0);
    let mut s = Session::new(params);
    let x = s.graph.leaf(input, true);
    let y = layer.forward(&mut s, x)?;
    let yshape = s.graph.shape(y).to_vec();
    if yshape[2] != grid || yshape[3] != grid {
        return Err(Error::invalid(format!("probe needs a shape-preserving layer, got output {:?}", yshape)));
    }
    let cout = yshape[1];
    let n = grid * grid;
    let mut support = vec![false; n * n];
    for p in 0..n {
        for co in 0..cout {
            let mut cot = Tensor::zeros(&yshape);
            cot.data_mut()[co * n + p] = 1.0;
            s.graph.zero_grads();
            s.graph.backward_with(y, cot)?;
            let Some(gx) = s.graph.grad(x) else { continue };
            for ci in 0..cin {
                for q in 0..n {
                    if gx.data()[ci * n + q].abs() > PROBE_THRESHOLD {
                        support[p * n + q] = true;
                    }
                }
            }
        }
    }
    Ok(DependencyMatrix { grid, support })
}
