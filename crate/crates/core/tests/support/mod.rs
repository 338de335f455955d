#![allow(dead_code)]

pub mod oracle;

use sdn_core::numerics::gradcheck::{finite_difference, relative_error};
use sdn_core::rng::{seeded, uniform_tensor};
use sdn_core::{Float, Graph, Tensor, Var};

/// Checks every input gradient of `build` against central differences.
/// The loss is `sum(out * r)` for a fixed random `r`, so that every output
/// element carries a distinct weight. Returns the worst relative error.
pub fn grad_check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> Float {
    let out_shape = {
        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars);
        g.shape(y).to_vec()
    };
    let weights = uniform_tensor(&mut seeded(99), &out_shape, -1.0, 1.0);
    let loss_of = |vals: &[Tensor]| -> Float {
        let mut g = Graph::inference();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars);
        g.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let y = build(&mut g, &vars);
    g.backward_with(y, weights.clone()).unwrap();

    let mut worst: Float = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = finite_difference(
            |probe| {
                let mut vals = inputs.to_vec();
                vals[k] = probe.clone();
                loss_of(&vals)
            },
            &inputs[k],
            1e-5,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn rand(seed: u64, shape: &[usize]) -> Tensor {
    uniform_tensor(&mut seeded(seed), shape, -1.0, 1.0)
}
