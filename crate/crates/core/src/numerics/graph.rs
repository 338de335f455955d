//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, the handles of its operands and a [`Backward`] rule. Operands always
//! precede their consumers, so walking the tape backwards is a valid
//! topological order. Models rebuild the tape on every step.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded primitive.
///
/// Returns one entry per operand, `None` where the operand receives no
/// gradient.
pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true }
    }

    /// A graph that never records backward rules. Forward values are
    /// identical to those of a recording graph.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad: requires_grad && self.grad_enabled,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether an operation over `parents` must keep what its backward needs.
    pub fn needs_grad(&self, parents: &[Var]) -> bool {
        self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    /// Appends an operation's output. The rule is dropped when no operand
    /// requires a gradient.
    pub fn record<R: Backward + 'static>(&mut self, value: Tensor, parents: &[Var], rule: R) -> Var {
        let requires_grad = self.needs_grad(parents);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            rule: if requires_grad { Some(Box::new(rule)) } else { None },
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Backpropagates from a scalar loss. Gradients are added into the
    /// `grad` buffer of every reachable leaf that requires one; the tape is
    /// kept, so several backward calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let seed = Tensor::full(self.nodes[loss.0].value.shape(), 1.0);
        self.backward_with(loss, seed)
    }

    /// Backpropagates an arbitrary cotangent of `output`.
    pub fn backward_with(&mut self, output: Var, cotangent: Tensor) -> Result<()> {
        if cotangent.shape() != self.nodes[output.0].value.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "cotangent {:?} does not match output {:?}",
                    cotangent.shape(),
                    self.nodes[output.0].value.shape()
                ),
            ));
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        let end = output.0 + 1;
        let mut reachable = vec![false; end];
        reachable[output.0] = true;
        for i in (0..end).rev() {
            if reachable[i] {
                for p in &self.nodes[i].parents {
                    if self.nodes[p.0].requires_grad {
                        reachable[p.0] = true;
                    }
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = (0..end).map(|_| None).collect();
        grads[output.0] = Some(cotangent);
        for i in (0..end).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.rule {
                Some(rule) => {
                    let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    let parent_grads = rule.backward(&inputs, &node.value, &g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", rule.name());
                    let parents = node.parents.clone();
                    for (p, pg) in parents.into_iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !self.nodes[p.0].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape(), "{}", rule.name());
                        match &mut grads[p.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }

        for (i, r) in reachable.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if r && node.rule.is_none() && node.requires_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }
}
