//! Differentiable primitives recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::numerics::linalg::{gemm, MatRef};
use crate::numerics::tensor::split_axis;
use crate::numerics::{Backward, Graph, Tensor, Var};
use crate::Float;

pub(crate) fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: Float) -> Float {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Scale(Float),
    AddScalar(Float),
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    MaxScalar(Float),
    Square,
    Softplus,
}

impl Unary {
    fn apply(self, x: Float) -> Float {
        match self {
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            // comparisons keep NaN where f64::max would drop it
            Unary::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Unary::MaxScalar(c) => {
                if x < c {
                    c
                } else {
                    x
                }
            }
            Unary::Square => x * x,
            Unary::Softplus => softplus(x),
        }
    }

    /// d(out)/d(in) given the input and output value.
    fn derivative(self, x: Float, y: Float) -> Float {
        match self {
            Unary::Scale(c) => c,
            Unary::AddScalar(_) => 1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::MaxScalar(c) => {
                if x > c {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Softplus => sigmoid(x),
        }
    }
}

struct UnaryRule(Unary);

impl Backward for UnaryRule {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let y = output.data();
        let g = grad.data();
        let d = (0..g.len()).map(|i| g[i] * self.0.derivative(x[i], y[i])).collect();
        vec![Some(Tensor::new(grad.shape(), d).expect("same shape"))]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryRule(Binary);

impl Backward for BinaryRule {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        match self.0 {
            Binary::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Binary::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
            Binary::Mul => vec![Some(grad.zip_map(inputs[1], |g, b| g * b)), Some(grad.zip_map(inputs[0], |g, a| g * a))],
        }
    }
}

struct SumRule;

impl Backward for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

struct SumAxisRule {
    axis: usize,
}

impl Backward for SumAxisRule {
    fn name(&self) -> &'static str {
        "sum_axis"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let shape = inputs[0].shape();
        let (outer, n, inner) = split_axis(shape, self.axis);
        let g = grad.data();
        let mut d = vec![0.0; outer * n * inner];
        for o in 0..outer {
            for k in 0..n {
                let dst = &mut d[(o * n + k) * inner..(o * n + k + 1) * inner];
                dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
            }
        }
        vec![Some(Tensor::new(shape, d).expect("shape"))]
    }
}

struct LogSumExpRule {
    axis: usize,
}

impl Backward for LogSumExpRule {
    fn name(&self) -> &'static str {
        "logsumexp"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, n, inner) = split_axis(x.shape(), self.axis);
        let (xd, yd, gd) = (x.data(), output.data(), grad.data());
        let mut d = vec![0.0; xd.len()];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let src = (o * n + k) * inner + i;
                    let red = o * inner + i;
                    d[src] = gd[red] * (xd[src] - yd[red]).exp();
                }
            }
        }
        vec![Some(Tensor::new(x.shape(), d).expect("shape"))]
    }
}

struct LogSoftmaxRule {
    axis: usize,
}

impl Backward for LogSoftmaxRule {
    fn name(&self) -> &'static str {
        "log_softmax"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (outer, n, inner) = split_axis(output.shape(), self.axis);
        let (yd, gd) = (output.data(), grad.data());
        let mut d = vec![0.0; yd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let gsum: Float = (0..n).map(|k| gd[idx(k)]).sum();
                for k in 0..n {
                    d[idx(k)] = gd[idx(k)] - yd[idx(k)].exp() * gsum;
                }
            }
        }
        vec![Some(Tensor::new(output.shape(), d).expect("shape"))]
    }
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshape(inputs[0].shape()).expect("reshape back"))]
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl Backward for SliceRule {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let shape = inputs[0].shape();
        let (outer, n, inner) = split_axis(shape, self.axis);
        let len = grad.shape()[self.axis];
        let mut d = vec![0.0; outer * n * inner];
        let g = grad.data();
        for o in 0..outer {
            let dst = o * n * inner + self.start * inner;
            d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(Tensor::new(shape, d).expect("shape"))]
    }
}

struct ConcatRule {
    axis: usize,
    sizes: Vec<usize>,
}

impl Backward for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&len| {
                let part = grad.slice_axis(self.axis, start, len).expect("slice");
                start += len;
                Some(part)
            })
            .collect()
    }
}

/// `out[b,:,i,j] = w^T x[b,:,i,j] + bias`.
struct MatmulChannelsRule;

impl Backward for MatmulChannelsRule {
    fn name(&self) -> &'static str {
        "matmul_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let [bsz, cin, h, wd] = x.dims4().expect("rank");
        let cout = w.shape()[1];
        let hw = h * wd;
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; cout];
        let g = grad.data();
        if hw == 1 {
            // x: [B, Cin], grad: [B, Cout]
            gemm(1.0, MatRef::new(g, bsz, cout), MatRef::new(w.data(), cin, cout).t(), 0.0, &mut dx);
            gemm(1.0, MatRef::new(x.data(), bsz, cin).t(), MatRef::new(g, bsz, cout), 0.0, &mut dw);
            for row in g.chunks(cout) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        } else {
            for b in 0..bsz {
                let gb = &g[b * cout * hw..(b + 1) * cout * hw];
                let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
                // dx_b = w (Cin x Cout) * g_b (Cout x HW)
                gemm(1.0, MatRef::new(w.data(), cin, cout), MatRef::new(gb, cout, hw), 0.0, &mut dx[b * cin * hw..(b + 1) * cin * hw]);
                // dw += x_b (Cin x HW) * g_b^T (HW x Cout)
                gemm(1.0, MatRef::new(xb, cin, hw), MatRef::new(gb, cout, hw).t(), 1.0, &mut dw);
                for (c, d) in db.iter_mut().enumerate() {
                    *d += gb[c * hw..(c + 1) * hw].iter().sum::<Float>();
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).expect("shape")),
            Some(Tensor::new(w.shape(), dw).expect("shape")),
            Some(Tensor::new(&[cout], db).expect("shape")),
        ]
    }
}

/// Computes `w^T x + b` for each spatial position of `x` (rank 2 or 4).
pub fn matmul_channels_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [bsz, cin, h, wd] = x.dims4()?;
    if w.rank() != 2 || w.shape()[0] != cin {
        return Err(Error::shape(
            "matmul_channels",
            format!("axis 1 (channels) of input is {} but weight is {:?}", cin, w.shape()),
        ));
    }
    let cout = w.shape()[1];
    if b.shape() != [cout] {
        return Err(Error::shape(
            "matmul_channels",
            format!("bias must be [{}] (output channels), got {:?}", cout, b.shape()),
        ));
    }
    let hw = h * wd;
    let mut out = vec![0.0; bsz * cout * hw];
    if hw == 1 {
        gemm(1.0, MatRef::new(x.data(), bsz, cin), MatRef::new(w.data(), cin, cout), 0.0, &mut out);
        for row in out.chunks_mut(cout) {
            for (o, bias) in row.iter_mut().zip(b.data()) {
                *o += bias;
            }
        }
    } else {
        for bi in 0..bsz {
            let xb = &x.data()[bi * cin * hw..(bi + 1) * cin * hw];
            let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            gemm(1.0, MatRef::new(w.data(), cin, cout).t(), MatRef::new(xb, cin, hw), 0.0, ob);
            for (c, bias) in b.data().iter().enumerate() {
                ob[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = cout;
    Tensor::new(&shape, out)
}

/// `w = g * v / ||v||` with the norm taken over every axis except `out_axis`.
struct WeightNormRule {
    out_axis: usize,
}

fn unit_norms(v: &Tensor, out_axis: usize) -> Vec<Float> {
    let (outer, n, inner) = split_axis(v.shape(), out_axis);
    let mut sq = vec![0.0; n];
    let d = v.data();
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let x = d[(o * n + k) * inner + i];
                sq[k] += x * x;
            }
        }
    }
    sq.into_iter().map(Float::sqrt).collect()
}

impl Backward for WeightNormRule {
    fn name(&self) -> &'static str {
        "weight_normalize"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (v, gain) = (inputs[0], inputs[1]);
        let (outer, n, inner) = split_axis(v.shape(), self.out_axis);
        let norms = unit_norms(v, self.out_axis);
        let (vd, gd) = (v.data(), grad.data());
        // s_k = sum over unit k of grad * v
        let mut s = vec![0.0; n];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let idx = (o * n + k) * inner + i;
                    s[k] += gd[idx] * vd[idx];
                }
            }
        }
        let mut dv = vec![0.0; vd.len()];
        for o in 0..outer {
            for k in 0..n {
                let nk = norms[k];
                let gk = gain.data()[k];
                for i in 0..inner {
                    let idx = (o * n + k) * inner + i;
                    dv[idx] = gk / nk * (gd[idx] - vd[idx] * s[k] / (nk * nk));
                }
            }
        }
        let dg: Vec<Float> = (0..n).map(|k| s[k] / norms[k]).collect();
        vec![Some(Tensor::new(v.shape(), dv).expect("shape")), Some(Tensor::new(gain.shape(), dg).expect("shape"))]
    }
}

impl Graph {
    fn unary(&mut self, x: Var, op: Unary) -> Var {
        let value = self.value(x).map(|v| op.apply(v));
        self.record(value, &[x], UnaryRule(op))
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary, name: &'static str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("operands {:?} and {:?} differ", ta.shape(), tb.shape())));
        }
        let value = match op {
            Binary::Add => ta.zip_map(tb, |x, y| x + y),
            Binary::Sub => ta.zip_map(tb, |x, y| x - y),
            Binary::Mul => ta.zip_map(tb, |x, y| x * y),
        };
        Ok(self.record(value, &[a, b], BinaryRule(op)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn scale(&mut self, x: Var, c: Float) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Scale(-1.0))
    }

    pub fn add_scalar(&mut self, x: Var, c: Float) -> Var {
        self.unary(x, Unary::AddScalar(c))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, 1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// Natural log. Debug builds reject non-positive inputs; release builds
    /// let `-inf`/NaN propagate.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if cfg!(debug_assertions) {
            if let Some(bad) = self.value(x).data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::invalid(format!("log of non-positive value {}", bad)));
            }
        }
        Ok(self.unary(x, Unary::Log))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    /// Elementwise `max(x, c)`; the gradient is zero wherever the floor is active.
    pub fn max_scalar(&mut self, x: Var, c: Float) -> Var {
        self.unary(x, Unary::MaxScalar(c))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.record(Tensor::scalar(s), &[x], SumRule)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as Float;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.value(x).rank() {
            return Err(Error::shape(op, format!("axis {} out of range for {:?}", axis, self.shape(x))));
        }
        Ok(())
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(value, &[x], SumAxisRule { axis }))
    }

    /// Max-shifted `log(sum(exp(x)))` over `axis`, removing it.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "logsumexp")?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| d[(o * n + k) * inner + i];
                let m = (0..n).map(at).fold(Float::NEG_INFINITY, Float::max);
                out[o * inner + i] = if m == Float::NEG_INFINITY {
                    m
                } else {
                    m + (0..n).map(|k| (at(k) - m).exp()).sum::<Float>().ln()
                };
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(value, &[x], LogSumExpRule { axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "log_softmax")?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| d[idx(k)]).fold(Float::NEG_INFINITY, Float::max);
                let lse = m + (0..n).map(|k| (d[idx(k)] - m).exp()).sum::<Float>().ln();
                for k in 0..n {
                    out[idx(k)] = d[idx(k)] - lse;
                }
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.record(value, &[x], LogSoftmaxRule { axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.record(value, &[x], ReshapeRule))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_axis(axis, start, len)?;
        Ok(self.record(value, &[x], SliceRule { axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let ref_shape = self.shape(*first).to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::shape("concat", format!("axis {} out of range", axis)));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != ref_shape.len()
                || s.iter().zip(&ref_shape).enumerate().any(|(k, (a, b))| k != axis && a != b)
            {
                return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {}", s, ref_shape, axis)));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let outer: usize = ref_shape[..axis].iter().product();
        let inner: usize = ref_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let d = self.value(*p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(value, parts, ConcatRule { axis, sizes }))
    }

    /// Per-position affine map over the channel axis: `x[B,Cin,...]`, `w[Cin,Cout]`, `b[Cout]`.
    pub fn matmul_channels(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = matmul_channels_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.record(value, &[x, w, b], MatmulChannelsRule))
    }

    /// Weight normalization: each output unit (index along `out_axis`) of `v`
    /// is rescaled to have norm `g[unit]`.
    pub fn weight_normalize(&mut self, v: Var, g: Var, out_axis: usize) -> Result<Var> {
        self.check_axis(v, out_axis, "weight_normalize")?;
        let (tv, tg) = (self.value(v), self.value(g));
        let n = tv.shape()[out_axis];
        if tg.shape() != [n] {
            return Err(Error::shape(
                "weight_normalize",
                format!("gain must be [{}] (axis {} of {:?}), got {:?}", n, out_axis, tv.shape(), tg.shape()),
            ));
        }
        let norms = unit_norms(tv, out_axis);
        let (outer, _, inner) = split_axis(tv.shape(), out_axis);
        let mut out = tv.data().to_vec();
        for o in 0..outer {
            for k in 0..n {
                let s = tg.data()[k] / norms[k];
                for i in 0..inner {
                    out[(o * n + k) * inner + i] *= s;
                }
            }
        }
        let value = Tensor::new(tv.shape(), out)?;
        Ok(self.record(value, &[v, g], WeightNormRule { out_axis }))
    }
}
