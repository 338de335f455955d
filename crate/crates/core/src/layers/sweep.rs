//! The correction sweep: a GRU-style gated update that walks the feature
//! grid one row (or column) at a time.
//!
//! Each direction is described by a frame mapping `(step, lane)` to a grid
//! position. At step `s` every lane is updated from the same snapshot: its
//! own pre-correction value and the corrected values of lanes `t-1`, `t`,
//! `t+1` at step `s-1`. Lanes outside the grid, and the step before the
//! first, read zeros. Per step, the whole `(batch x lane)` slab goes through
//! four matrix products, one per weight role.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::linalg::{gemm, MatRef};
use crate::numerics::{sigmoid, Backward, Graph, Tensor, Var};
use crate::Float;

/// Weight roles inside a cell, in storage order.
pub const ROLE_SELF: usize = 0;
pub const ROLE_STRAIGHT: usize = 1;
pub const ROLE_DIAG_LEFT: usize = 2;
pub const ROLE_DIAG_RIGHT: usize = 3;

/// Gate order inside every weight role and bias.
pub const GATE_RESET: usize = 0;
pub const GATE_UPDATE: usize = 1;
pub const GATE_CANDIDATE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    BottomToTop,
    RightToLeft,
    LeftToRight,
    TopToBottom,
}

impl Direction {
    /// The four directions in the order a full layer applies them.
    pub const ALL: [Direction; 4] =
        [Direction::BottomToTop, Direction::RightToLeft, Direction::LeftToRight, Direction::TopToBottom];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::BottomToTop => "bottom-to-top",
            Direction::RightToLeft => "right-to-left",
            Direction::LeftToRight => "left-to-right",
            Direction::TopToBottom => "top-to-bottom",
        }
    }

    /// `(steps, lanes)` for an `h x w` grid.
    pub fn frame(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Direction::BottomToTop | Direction::TopToBottom => (h, w),
            Direction::LeftToRight | Direction::RightToLeft => (w, h),
        }
    }

    /// Grid `(row, col)` of lane `t` at step `s`. Row 0 is the top row.
    pub fn position(self, s: usize, t: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Direction::BottomToTop => (h - 1 - s, t),
            Direction::TopToBottom => (s, t),
            Direction::LeftToRight => (t, s),
            Direction::RightToLeft => (t, w - 1 - s),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bottom-to-top" | "bt" => Ok(Direction::BottomToTop),
            "right-to-left" | "rl" => Ok(Direction::RightToLeft),
            "left-to-right" | "lr" => Ok(Direction::LeftToRight),
            "top-to-bottom" | "tb" => Ok(Direction::TopToBottom),
            other => Err(Error::invalid(format!("unknown sweep direction {:?}", other))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    steps: usize,
    lanes: usize,
}

impl Dims {
    /// Columns of one step slab: every lane of every batch element.
    fn n(&self) -> usize {
        self.batch * self.lanes
    }

    fn slab(&self) -> usize {
        self.channels * self.n()
    }
}

/// `[B,C,H,W]` → `[step][C][B*lanes]`.
fn gather(x: &[Float], d: &Dims, dir: Direction) -> Vec<Float> {
    let n = d.n();
    let mut out = vec![0.0; d.steps * d.slab()];
    for s in 0..d.steps {
        for c in 0..d.channels {
            let dst = &mut out[(s * d.channels + c) * n..(s * d.channels + c + 1) * n];
            for b in 0..d.batch {
                let plane = &x[(b * d.channels + c) * d.h * d.w..(b * d.channels + c + 1) * d.h * d.w];
                for t in 0..d.lanes {
                    let (i, j) = dir.position(s, t, d.h, d.w);
                    dst[b * d.lanes + t] = plane[i * d.w + j];
                }
            }
        }
    }
    out
}

fn scatter(src: &[Float], d: &Dims, dir: Direction) -> Vec<Float> {
    let n = d.n();
    let mut out = vec![0.0; d.batch * d.channels * d.h * d.w];
    for s in 0..d.steps {
        for c in 0..d.channels {
            let row = &src[(s * d.channels + c) * n..(s * d.channels + c + 1) * n];
            for b in 0..d.batch {
                let plane = &mut out[(b * d.channels + c) * d.h * d.w..(b * d.channels + c + 1) * d.h * d.w];
                for t in 0..d.lanes {
                    let (i, j) = dir.position(s, t, d.h, d.w);
                    plane[i * d.w + j] = row[b * d.lanes + t];
                }
            }
        }
    }
    out
}

/// Neighbor slabs of the previous step: value at lane `t-1` and `t+1`.
fn shifted(prev: &[Float], d: &Dims) -> (Vec<Float>, Vec<Float>) {
    let n = d.n();
    let l = d.lanes;
    let mut left = vec![0.0; prev.len()];
    let mut right = vec![0.0; prev.len()];
    for c in 0..d.channels {
        for b in 0..d.batch {
            let base = c * n + b * l;
            let p = &prev[base..base + l];
            left[base + 1..base + l].copy_from_slice(&p[..l - 1]);
            right[base..base + l - 1].copy_from_slice(&p[1..]);
        }
    }
    (left, right)
}

fn role(w: &[Float], c: usize, r: usize) -> MatRef<'_> {
    let sz = 3 * c * c;
    MatRef::new(&w[r * sz..(r + 1) * sz], 3 * c, c)
}

/// Per-step activations kept for the backward pass, each `[step][C][N]`.
struct Saved {
    reset: Vec<Float>,
    update: Vec<Float>,
    cand: Vec<Float>,
    /// `W^{n,self} I + b^{n,rec}`: the term the reset gate multiplies.
    cand_self: Vec<Float>,
}

struct SweepRule {
    dir: Direction,
    dims: Dims,
    saved: Saved,
}

/// Checks operand shapes and returns the sweep dimensions.
fn dims_for(x: &Tensor, w: &Tensor, b_in: &Tensor, b_rec: &Tensor, dir: Direction) -> Result<Dims> {
    if x.rank() != 4 {
        return Err(Error::shape("sweep", format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    let [batch, channels, h, wd] = x.dims4()?;
    if batch == 0 || channels == 0 || h == 0 || wd == 0 {
        return Err(Error::shape("sweep", format!("empty extent in {:?}", x.shape())));
    }
    if w.shape() != [4, 3, channels, channels] {
        return Err(Error::shape(
            "sweep",
            format!("cell weights must be [4,3,{c},{c}] for {c} channels, got {:?}", w.shape(), c = channels),
        ));
    }
    for (name, b) in [("input-side bias", b_in), ("recurrent-side bias", b_rec)] {
        if b.shape() != [3, channels] {
            return Err(Error::shape("sweep", format!("{} must be [3,{}], got {:?}", name, channels, b.shape())));
        }
    }
    let (steps, lanes) = dir.frame(h, wd);
    Ok(Dims { batch, channels, h, w: wd, steps, lanes })
}

/// Runs one directional sweep and returns the corrected `[B,C,H,W]` map,
/// optionally keeping the gate activations for backward.
fn sweep_forward(x: &Tensor, w: &Tensor, b_in: &Tensor, b_rec: &Tensor, dir: Direction, keep: bool) -> Result<(Tensor, Option<Saved>)> {
    let d = dims_for(x, w, b_in, b_rec, dir)?;
    let (c, n) = (d.channels, d.n());
    let input = gather(x.data(), &d, dir);
    let mut out = vec![0.0; input.len()];
    let mut saved = keep.then(|| Saved {
        reset: vec![0.0; input.len()],
        update: vec![0.0; input.len()],
        cand: vec![0.0; input.len()],
        cand_self: vec![0.0; input.len()],
    });
    let wd = w.data();
    let mut a_self = vec![0.0; 3 * c * n];
    let mut a_nbr = vec![0.0; 3 * c * n];
    for s in 0..d.steps {
        let slab = s * d.slab()..(s + 1) * d.slab();
        let cur = &input[slab.clone()];
        gemm(1.0, role(wd, c, ROLE_SELF), MatRef::new(cur, c, n), 0.0, &mut a_self);
        for (k, bias) in b_rec.data().iter().enumerate() {
            a_self[k * n..(k + 1) * n].iter_mut().for_each(|v| *v += bias);
        }
        for (k, bias) in b_in.data().iter().enumerate() {
            a_nbr[k * n..(k + 1) * n].iter_mut().for_each(|v| *v = *bias);
        }
        if s > 0 {
            let prev = &out[(s - 1) * d.slab()..s * d.slab()];
            let (left, right) = shifted(prev, &d);
            gemm(1.0, role(wd, c, ROLE_STRAIGHT), MatRef::new(prev, c, n), 1.0, &mut a_nbr);
            gemm(1.0, role(wd, c, ROLE_DIAG_LEFT), MatRef::new(&left, c, n), 1.0, &mut a_nbr);
            gemm(1.0, role(wd, c, ROLE_DIAG_RIGHT), MatRef::new(&right, c, n), 1.0, &mut a_nbr);
        }
        let (ro, zo, no) = (GATE_RESET * c * n, GATE_UPDATE * c * n, GATE_CANDIDATE * c * n);
        let dst = &mut out[slab.clone()];
        for k in 0..c * n {
            let r = sigmoid(a_self[ro + k] + a_nbr[ro + k]);
            let z = sigmoid(a_self[zo + k] + a_nbr[zo + k]);
            let hs = a_self[no + k];
            let cand = (r * hs + a_nbr[no + k]).tanh();
            dst[k] = z * cur[k] + (1.0 - z) * cand;
            if let Some(sv) = saved.as_mut() {
                let at = s * d.slab() + k;
                sv.reset[at] = r;
                sv.update[at] = z;
                sv.cand[at] = cand;
                sv.cand_self[at] = hs;
            }
        }
    }
    let value = Tensor::new(x.shape(), scatter(&out, &d, dir))?;
    Ok((value, saved))
}

impl Backward for SweepRule {
    fn name(&self) -> &'static str {
        "sdn_sweep"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let d = self.dims;
        let (c, n, slab) = (d.channels, d.n(), d.slab());
        let input = gather(x.data(), &d, self.dir);
        let out = gather(output.data(), &d, self.dir);
        let g = gather(grad.data(), &d, self.dir);
        let wd = w.data();

        let mut d_input = vec![0.0; input.len()];
        let mut dw = vec![0.0; w.len()];
        let mut db_in = vec![0.0; 3 * c];
        let mut db_rec = vec![0.0; 3 * c];
        let mut carry = vec![0.0; slab];
        let mut d_self = vec![0.0; 3 * c * n];
        let mut d_nbr = vec![0.0; 3 * c * n];
        let mut tmp = vec![0.0; slab];
        let sz = 3 * c * c;

        for s in (0..d.steps).rev() {
            let range = s * slab..(s + 1) * slab;
            let cur = &input[range.clone()];
            let (rs, zs, ns, hs) = (
                &self.saved.reset[range.clone()],
                &self.saved.update[range.clone()],
                &self.saved.cand[range.clone()],
                &self.saved.cand_self[range.clone()],
            );
            let gs = &g[range.clone()];
            let (ro, zo, no) = (GATE_RESET * slab, GATE_UPDATE * slab, GATE_CANDIDATE * slab);
            let di = &mut d_input[range.clone()];
            for k in 0..slab {
                let dout = gs[k] + carry[k];
                let (r, z, cand) = (rs[k], zs[k], ns[k]);
                let da_z = dout * (cur[k] - cand) * z * (1.0 - z);
                let da_n = dout * (1.0 - z) * (1.0 - cand * cand);
                let da_r = da_n * hs[k] * r * (1.0 - r);
                d_self[ro + k] = da_r;
                d_self[zo + k] = da_z;
                d_self[no + k] = da_n * r;
                d_nbr[ro + k] = da_r;
                d_nbr[zo + k] = da_z;
                d_nbr[no + k] = da_n;
                di[k] = dout * z;
            }
            gemm(1.0, role(wd, c, ROLE_SELF).t(), MatRef::new(&d_self, 3 * c, n), 1.0, di);
            gemm(1.0, MatRef::new(&d_self, 3 * c, n), MatRef::new(cur, c, n).t(), 1.0, &mut dw[..sz]);
            for k in 0..3 * c {
                db_rec[k] += d_self[k * n..(k + 1) * n].iter().sum::<Float>();
                db_in[k] += d_nbr[k * n..(k + 1) * n].iter().sum::<Float>();
            }
            if s == 0 {
                continue;
            }
            let prev = &out[(s - 1) * slab..s * slab];
            let (left, right) = shifted(prev, &d);
            let dn = MatRef::new(&d_nbr, 3 * c, n);
            for (r, src) in [(ROLE_STRAIGHT, prev), (ROLE_DIAG_LEFT, &left[..]), (ROLE_DIAG_RIGHT, &right[..])] {
                gemm(1.0, dn, MatRef::new(src, c, n).t(), 1.0, &mut dw[r * sz..(r + 1) * sz]);
            }
            gemm(1.0, role(wd, c, ROLE_STRAIGHT).t(), dn, 0.0, &mut carry);
            // prev_left[t] = prev[t-1], prev_right[t] = prev[t+1]
            gemm(1.0, role(wd, c, ROLE_DIAG_LEFT).t(), dn, 0.0, &mut tmp);
            let l = d.lanes;
            for ch in 0..c {
                for b in 0..d.batch {
                    let base = ch * n + b * l;
                    for t in 0..l - 1 {
                        carry[base + t] += tmp[base + t + 1];
                    }
                }
            }
            gemm(1.0, role(wd, c, ROLE_DIAG_RIGHT).t(), dn, 0.0, &mut tmp);
            for ch in 0..c {
                for b in 0..d.batch {
                    let base = ch * n + b * l;
                    for t in 1..l {
                        carry[base + t] += tmp[base + t - 1];
                    }
                }
            }
        }

        vec![
            Some(Tensor::new(x.shape(), scatter(&d_input, &d, self.dir)).expect("shape")),
            Some(Tensor::new(w.shape(), dw).expect("shape")),
            Some(Tensor::new(&[3, c], db_in).expect("shape")),
            Some(Tensor::new(&[3, c], db_rec).expect("shape")),
        ]
    }
}

impl Graph {
    /// One correction sweep over `x[B,C,H,W]` with cell weights `w[4,3,C,C]`
    /// (roles: self, straight, diagonal-left, diagonal-right; gates: reset,
    /// update, candidate) and biases `b_in[3,C]`, `b_rec[3,C]`.
    ///
    /// The input is used as-is: squashing and the zero border are the
    /// caller's concern (the border is implicit, out-of-grid reads are zero).
    pub fn sweep(&mut self, x: Var, w: Var, b_in: Var, b_rec: Var, dir: Direction) -> Result<Var> {
        let keep = self.needs_grad(&[x, w, b_in, b_rec]);
        let (tx, tw, tbi, tbr) = (self.value(x), self.value(w), self.value(b_in), self.value(b_rec));
        let dims = dims_for(tx, tw, tbi, tbr, dir)?;
        let (value, saved) = sweep_forward(tx, tw, tbi, tbr, dir, keep)?;
        let saved = saved.unwrap_or(Saved { reset: vec![], update: vec![], cand: vec![], cand_self: vec![] });
        Ok(self.record(value, &[x, w, b_in, b_rec], SweepRule { dir, dims, saved }))
    }
}

/// Forward-only sweep on plain tensors.
pub fn sweep_values(x: &Tensor, w: &Tensor, b_in: &Tensor, b_rec: &Tensor, dir: Direction) -> Result<Tensor> {
    sweep_forward(x, w, b_in, b_rec, dir, false).map(|(t, _)| t)
}
