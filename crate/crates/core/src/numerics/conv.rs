//! 2-D convolution and transposed convolution via im2col.
//!
//! Transposed convolution uses the "doubling" extent convention: with stride
//! `s` an `H x W` input produces an `s*H x s*W` output. It is exactly the
//! adjoint of [`Graph::conv2d`] run on the `s*H x s*W` image with padding
//! `floor((k - s) / 2)` before and `ceil((k - s) / 2)` after each axis, which
//! for the usual `4x4`, stride-2 kernels is padding 1 on every side.

use crate::error::{Error, Result};
use crate::numerics::linalg::{gemm, MatRef};
use crate::numerics::{Backward, Graph, Tensor, Var};
use crate::Float;

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn out_extent(n: usize, pad_lo: usize, pad_hi: usize, k: usize, stride: usize, axis: &str) -> Result<usize> {
    let padded = n + pad_lo + pad_hi;
    if padded < k {
        return Err(Error::shape(
            "conv2d",
            format!("{} axis: padded extent {} is smaller than kernel {} (negative output extent)", axis, padded, k),
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn im2col(x: &[Float], g: &Geom, cols: &mut [Float]) {
    let ncol = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad_top as isize;
                    let drow = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad_left as isize;
                        *d = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto the image (adjoint of `im2col`).
fn col2im(cols: &[Float], g: &Geom, x: &mut [Float]) {
    let ncol = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad_top as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad_left as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            x[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn check_kernel(x: &Tensor, k: &Tensor, b: &Tensor, in_axis: usize, op: &'static str) -> Result<[usize; 4]> {
    if x.rank() != 4 {
        return Err(Error::shape(op, format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    if k.rank() != 4 {
        return Err(Error::shape(op, format!("kernel must be rank 4, got {:?}", k.shape())));
    }
    if k.shape()[in_axis] != x.shape()[1] {
        return Err(Error::shape(
            op,
            format!("axis 1 (channels) of input is {} but kernel axis {} is {}", x.shape()[1], in_axis, k.shape()[in_axis]),
        ));
    }
    let cout = k.shape()[1 - in_axis];
    if b.shape() != [cout] {
        return Err(Error::shape(op, format!("bias must be [{}], got {:?}", cout, b.shape())));
    }
    let s = k.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

fn add_channel_bias(out: &mut [Float], bias: &[Float], plane: usize) {
    for (c, bv) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bv);
    }
}

fn bias_grad(grad: &[Float], bsz: usize, cout: usize, plane: usize) -> Vec<Float> {
    let mut db = vec![0.0; cout];
    for b in 0..bsz {
        for (c, d) in db.iter_mut().enumerate() {
            let off = (b * cout + c) * plane;
            *d += grad[off..off + plane].iter().sum::<Float>();
        }
    }
    db
}

struct Conv2dRule {
    geom: Geom,
}

impl Backward for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, k) = (inputs[0], inputs[1]);
        let g = self.geom;
        let bsz = x.shape()[0];
        let cout = k.shape()[0];
        let (rows, ncol) = (g.rows(), g.cols());
        let in_plane = g.c * g.h * g.w;
        let mut cols = vec![0.0; rows * ncol];
        let mut dcols = vec![0.0; rows * ncol];
        let mut dx = vec![0.0; x.len()];
        let mut dk = vec![0.0; k.len()];
        let kmat = MatRef::new(k.data(), cout, rows);
        for b in 0..bsz {
            let gb = &grad.data()[b * cout * ncol..(b + 1) * cout * ncol];
            im2col(&x.data()[b * in_plane..(b + 1) * in_plane], &g, &mut cols);
            gemm(1.0, MatRef::new(gb, cout, ncol), MatRef::new(&cols, rows, ncol).t(), 1.0, &mut dk);
            gemm(1.0, kmat.t(), MatRef::new(gb, cout, ncol), 0.0, &mut dcols);
            col2im(&dcols, &g, &mut dx[b * in_plane..(b + 1) * in_plane]);
        }
        let db = bias_grad(grad.data(), bsz, cout, ncol);
        vec![
            Some(Tensor::new(x.shape(), dx).expect("shape")),
            Some(Tensor::new(k.shape(), dk).expect("shape")),
            Some(Tensor::new(&[cout], db).expect("shape")),
        ]
    }
}

struct ConvTransposedRule {
    geom: Geom,
}

impl Backward for ConvTransposedRule {
    fn name(&self) -> &'static str {
        "conv2d_transposed"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, k) = (inputs[0], inputs[1]);
        let g = self.geom;
        let [bsz, cx, _, _] = x.dims4().expect("rank 4");
        let cout = g.c;
        let (rows, ncol) = (g.rows(), g.cols());
        let out_plane = cout * g.h * g.w;
        let mut cols = vec![0.0; rows * ncol];
        let mut dx = vec![0.0; x.len()];
        let mut dk = vec![0.0; k.len()];
        let kmat = MatRef::new(k.data(), cx, rows);
        for b in 0..bsz {
            im2col(&grad.data()[b * out_plane..(b + 1) * out_plane], &g, &mut cols);
            let xb = &x.data()[b * cx * ncol..(b + 1) * cx * ncol];
            gemm(1.0, kmat, MatRef::new(&cols, rows, ncol), 0.0, &mut dx[b * cx * ncol..(b + 1) * cx * ncol]);
            gemm(1.0, MatRef::new(xb, cx, ncol), MatRef::new(&cols, rows, ncol).t(), 1.0, &mut dk);
        }
        let db = bias_grad(grad.data(), bsz, cout, g.h * g.w);
        vec![
            Some(Tensor::new(x.shape(), dx).expect("shape")),
            Some(Tensor::new(k.shape(), dk).expect("shape")),
            Some(Tensor::new(&[cout], db).expect("shape")),
        ]
    }
}

impl Graph {
    /// Cross-correlation of `x[B,Cin,H,W]` with `kernel[Cout,Cin,kh,kw]`,
    /// symmetric zero padding `pad`. Output extent is
    /// `floor((H + 2*pad - kh) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        let [cout, cin, kh, kw] = check_kernel(tx, tk, tb, 1, "conv2d")?;
        let [bsz, _, h, w] = tx.dims4()?;
        let ho = out_extent(h, pad, pad, kh, stride, "height")?;
        let wo = out_extent(w, pad, pad, kw, stride, "width")?;
        let geom = Geom { c: cin, h, w, kh, kw, stride, pad_top: pad, pad_left: pad, ho, wo };
        let (rows, ncol) = (geom.rows(), geom.cols());
        let mut cols = vec![0.0; rows * ncol];
        let mut out = vec![0.0; bsz * cout * ncol];
        let in_plane = cin * h * w;
        for b in 0..bsz {
            im2col(&tx.data()[b * in_plane..(b + 1) * in_plane], &geom, &mut cols);
            let ob = &mut out[b * cout * ncol..(b + 1) * cout * ncol];
            gemm(1.0, MatRef::new(tk.data(), cout, rows), MatRef::new(&cols, rows, ncol), 0.0, ob);
            add_channel_bias(ob, tb.data(), ncol);
        }
        let value = Tensor::new(&[bsz, cout, ho, wo], out)?;
        Ok(self.record(value, &[x, kernel, bias], Conv2dRule { geom }))
    }

    /// `conv2d` with padding `(k - 1) / 2`, preserving the spatial extent at stride 1.
    pub fn conv2d_same(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[2] % 2 == 0 || ks[3] % 2 == 0 || ks[2] != ks[3] {
            return Err(Error::shape("conv2d_same", format!("same padding needs a square odd kernel, got {:?}", ks)));
        }
        self.conv2d(x, kernel, bias, 1, (ks[2] - 1) / 2)
    }

    /// Transposed convolution of `x[B,Cx,H,W]` with `kernel[Cx,Cout,kh,kw]`,
    /// producing `[B,Cout,stride*H,stride*W]`. Requires `kh, kw >= stride`.
    pub fn conv2d_transposed(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv2d_transposed stride must be >= 1"));
        }
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        let [cx, cout, kh, kw] = check_kernel(tx, tk, tb, 0, "conv2d_transposed")?;
        if kh < stride || kw < stride {
            return Err(Error::shape(
                "conv2d_transposed",
                format!("kernel {}x{} smaller than stride {} (negative output extent)", kh, kw, stride),
            ));
        }
        let [bsz, _, h, w] = tx.dims4()?;
        let (oh, ow) = (stride * h, stride * w);
        let geom = Geom {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad_top: (kh - stride) / 2,
            pad_left: (kw - stride) / 2,
            ho: h,
            wo: w,
        };
        let (rows, ncol) = (geom.rows(), geom.cols());
        let mut cols = vec![0.0; rows * ncol];
        let out_plane = cout * oh * ow;
        let mut out = vec![0.0; bsz * out_plane];
        let kmat = MatRef::new(tk.data(), cx, rows);
        for b in 0..bsz {
            let xb = &tx.data()[b * cx * ncol..(b + 1) * cx * ncol];
            gemm(1.0, kmat.t(), MatRef::new(xb, cx, ncol), 0.0, &mut cols);
            let ob = &mut out[b * out_plane..(b + 1) * out_plane];
            col2im(&cols, &geom, ob);
            add_channel_bias(ob, tb.data(), oh * ow);
        }
        let value = Tensor::new(&[bsz, cout, oh, ow], out)?;
        Ok(self.record(value, &[x, kernel, bias], ConvTransposedRule { geom }))
    }
}
