//! Independent scalar reference implementations.

use sdn_core::layers::Direction;
use sdn_core::{Float, Tensor};

fn sig(x: Float) -> Float {
    1.0 / (1.0 + (-x).exp())
}

/// The storage position one step "behind" `(i, j)` for `dir`, at lane
/// offset `off` (-1, 0, +1), or `None` when it falls off the grid or
/// `(i, j)` is on the first step.
fn behind(dir: Direction, i: usize, j: usize, off: isize, h: usize, w: usize) -> Option<(usize, usize)> {
    let (i, j, h, w) = (i as isize, j as isize, h as isize, w as isize);
    let (pi, pj) = match dir {
        Direction::BottomToTop => (i + 1, j + off),
        Direction::TopToBottom => (i - 1, j + off),
        Direction::LeftToRight => (i + off, j - 1),
        Direction::RightToLeft => (i + off, j + 1),
    };
    (pi >= 0 && pi < h && pj >= 0 && pj < w).then_some((pi as usize, pj as usize))
}

/// Storage positions in sweep order, one position at a time.
fn order(dir: Direction, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match dir {
        Direction::BottomToTop => (0..h).rev().for_each(|i| (0..w).for_each(|j| out.push((i, j)))),
        Direction::TopToBottom => (0..h).for_each(|i| (0..w).for_each(|j| out.push((i, j)))),
        Direction::LeftToRight => (0..w).for_each(|j| (0..h).for_each(|i| out.push((i, j)))),
        Direction::RightToLeft => (0..w).rev().for_each(|j| (0..h).for_each(|i| out.push((i, j)))),
    }
    out
}

/// Position-by-position sweep with explicit scalar sums. `w` is
/// `[role][gate][out][in]`, biases are `[gate][channel]`.
pub fn scalar_sweep(x: &Tensor, w: &Tensor, b_in: &Tensor, b_rec: &Tensor, dir: Direction) -> Tensor {
    let s = x.shape();
    let (bsz, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let wt = |role: usize, gate: usize, o: usize, i: usize| w.data()[((role * 3 + gate) * c + o) * c + i];
    let mut state = x.clone();
    for b in 0..bsz {
        for (i, j) in order(dir, h, wd) {
            let own: Vec<Float> = (0..c).map(|ch| state.at4(b, ch, i, j)).collect();
            let nb = |off: isize| -> Vec<Float> {
                match behind(dir, i, j, off, h, wd) {
                    Some((pi, pj)) => (0..c).map(|ch| state.at4(b, ch, pi, pj)).collect(),
                    None => vec![0.0; c],
                }
            };
            let (straight, left, right) = (nb(0), nb(-1), nb(1));
            let mut new = vec![0.0; c];
            for o in 0..c {
                let mut pre = [0.0; 3];
                let mut own_term = [0.0; 3];
                for gate in 0..3 {
                    let mut selfsum = b_rec.data()[gate * c + o];
                    let mut nbsum = b_in.data()[gate * c + o];
                    for k in 0..c {
                        selfsum += wt(0, gate, o, k) * own[k];
                        nbsum += wt(1, gate, o, k) * straight[k] + wt(2, gate, o, k) * left[k] + wt(3, gate, o, k) * right[k];
                    }
                    own_term[gate] = selfsum;
                    pre[gate] = nbsum;
                }
                let r = sig(own_term[0] + pre[0]);
                let z = sig(own_term[1] + pre[1]);
                let n = (r * own_term[2] + pre[2]).tanh();
                new[o] = z * own[o] + (1.0 - z) * n;
            }
            for o in 0..c {
                state.set4(b, o, i, j, new[o]);
            }
        }
    }
    state
}

/// Direct 6-nested-loop cross-correlation.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (bsz, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
    for b in 0..bsz {
        for co in 0..cout {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ii = (oi * stride + ki) as isize - pad as isize;
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    acc += x.at4(b, ci, ii as usize, jj as usize) * k.data()[((co * cin + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    out.set4(b, co, oi, oj, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution by direct scatter: each input pixel stamps the
/// kernel onto the stride-spaced output grid, which is then cropped by
/// `floor((k - s) / 2)` on the top/left to size `s*H x s*W`.
pub fn naive_conv_transposed(x: &Tensor, k: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
    let (bsz, cx, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (stride * h, stride * w);
    let (pt, pl) = ((kh - stride) / 2, (kw - stride) / 2);
    let mut out = Tensor::zeros(&[bsz, cout, oh, ow]);
    for b in 0..bsz {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    out.set4(b, co, i, j, bias.data()[co]);
                }
            }
        }
        for ci in 0..cx {
            for i in 0..h {
                for j in 0..w {
                    let v = x.at4(b, ci, i, j);
                    for co in 0..cout {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let oi = (i * stride + ki) as isize - pt as isize;
                                let oj = (j * stride + kj) as isize - pl as isize;
                                if oi >= 0 && oj >= 0 && (oi as usize) < oh && (oj as usize) < ow {
                                    let cur = out.at4(b, co, oi as usize, oj as usize);
                                    let kv = k.data()[((ci * cout + co) * kh + ki) * kw + kj];
                                    out.set4(b, co, oi as usize, oj as usize, cur + v * kv);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
