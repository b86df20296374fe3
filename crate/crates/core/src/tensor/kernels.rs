//! Slice-level kernels shared by the plain ops and the tape.
//!
//! Loop orders are fixed; do not reorder reductions without accepting that
//! every frozen trajectory changes.

use super::Element;
use crate::error::{Error, Result};

pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::Dimension(format!("matmul {a:?} · {b:?}"))),
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`. Zero entries of `a` are skipped.
pub fn matmul_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.fill(T::zero());
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`.
pub fn matmul_nt_acc<T: Element>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot = grow
                .iter()
                .zip(brow)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            out[i * k + p] = out[i * k + p] + dot;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`.
pub fn matmul_tn_acc<T: Element>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    pub fn oh(&self) -> usize {
        self.h - 2
    }
    pub fn ow(&self) -> usize {
        self.w - 2
    }
    pub fn out_len(&self) -> usize {
        self.batch * self.c_out * self.oh() * self.ow()
    }
    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.oh(), self.ow()]
    }
}

pub fn conv_dims(x: &[usize], k: &[usize]) -> Result<ConvDims> {
    match (x, k) {
        ([b, ci, h, w], [co, ci2, 3, 3]) if ci == ci2 => {
            if *h < 3 || *w < 3 {
                return Err(Error::Dimension(format!(
                    "conv2d input {x:?} smaller than 3×3"
                )));
            }
            Ok(ConvDims {
                batch: *b,
                c_in: *ci,
                c_out: *co,
                h: *h,
                w: *w,
            })
        }
        _ => Err(Error::Dimension(format!(
            "conv2d input {x:?} with kernel {k:?}"
        ))),
    }
}

pub fn conv2d_forward<T: Element>(x: &[T], k: &[T], out: &mut [T], d: &ConvDims) {
    let (oh, ow) = (d.oh(), d.ow());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let o = &mut out[(b * d.c_out + co) * oh * ow..][..oh * ow];
            o.fill(T::zero());
            for ci in 0..d.c_in {
                let xin = &x[(b * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                let ker = &k[(co * d.c_in + ci) * 9..][..9];
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = o[i * ow + j];
                        for di in 0..3 {
                            for dj in 0..3 {
                                acc = acc + ker[di * 3 + dj] * xin[(i + di) * d.w + j + dj];
                            }
                        }
                        o[i * ow + j] = acc;
                    }
                }
            }
        }
    }
}

/// Accumulates input and kernel gradients of a valid 3×3 cross-correlation.
pub fn conv2d_backward<T: Element>(
    x: &[T],
    k: &[T],
    gout: &[T],
    gx: Option<&mut [T]>,
    gk: Option<&mut [T]>,
    d: &ConvDims,
) {
    let (oh, ow) = (d.oh(), d.ow());
    if let Some(gx) = gx {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let g = &gout[(b * d.c_out + co) * oh * ow..][..oh * ow];
                for ci in 0..d.c_in {
                    let gxi = &mut gx[(b * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                    let ker = &k[(co * d.c_in + ci) * 9..][..9];
                    for i in 0..oh {
                        for j in 0..ow {
                            let gv = g[i * ow + j];
                            for di in 0..3 {
                                for dj in 0..3 {
                                    let idx = (i + di) * d.w + j + dj;
                                    gxi[idx] = gxi[idx] + ker[di * 3 + dj] * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(gk) = gk {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let g = &gout[(b * d.c_out + co) * oh * ow..][..oh * ow];
                for ci in 0..d.c_in {
                    let xin = &x[(b * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
                    let gki = &mut gk[(co * d.c_in + ci) * 9..][..9];
                    for di in 0..3 {
                        for dj in 0..3 {
                            let mut acc = gki[di * 3 + dj];
                            for i in 0..oh {
                                for j in 0..ow {
                                    acc = acc + g[i * ow + j] * xin[(i + di) * d.w + j + dj];
                                }
                            }
                            gki[di * 3 + dj] = acc;
                        }
                    }
                }
            }
        }
    }
}

pub fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
