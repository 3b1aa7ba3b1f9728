//! Total-variation penalty on attention-aware features and the composite
//! training loss.
//!
//! For one channel `A_c` (H×W) the penalty is `‖D1·A_c‖² + ‖A_c·D2‖²` with
//! `D1` the (H-1)×H forward row-difference matrix and `D2` the W×(W-1)
//! column-difference matrix. At runtime both products are evaluated as
//! adjacent-difference stencils; [`TvOperands`] keeps the dense matrices
//! for cross-checking.

use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Default weight of the TV term.
pub const DEFAULT_MU: f64 = 0.1;

fn planes(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("tv_penalty", alloc::format!("need at least H×W, got {shape:?}")));
    }
    Ok((shape[shape.len() - 2], shape[shape.len() - 1]))
}

fn plane_penalty<T: Real>(a: &[T], h: usize, w: usize) -> T {
    let mut s = T::zero();
    for r in 0..h {
        let row = &a[r * w..(r + 1) * w];
        if r + 1 < h {
            let next = &a[(r + 1) * w..(r + 2) * w];
            s += row.iter().zip(next).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
        }
        s += row.windows(2).map(|p| (p[0] - p[1]) * (p[0] - p[1])).sum::<T>();
    }
    s
}

fn plane_gradient<T: Real>(a: &[T], h: usize, w: usize, scale: T, out: &mut [T]) {
    let two = T::of(2.0) * scale;
    for r in 0..h {
        for c in 0..w {
            let v = a[r * w + c];
            let mut g = T::zero();
            if r + 1 < h {
                g += v - a[(r + 1) * w + c];
            }
            if r > 0 {
                g += v - a[(r - 1) * w + c];
            }
            if c + 1 < w {
                g += v - a[r * w + c + 1];
            }
            if c > 0 {
                g += v - a[r * w + c - 1];
            }
            out[r * w + c] = two * g;
        }
    }
}

/// Sum over channels of squared vertical and horizontal neighbour
/// differences. Accepts any tensor whose last two axes are H×W.
pub fn tv_penalty<T: Real>(a: &Tensor<T>) -> Result<T> {
    let (h, w) = planes(a.shape())?;
    Ok(a.data().chunks(h * w).map(|p| plane_penalty(p, h, w)).sum())
}

/// Exact gradient of [`tv_penalty`], `2(D1ᵀD1·A_c + A_c·D2·D2ᵀ)` per channel.
pub fn tv_gradient<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = planes(a.shape())?;
    let mut out = vec![T::zero(); a.len()];
    for (p, o) in a.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        plane_gradient(p, h, w, T::one(), o);
    }
    Tensor::new(a.shape(), out)
}

/// Dense difference operators for an H×W plane.
#[derive(Clone, Debug, PartialEq)]
pub struct TvOperands {
    pub h: usize,
    pub w: usize,
    /// (H-1)×H, row-major.
    pub d1: Vec<f64>,
    /// W×(W-1), row-major.
    pub d2: Vec<f64>,
}

impl TvOperands {
    pub fn new(h: usize, w: usize) -> Self {
        let mut d1 = vec![0.0; h.saturating_sub(1) * h];
        for i in 0..h.saturating_sub(1) {
            d1[i * h + i] = 1.0;
            d1[i * h + i + 1] = -1.0;
        }
        let wm = w.saturating_sub(1);
        let mut d2 = vec![0.0; w * wm];
        for j in 0..wm {
            d2[j * wm + j] = 1.0;
            d2[(j + 1) * wm + j] = -1.0;
        }
        Self { h, w, d1, d2 }
    }

    fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k).map(|l| a[i * k + l] * b[l * m + j]).sum();
            }
        }
        out
    }

    fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = a[i * m + j];
            }
        }
        out
    }

    /// `‖D1·A‖_F² + ‖A·D2‖_F²` by explicit matrix products.
    pub fn penalty(&self, plane: &[f64]) -> f64 {
        let (h, w) = (self.h, self.w);
        let rows = Self::matmul(&self.d1, plane, h - 1, h, w);
        let cols = Self::matmul(plane, &self.d2, h, w, w - 1);
        rows.iter().chain(&cols).map(|v| v * v).sum()
    }

    /// `2(D1ᵀD1·A + A·D2·D2ᵀ)` by explicit matrix products.
    pub fn gradient(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let d1t = Self::transpose(&self.d1, h - 1, h);
        let d1td1 = Self::matmul(&d1t, &self.d1, h, h - 1, h);
        let d2t = Self::transpose(&self.d2, w, w - 1);
        let d2d2t = Self::matmul(&self.d2, &d2t, w, w - 1, w);
        let left = Self::matmul(&d1td1, plane, h, h, w);
        let right = Self::matmul(plane, &d2d2t, h, w, w);
        left.iter().zip(&right).map(|(a, b)| 2.0 * (a + b)).collect()
    }
}

/// Per-step loss components.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_tri: f64,
    /// Indexed by attention block; blocks without attention contribute no entry.
    pub l_tv_per_block: Vec<(usize, f64)>,
    pub mu: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn tv_sum(&self) -> f64 {
        self.l_tv_per_block.iter().map(|(_, v)| v).sum()
    }
}

/// `total = l_tri + mu · Σ tv`.
pub fn total_loss(l_tri: f64, tv: &[(usize, f64)], mu: f64) -> Result<LossBreakdown> {
    if !(mu >= 0.0) {
        return Err(Error::Contract(alloc::format!("mu must be non-negative, got {mu}")));
    }
    let sum: f64 = tv.iter().map(|(_, v)| v).sum();
    Ok(LossBreakdown { l_tri, l_tv_per_block: tv.to_vec(), mu, total: l_tri + mu * sum })
}

impl<T: Real> Graph<T> {
    /// TV penalty of `[N, C, H, W]` features, averaged over the batch.
    pub fn tv_penalty(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        av.expect_rank("tv_penalty", 4)?;
        let n = T::of(av.dim(0) as f64);
        let out = Tensor::scalar(tv_penalty(av)? / n);
        self.push("tv_penalty", out, &[a], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let (h, w) = planes(i[0].shape())?;
            let scale = g.item() / n;
            let mut out = vec![T::zero(); i[0].len()];
            for (p, o) in i[0].data().chunks(h * w).zip(out.chunks_mut(h * w)) {
                plane_gradient(p, h, w, scale, o);
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), out)?)])
        })
    }
}
