//! 2-D convolution as one im2col GEMM over the whole batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {x:?}, weight {w:?}")));
        }
        if x[1] != w[1] {
            return Err(Error::shape("conv2d", format!("input channels {} vs weight {:?}", x[1], w)));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} exceeds padded input {h}x{wd}+{pad}")));
        }
        Ok(Self { cin: x[1], h, w: wd, cout: w[0], kh, kw, stride, pad, oh: (h + 2 * pad - kh) / stride + 1, ow: (wd + 2 * pad - kw) / stride + 1 })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Source offset for kernel row `ky` and output row `oy`, if inside the image.
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Unrolls one sample into columns `off..off + p` of `col`, whose rows
    /// are `ld` long.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T], ld: usize, off: usize) {
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut col[((c * self.kh + ky) * self.kw + kx) * ld + off..][..self.p()];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ky, self.h) {
                            None => dst.fill(T::zero()),
                            Some(iy) => {
                                let src = &x[(c * self.h + iy) * self.w..][..self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = self.src(ox, kx, self.w).map_or(T::zero(), |ix| src[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col).
    fn col2im<T: Real>(&self, col: &[T], ld: usize, off: usize, x: &mut [T]) {
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &col[((c * self.kh + ky) * self.kw + kx) * ld + off..][..self.p()];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        let dst = &mut x[(c * self.h + iy) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[ix] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Columns of the whole batch: `[cin*kh*kw, n*p]`.
    fn unroll<T: Real>(&self, x: &[T], n: usize) -> Vec<T> {
        let (p, plane) = (self.p(), self.cin * self.h * self.w);
        let mut col = vec![T::zero(); self.k() * n * p];
        for s in 0..n {
            self.im2col(&x[s * plane..(s + 1) * plane], &mut col, n * p, s * p);
        }
        col
    }
}

/// `[c, n*p]` to `[n, c, p]`, or back when `inverse` is set.
fn regroup<T: Real>(src: &[T], n: usize, c: usize, p: usize, inverse: bool) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for s in 0..n {
        for ch in 0..c {
            let (a, b) = ((ch * n + s) * p, (s * c + ch) * p);
            let (from, to) = if inverse { (b, a) } else { (a, b) };
            out[to..to + p].copy_from_slice(&src[from..from + p]);
        }
    }
    out
}

/// Plain (non-recorded) convolution, also used as a reference in tests.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), w.shape(), stride, pad)?;
    let n = x.dim(0);
    let (k, p) = (geo.k(), geo.p());
    let col = geo.unroll(x.data(), n);
    let mut z = vec![T::zero(); geo.cout * n * p];
    gemm(geo.cout, n * p, k, w.data(), false, &col, false, T::zero(), &mut z);
    Tensor::new([n, geo.cout, geo.oh, geo.ow], regroup(&z, n, geo.cout, p, false))
}

impl<T: Real> Graph<T> {
    /// `input[N, Cin, H, W] * weight[Cout, Cin, kh, kw]` with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geo = Geometry::new(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = conv2d_forward(self.value(x), self.value(w), stride, pad)?;
        self.push("conv2d", out, &[x, w], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]| {
            let (xv, wv) = (i[0], i[1]);
            let n = xv.dim(0);
            let (k, p) = (geo.k(), geo.p());
            let gz = regroup(g.data(), n, geo.cout, p, true);
            let gw = if need[1] {
                let col = geo.unroll(xv.data(), n);
                let mut gw = vec![T::zero(); wv.len()];
                gemm(geo.cout, k, n * p, &gz, false, &col, true, T::zero(), &mut gw);
                Some(Tensor::new(wv.shape(), gw)?)
            } else {
                None
            };
            let gx = if need[0] {
                let mut dcol = vec![T::zero(); k * n * p];
                gemm(k, n * p, geo.cout, wv.data(), true, &gz, false, T::zero(), &mut dcol);
                let plane = geo.cin * geo.h * geo.w;
                let mut gx = vec![T::zero(); xv.len()];
                for (s, gxs) in gx.chunks_mut(plane).enumerate() {
                    geo.col2im(&dcol, n * p, s * p, gxs);
                }
                Some(Tensor::new(xv.shape(), gx)?)
            } else {
                None
            };
            Ok(vec![gx, gw])
        })
    }
}
