//! Elementwise, reduction, affine and resampling primitives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::Backward;
use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

impl<T, F> Backward<T> for F
where
    T: Real,
    F: Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>, &[bool]) -> Grads<T>,
{
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        self(inputs, output, grad, needs)
    }
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", out, &[a, b], |_: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", out, &[a, b], |_: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", out, &[a, b], |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]| {
            let ga = if n[0] { Some(g.zip_map(i[1], |g, y| g * y)?) } else { None };
            let gb = if n[1] { Some(g.zip_map(i[0], |g, x| g * x)?) } else { None };
            Ok(vec![ga, gb])
        })
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * k);
        self.push("scale", out, &[a], move |_: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(g.map(|v| v * k))]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, &[a], |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(Tensor::full(i[0].shape(), g.item()))]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::of(self.value(a).len() as f64);
        let out = Tensor::scalar(self.value(a).sum() / n);
        self.push("mean", out, &[a], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(Tensor::full(i[0].shape(), g.item() / n))]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push("relu", out, &[a], |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            Ok(vec![Some(g.zip_map(i[0], |g, x| if x > T::zero() { g } else { T::zero() })?)])
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, &[a], |_: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            Ok(vec![Some(g.zip_map(o, |g, s| g * s * (T::one() - s))?)])
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.exp());
        self.push("exp", out, &[a], |_: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(g.zip_map(o, |g, e| g * e)?)]))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.ln());
        self.push("ln", out, &[a], |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| Ok(vec![Some(g.zip_map(i[0], |g, x| g / x)?)]))
    }

    /// Fully connected layer: `x[N, I] · w[O, I]ᵀ + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        xv.expect_rank("linear", 2)?;
        wv.expect_rank("linear", 2)?;
        let (n, fan_in) = (xv.dim(0), xv.dim(1));
        let fan_out = wv.dim(0);
        if wv.dim(1) != fan_in || bv.shape() != [fan_out] {
            return Err(Error::shape("linear", format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); n * fan_out];
        for (xr, orow) in xv.data().chunks(fan_in).zip(out.chunks_mut(fan_out)) {
            for ((o, wr), &bias) in orow.iter_mut().zip(wv.data().chunks(fan_in)).zip(bv.data()) {
                *o = dot(xr, wr) + bias;
            }
        }
        let out = Tensor::new([n, fan_out], out)?;
        self.push("linear", out, &[x, w, b], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]| {
            let (xv, wv) = (i[0], i[1]);
            let gx = if need[0] {
                let mut gx = vec![T::zero(); n * fan_in];
                for (gr, gxr) in g.data().chunks(fan_out).zip(gx.chunks_mut(fan_in)) {
                    for (&go, wr) in gr.iter().zip(wv.data().chunks(fan_in)) {
                        axpy(go, wr, gxr);
                    }
                }
                Some(Tensor::new([n, fan_in], gx)?)
            } else {
                None
            };
            let gw = if need[1] {
                let mut gw = vec![T::zero(); fan_out * fan_in];
                for (gr, xr) in g.data().chunks(fan_out).zip(xv.data().chunks(fan_in)) {
                    for (&go, gwr) in gr.iter().zip(gw.chunks_mut(fan_in)) {
                        axpy(go, xr, gwr);
                    }
                }
                Some(Tensor::new([fan_out, fan_in], gw)?)
            } else {
                None
            };
            let gb = if need[2] {
                let mut gb = vec![T::zero(); fan_out];
                for gr in g.data().chunks(fan_out) {
                    for (a, &v) in gb.iter_mut().zip(gr) {
                        *a += v;
                    }
                }
                Some(Tensor::new([fan_out], gb)?)
            } else {
                None
            };
            Ok(vec![gx, gw, gb])
        })
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_rank("global_avg_pool", 4)?;
        let (n, c) = (xv.dim(0), xv.dim(1));
        let plane = xv.dim(2) * xv.dim(3);
        let inv = T::one() / T::of(plane as f64);
        let out: Vec<T> = xv.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new([n, c], out)?;
        self.push("global_avg_pool", out, &[x], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let mut gx = Vec::with_capacity(i[0].len());
            for &gv in g.data() {
                gx.extend(core::iter::repeat_n(gv * inv, plane));
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), gx)?)])
        })
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_rank("upsample2x", 4)?;
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let mut out = Vec::with_capacity(xv.len() * 4);
        for plane in xv.data().chunks(h * w) {
            for r in 0..2 * h {
                let row = &plane[(r / 2) * w..(r / 2 + 1) * w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let out = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        self.push("upsample2x", out, &[x], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let mut gx = vec![T::zero(); i[0].len()];
            for (gp, xp) in g.data().chunks(4 * h * w).zip(gx.chunks_mut(h * w)) {
                for r in 0..2 * h {
                    for col in 0..2 * w {
                        xp[(r / 2) * w + col / 2] += gp[r * 2 * w + col];
                    }
                }
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), gx)?)])
        })
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, shape: &[usize], v: &[f64]) -> Var {
        g.leaf(Tensor::from_f64(shape, v).unwrap(), true)
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[3], &[-1.0, 0.0, 2.0]);
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1], &[0.0]);
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        let b = leaf(&mut g, &[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn ln_of_zero_is_rejected() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1], &[0.0]);
        assert!(matches!(g.ln(a), Err(Error::NonFinite { op: "ln" })));
    }

    #[test]
    fn upsample_repeats_each_pixel() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 1, 1, 2], &[1.0, 2.0]);
        let u = g.upsample2x(x).unwrap();
        assert_eq!(g.value(u).shape(), &[1, 1, 2, 4]);
        assert_eq!(g.value(u).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn linear_matches_hand_product() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 2], &[1.0, 2.0]);
        let w = leaf(&mut g, &[2, 2], &[1.0, 0.0, 3.0, -1.0]);
        let b = leaf(&mut g, &[2], &[0.5, 0.0]);
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.0]);
    }
}
