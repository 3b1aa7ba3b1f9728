//! Parameterised layers and the per-forward binding context.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Gradients, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Ctx<'a, T: Real> {
    pub graph: Graph<T>,
    pub mode: Mode,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self { graph: Graph::new(), mode, store, bound: vec![None; store.len()], updates: Vec::new() }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Leaf node for a trainable parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), true);
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    /// Buffer writes are staged and applied by [`commit`] so a forward
    /// pass never mutates the store it reads from.
    pub fn stage_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        core::mem::take(&mut self.updates)
    }

    /// Gradient of every trainable parameter, in store order; zeros for
    /// parameters the loss never touched.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.store
            .trainable_ids()
            .map(|id| {
                let g = match self.bound[id.index()] {
                    Some(v) => grads.wrt(v),
                    None => Tensor::zeros(self.store.get(id).shape()),
                };
                (id, g)
            })
            .collect()
    }
}

/// Applies staged buffer updates.
pub fn commit<T: Real>(store: &mut ParamStore<T>, updates: Vec<(ParamId, Tensor<T>)>) {
    for (id, v) in updates {
        *store.get_mut(id) = v;
    }
}

fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl rand::RngCore) -> Tensor<T> {
    let std = num_traits::Float::sqrt(2.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal) * std)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Bias-free convolution with He fan-in initialisation.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut impl rand::RngCore) -> Self {
        let w = he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        Self { weight: store.add(name.to_string() + ".weight", w), stride, pad: kernel / 2 }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.graph.conv2d(x, w, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl rand::RngCore) -> Self {
        let w = he_normal(&[fan_out, fan_in], fan_in, rng);
        Self { weight: store.add(name.to_string() + ".weight", w), bias: store.add(name.to_string() + ".bias", Tensor::zeros(&[fan_out])) }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        ctx.graph.linear(x, w, b)
    }
}

/// Batch normalisation over `[N, C]` or `[N, C, H, W]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub tracked: ParamId,
    name: String,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let n = |s: &str| [name, s].concat();
        Self {
            gamma: store.add(n(".gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(n(".beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(n(".running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(n(".running_var"), Tensor::full(&[channels], T::one())),
            tracked: store.add_buffer(n(".tracked"), Tensor::zeros(&[1])),
            name: name.to_string(),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var_unbiased) = batch_norm_train(&mut ctx.graph, x, gamma, beta)?;
                let m = T::of(BN_MOMENTUM);
                let blend = |old: &Tensor<T>, new: &[T]| {
                    let data = old.data().iter().zip(new).map(|(&o, &n)| (T::one() - m) * o + m * n).collect();
                    Tensor::new(old.shape(), data)
                };
                let rm = blend(ctx.buffer(self.running_mean), &mean)?;
                let rv = blend(ctx.buffer(self.running_var), &var_unbiased)?;
                let tracked = ctx.buffer(self.tracked).map(|t| t + T::one());
                ctx.stage_update(self.running_mean, rm);
                ctx.stage_update(self.running_var, rv);
                ctx.stage_update(self.tracked, tracked);
                Ok(y)
            }
            Mode::Eval => {
                if ctx.buffer(self.tracked).item() <= T::zero() {
                    return Err(Error::UninitializedStats(self.name.clone()));
                }
                let mean = ctx.buffer(self.running_mean).clone();
                let var = ctx.buffer(self.running_var).clone();
                batch_norm_eval(&mut ctx.graph, x, gamma, beta, mean, var)
            }
        }
    }
}

struct Layout {
    n: usize,
    c: usize,
    plane: usize,
}

fn layout(shape: &[usize], channels: usize) -> Result<Layout> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape("batch_norm", alloc::format!("input {shape:?} with {channels} channels")));
    }
    Ok(Layout { n: shape[0], c: shape[1], plane: shape[2..].iter().product() })
}

/// Returns the output plus batch mean and unbiased batch variance.
fn batch_norm_train<T: Real>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<T>, Vec<T>)> {
    let xv = g.value(x);
    let Layout { n, c, plane } = layout(xv.shape(), g.value(gamma).len())?;
    let m = n * plane;
    let mf = T::of(m as f64);
    let eps = T::of(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for (i, chunk) in xv.data().chunks(plane).enumerate() {
        mean[i % c] += chunk.iter().copied().sum::<T>();
    }
    mean.iter_mut().for_each(|v| *v /= mf);
    for (i, chunk) in xv.data().chunks(plane).enumerate() {
        let mu = mean[i % c];
        var[i % c] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
    }
    let unbiased: Vec<T> = var.iter().map(|&s| if m > 1 { s / T::of((m - 1) as f64) } else { s }).collect();
    var.iter_mut().for_each(|v| *v /= mf);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gv, bv) = (g.value(gamma).data(), g.value(beta).data());
    let mut xhat = Vec::with_capacity(xv.len());
    let mut out = Vec::with_capacity(xv.len());
    for (i, chunk) in xv.data().chunks(plane).enumerate() {
        let ch = i % c;
        for &v in chunk {
            let h = (v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(gv[ch] * h + bv[ch]);
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let y = g.push("batch_norm", out, &[x, gamma, beta], move |i: &[&Tensor<T>], _: &Tensor<T>, go: &Tensor<T>, need: &[bool]| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (idx, (gchunk, hchunk)) in go.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
            let ch = idx % c;
            for (&gv, &h) in gchunk.iter().zip(hchunk) {
                dgamma[ch] += gv * h;
                dbeta[ch] += gv;
            }
        }
        let gx = if need[0] {
            let gamma = i[1].data();
            let mut gx = Vec::with_capacity(go.len());
            for (idx, (gchunk, hchunk)) in go.data().chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                let ch = idx % c;
                let k = gamma[ch] * inv_std[ch] / mf;
                for (&gv, &h) in gchunk.iter().zip(hchunk) {
                    gx.push(k * (mf * gv - dbeta[ch] - h * dgamma[ch]));
                }
            }
            Some(Tensor::new(i[0].shape(), gx)?)
        } else {
            None
        };
        Ok(vec![gx, Some(Tensor::new([c], dgamma)?), Some(Tensor::new([c], dbeta)?)])
    })?;
    Ok((y, mean, unbiased))
}

fn batch_norm_eval<T: Real>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, mean: Tensor<T>, var: Tensor<T>) -> Result<Var> {
    let xv = g.value(x);
    let Layout { c, plane, .. } = layout(xv.shape(), g.value(gamma).len())?;
    let eps = T::of(BN_EPS);
    let inv_std: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gv, bv) = (g.value(gamma).data(), g.value(beta).data());
    let mut out = Vec::with_capacity(xv.len());
    for (idx, chunk) in xv.data().chunks(plane).enumerate() {
        let ch = idx % c;
        out.extend(chunk.iter().map(|&v| gv[ch] * (v - mean.data()[ch]) * inv_std[ch] + bv[ch]));
    }
    let out = Tensor::new(xv.shape(), out)?;
    g.push("batch_norm_eval", out, &[x, gamma, beta], move |i: &[&Tensor<T>], _: &Tensor<T>, go: &Tensor<T>, _: &[bool]| {
        let gamma = i[1].data();
        let mut gx = Vec::with_capacity(go.len());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (idx, (gchunk, xchunk)) in go.data().chunks(plane).zip(i[0].data().chunks(plane)).enumerate() {
            let ch = idx % c;
            for (&gval, &xval) in gchunk.iter().zip(xchunk) {
                let h = (xval - mean.data()[ch]) * inv_std[ch];
                gx.push(gval * gamma[ch] * inv_std[ch]);
                dgamma[ch] += gval * h;
                dbeta[ch] += gval;
            }
        }
        Ok(vec![Some(Tensor::new(i[0].shape(), gx)?), Some(Tensor::new([c], dgamma)?), Some(Tensor::new([c], dbeta)?)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn eval_before_training_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let x = ctx.graph.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(bn.forward(&mut ctx, x), Err(Error::UninitializedStats(name)) if name == "bn"));
    }

    #[test]
    fn train_mode_normalises_and_updates_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = bn.forward(&mut ctx, x).unwrap();
        let out = ctx.graph.value(y).clone();
        assert!(out.sum().abs() < 1e-12);
        let updates = ctx.take_updates();
        commit(&mut store, updates);
        assert!((store.get(bn.running_mean).item() - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((store.get(bn.running_var).item() - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert_eq!(store.get(bn.tracked).item(), 1.0);

        let mut ctx = Ctx::new(&store, Mode::Eval);
        let x = ctx.graph.constant(Tensor::from_f64(&[1, 1], &[0.25]).unwrap());
        let y = bn.forward(&mut ctx, x).unwrap();
        assert!(ctx.graph.value(y).item().abs() < 1e-12);
    }

    #[test]
    fn he_init_is_seed_deterministic() {
        let mut a = ParamStore::<f32>::new();
        let mut b = ParamStore::<f32>::new();
        Conv2d::new(&mut a, "c", 3, 4, 3, 1, &mut crate::Rng::seed_from_u64(7));
        Conv2d::new(&mut b, "c", 3, 4, 3, 1, &mut crate::Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }
}
