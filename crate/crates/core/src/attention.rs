//! Sharp attention masks by adaptive sampling.
//!
//! A feature map `X` is squashed per channel into sampling probabilities
//! `π1 ∈ [ε, 1-ε]`. Each position then carries a Bernoulli variable that is
//! sampled with the Gumbel-Max trick (the hard mask) or relaxed with a
//! two-way Gumbel-Softmax at temperature `τ` (the mask actually applied to
//! features, differentiable in `π1`).
//!
//! Random draws always happen in the same order: for a tensor of shape `S`,
//! all `g0` values in row-major order first, then all `g1` values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::Rng as _;

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::Rng;

/// Probability clamp keeping `log π` finite at channel extremes.
pub const PROB_EPS: f64 = 1e-6;

/// Default threshold for the thresholding baseline.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Per-position probability of attending, `π1`. `π0 = 1 - π1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleProbabilities<T: Real>(pub Tensor<T>);

impl<T: Real> SampleProbabilities<T> {
    pub fn pi1(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Exponential temperature decay with a floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub alpha: f64,
    pub tau_init: f64,
    pub tau_final: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { alpha: 0.008, tau_init: 1.0, tau_final: 0.5 }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        temperature(epoch, self)
    }
}

/// `τ(t) = max(τ_init · exp(-α t), τ_final)`.
pub fn temperature(epoch: usize, sched: &TemperatureSchedule) -> f64 {
    let tau = sched.tau_init * Float::exp(-sched.alpha * epoch as f64);
    if tau > sched.tau_final {
        tau
    } else {
        sched.tau_final
    }
}

/// Min-max normalisation of every `H×W` plane, clamped to `[ε, 1-ε]`.
/// Constant planes map to 0.5. Accepts `[C, H, W]` or `[N, C, H, W]`.
pub fn normalize_channelwise<T: Real>(x: &Tensor<T>) -> SampleProbabilities<T> {
    let plane = plane_size(x.shape());
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.data().chunks(plane) {
        let stats = PlaneStats::of(chunk);
        out.extend(chunk.iter().map(|&v| stats.normalize(v).0));
    }
    SampleProbabilities(Tensor::new(x.shape(), out).expect("same shape"))
}

fn plane_size(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 => shape[0],
        n => shape[n - 2] * shape[n - 1],
    }
}

struct PlaneStats<T> {
    min: T,
    max: T,
    argmin: usize,
    argmax: usize,
}

impl<T: Real> PlaneStats<T> {
    fn of(plane: &[T]) -> Self {
        let mut s = Self { min: plane[0], max: plane[0], argmin: 0, argmax: 0 };
        for (i, &v) in plane.iter().enumerate().skip(1) {
            if v < s.min {
                s.min = v;
                s.argmin = i;
            }
            if v > s.max {
                s.max = v;
                s.argmax = i;
            }
        }
        s
    }

    fn degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Clamped value and whether it lies strictly inside the clamp range.
    fn normalize(&self, v: T) -> (T, bool) {
        if self.degenerate() {
            return (T::of(0.5), false);
        }
        let eps = T::of(PROB_EPS);
        let raw = (v - self.min) / (self.max - self.min);
        if raw < eps {
            (eps, false)
        } else if raw > T::one() - eps {
            (T::one() - eps, false)
        } else {
            (raw, true)
        }
    }
}

/// Inverse-transform Gumbel(0,1) sample for `u ∈ (0, 1)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -Float::ln(-Float::ln(u))
}

fn open_uniform(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws `(g0, g1)` i.i.d. Gumbel(0,1), `g0` first.
pub fn draw_gumbel<T: Real>(shape: &[usize], rng: &mut Rng) -> (Tensor<T>, Tensor<T>) {
    let n: usize = shape.iter().product();
    let mut draw = || -> Vec<T> { (0..n).map(|_| T::of(gumbel_from_uniform(open_uniform(rng)))).collect() };
    let g0 = draw();
    let g1 = draw();
    (Tensor::new(shape, g0).expect("shape"), Tensor::new(shape, g1).expect("shape"))
}

/// Log-odds of attending including noise: `(log π1 + g1) - (log π0 + g0)`.
fn noisy_logit<T: Real>(pi1: T, g0: T, g1: T) -> T {
    (pi1.ln() - (T::one() - pi1).ln()) + (g1 - g0)
}

/// Gumbel-Max sample: 1 where `g1 + log π1 > g0 + log π0`, ties go to 0.
pub fn hard_mask<T: Real>(pi: &SampleProbabilities<T>, g0: &Tensor<T>, g1: &Tensor<T>) -> Result<Tensor<T>> {
    pi.0.expect_same_shape("hard_mask", g0)?;
    pi.0.expect_same_shape("hard_mask", g1)?;
    let data =
        pi.0.data()
            .iter()
            .zip(g0.data().iter().zip(g1.data()))
            .map(|(&p, (&a, &b))| if noisy_logit(p, a, b) > T::zero() { T::one() } else { T::zero() })
            .collect();
    Tensor::new(pi.0.shape(), data)
}

/// Two-way Gumbel-Softmax evaluated as a logistic of the logit difference.
pub fn relaxed_mask<T: Real>(pi: &SampleProbabilities<T>, g0: &Tensor<T>, g1: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    check_tau(tau)?;
    pi.0.expect_same_shape("relaxed_mask", g0)?;
    pi.0.expect_same_shape("relaxed_mask", g1)?;
    let data = pi.0.data().iter().zip(g0.data().iter().zip(g1.data())).map(|(&p, (&a, &b))| crate::diffcore::sigmoid(noisy_logit(p, a, b) / tau)).collect();
    Tensor::new(pi.0.shape(), data)
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if !(tau > T::zero()) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `A = M ⊙ T`.
pub fn apply_attention<T: Real>(trunk: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    trunk.zip_map(mask, |t, m| t * m)
}

/// `F = A + T`, i.e. `(1 + M) ⊙ T`.
pub fn cross_feature_combine<T: Real>(trunk: &Tensor<T>, attended: &Tensor<T>) -> Result<Tensor<T>> {
    trunk.zip_map(attended, |t, a| t + a)
}

/// Mean of `min(m, 1 - m)`: zero for a perfectly binary mask, 0.5 for a
/// mask stuck at one half.
pub fn binarization_gap<T: Real>(mask: &Tensor<T>) -> f64 {
    let s: f64 = mask.data().iter().map(|&m| m.f64().min(1.0 - m.f64())).sum();
    s / mask.len() as f64
}

/// Non-sampling mask generators used as baselines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineKind {
    /// Soft gate `σ(X)` on the raw features.
    Sigmoid,
    /// Normalised value where it reaches `λ`, zero below.
    Threshold(f64),
    /// Normalised value raised to an integer power (2 or 3).
    Power(u32),
}

pub fn baseline_mask<T: Real>(x: &Tensor<T>, kind: BaselineKind) -> Result<Tensor<T>> {
    match kind {
        BaselineKind::Sigmoid => Ok(x.map(crate::diffcore::sigmoid)),
        BaselineKind::Threshold(lambda) => {
            let l = T::of(lambda);
            Ok(normalize_channelwise(x).0.map(|p| if p >= l { p } else { T::zero() }))
        }
        BaselineKind::Power(p @ (2 | 3)) => Ok(normalize_channelwise(x).0.map(|v| v.powi(p as i32))),
        BaselineKind::Power(p) => Err(Error::Contract(format!("power baseline supports exponents 2 and 3, got {p}"))),
    }
}

/// How the mask of an attention block is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    None,
    Sharp,
    Sigmoid,
    Threshold,
    Power2,
    Power3,
}

impl MaskKind {
    pub const ALL: [MaskKind; 6] = [MaskKind::None, MaskKind::Sharp, MaskKind::Sigmoid, MaskKind::Threshold, MaskKind::Power2, MaskKind::Power3];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::None => "none",
            MaskKind::Sharp => "sharp",
            MaskKind::Sigmoid => "sigmoid",
            MaskKind::Threshold => "threshold",
            MaskKind::Power2 => "power2",
            MaskKind::Power3 => "power3",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Contract(format!("unknown mask kind `{s}`")))
    }
}

/// Where Gumbel noise comes from during a forward pass.
pub enum Noise<'a> {
    /// `g0 = g1 = 0`: the deterministic inference surrogate.
    Off,
    Sample(&'a mut Rng),
}

impl Noise<'_> {
    pub fn draw<T: Real>(&mut self, shape: &[usize]) -> (Tensor<T>, Tensor<T>) {
        match self {
            Noise::Off => (Tensor::zeros(shape), Tensor::zeros(shape)),
            Noise::Sample(rng) => draw_gumbel(shape, rng),
        }
    }
}

impl<T: Real> Graph<T> {
    /// Differentiable [`normalize_channelwise`]. Gradients reach the channel
    /// extrema through `min` and `max`; clamped and degenerate positions
    /// have zero derivative.
    pub fn normalize_channels(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = normalize_channelwise(xv).0;
        let plane = plane_size(xv.shape());
        self.push("normalize_channels", out, &[x], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let mut gx = vec![T::zero(); i[0].len()];
            for (xs, (gs, gxs)) in i[0].data().chunks(plane).zip(g.data().chunks(plane).zip(gx.chunks_mut(plane))) {
                let st = PlaneStats::of(xs);
                if st.degenerate() {
                    continue;
                }
                let r = st.max - st.min;
                let r2 = r * r;
                let (mut gmin, mut gmax) = (T::zero(), T::zero());
                for (j, (&xv, &gv)) in xs.iter().zip(gs).enumerate() {
                    if !st.normalize(xv).1 {
                        continue;
                    }
                    gxs[j] += gv / r;
                    gmin += gv * (xv - st.max) / r2;
                    gmax -= gv * (xv - st.min) / r2;
                }
                gxs[st.argmin] += gmin;
                gxs[st.argmax] += gmax;
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), gx)?)])
        })
    }

    /// Differentiable [`relaxed_mask`]; the noise tensors are constants.
    pub fn relaxed_mask(&mut self, pi: Var, g0: Tensor<T>, g1: Tensor<T>, tau: T) -> Result<Var> {
        let probs = SampleProbabilities(self.value(pi).clone());
        let out = relaxed_mask(&probs, &g0, &g1, tau)?;
        self.push("relaxed_mask", out, &[pi], move |i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let gx = i[0]
                .data()
                .iter()
                .zip(o.data().iter().zip(g.data()))
                .map(|(&p, (&m, &gv))| gv * m * (T::one() - m) / tau * (T::one() / p + T::one() / (T::one() - p)))
                .collect();
            Ok(vec![Some(Tensor::new(i[0].shape(), gx)?)])
        })
    }

    /// Keeps values `≥ λ`, zeroes the rest.
    pub fn threshold(&mut self, x: Var, lambda: T) -> Result<Var> {
        let out = self.value(x).map(|v| if v >= lambda { v } else { T::zero() });
        self.push("threshold", out, &[x], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            Ok(vec![Some(g.zip_map(i[0], |g, v| if v >= lambda { g } else { T::zero() })?)])
        })
    }

    pub fn powi(&mut self, x: Var, p: i32) -> Result<Var> {
        let out = self.value(x).map(|v| v.powi(p));
        self.push("powi", out, &[x], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            Ok(vec![Some(g.zip_map(i[0], |g, v| g * T::of(p as f64) * v.powi(p - 1))?)])
        })
    }
}
