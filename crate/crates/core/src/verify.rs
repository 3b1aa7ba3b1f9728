//! Property suites run by `satn verify` and the acceptance tests.
//!
//! Each check returns a [`CheckResult`] carrying its worst observed error
//! (or test statistic) so reports can show how close a pass was.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;
use rand::SeedableRng;

use crate::attention::{binarization_gap, draw_gumbel, hard_mask, relaxed_mask, temperature, Noise, SampleProbabilities, TemperatureSchedule};
use crate::diffcore::{finite_diff_gradient, Ctx, Graph, Mode, ParamStore, Tensor};
use crate::evalkit::{self, Meta, RankingTable};
use crate::network::{Backbone, LossConfig, Model, ModelConfig};
use crate::regularizers::{tv_gradient, tv_penalty};
use crate::Result;
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst relative error or the deciding statistic.
    pub metric: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, metric: f64, detail: String) -> Self {
        Self { name: name.into(), passed, metric, detail }
    }

    fn failed(name: &str, err: crate::Error) -> Self {
        Self::new(name, false, f64::NAN, format!("error: {err}"))
    }
}

/// Signature of a TV gradient implementation under test.
pub type TvGradientFn = fn(&Tensor<f64>) -> Result<Tensor<f64>>;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Hand example plus central differences on random maps up to 3x5x7.
pub fn tv_oracle(grad: TvGradientFn, cases: usize, seed: u64) -> CheckResult {
    const NAME: &str = "tv_oracle";
    let run = || -> Result<CheckResult> {
        let hand = Tensor::<f64>::from_f64(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0])?;
        let hand_value = tv_penalty(&hand)?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=7)];
            let a = uniform_tensor(&shape, -2.0, 2.0, &mut rng);
            let fd = finite_diff_gradient(tv_penalty, &a, 1e-5)?;
            let g = grad(&a)?;
            for (&x, &y) in g.data().iter().zip(fd.data()) {
                worst = worst.max(rel_err(x, y));
            }
        }
        let passed = hand_value == 4.0 && worst <= 1e-5;
        Ok(CheckResult::new(NAME, passed, worst, format!("penalty([[1,0],[0,1]]) = {hand_value}, max rel err {worst:.3e} over {cases} maps")))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

/// Empirical `P(hard = 1)` against `π1`, and relaxed/hard agreement.
pub fn sampler_fidelity(draws: usize, seed: u64) -> CheckResult {
    const NAME: &str = "sampler_fidelity";
    let run = || -> Result<CheckResult> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut worst_z = 0.0f64;
        let mut inconsistent = 0usize;
        for &p in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let pi = SampleProbabilities(Tensor::full(&[draws], p));
            let (g0, g1) = draw_gumbel::<f64>(&[draws], &mut rng);
            let hard = hard_mask(&pi, &g0, &g1)?;
            let soft = relaxed_mask(&pi, &g0, &g1, 0.7)?;
            let ones = hard.data().iter().filter(|&&h| h == 1.0).count();
            let sigma = Float::sqrt(p * (1.0 - p) / draws as f64);
            worst_z = worst_z.max((ones as f64 / draws as f64 - p).abs() / sigma);
            inconsistent += hard.data().iter().zip(soft.data()).filter(|(&h, &s)| if h == 1.0 { s < 0.5 } else { s > 0.5 }).count();
        }
        Ok(CheckResult::new(
            NAME,
            worst_z <= 3.0 && inconsistent == 0,
            worst_z,
            format!("max |z| {worst_z:.3} over 5 probabilities, {inconsistent} relaxed/hard disagreements"),
        ))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

/// `∂M/∂π1` of the relaxed mask against central differences, fixed noise.
pub fn sampler_gradient(cases: usize, seed: u64) -> CheckResult {
    const NAME: &str = "sampler_gradient";
    let run = || -> Result<CheckResult> {
        let mut rng = Rng::seed_from_u64(seed);
        let pi = uniform_tensor(&[cases], 0.02, 0.98, &mut rng);
        let (g0, g1) = draw_gumbel::<f64>(&[cases], &mut rng);
        let taus = uniform_tensor(&[cases], 0.5, 1.0, &mut rng);
        let mut worst = 0.0f64;
        for i in 0..cases {
            let one = |t: &Tensor<f64>| Tensor::from_f64(&[1], &[t.data()[i]]);
            let (p, a, b, tau) = (one(&pi)?, one(&g0)?, one(&g1)?, taus.data()[i]);
            let mut g = Graph::new();
            let v = g.leaf(p.clone(), true);
            let m = g.relaxed_mask(v, a.clone(), b.clone(), tau)?;
            let analytic = g.backward(m)?.wrt(v).item();
            let f = |t: &Tensor<f64>| Ok(relaxed_mask(&SampleProbabilities(t.clone()), &a, &b, tau)?.item());
            let fd = finite_diff_gradient(f, &p, 1e-7)?.item();
            worst = worst.max(rel_err(analytic, fd));
        }
        Ok(CheckResult::new(NAME, worst <= 1e-5, worst, format!("max rel err {worst:.3e} over {cases} draws")))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

pub fn temperature_schedule() -> CheckResult {
    let s = TemperatureSchedule::default();
    let at50 = (temperature(50, &s) - Float::exp(-0.4)).abs();
    let floor = (87..400).all(|t| temperature(t, &s) == 0.5);
    let passed = temperature(0, &s) == 1.0 && at50 <= 1e-12 && floor && temperature(86, &s) > 0.5;
    CheckResult::new("temperature_schedule", passed, at50, format!("|τ(50) - e^-0.4| = {at50:.3e}, floor from 87: {floor}"))
}

/// Binarisation gap at decreasing temperatures on fixed `π`, independent
/// noise per temperature, two-sample z-test between neighbours.
pub fn sharpness_monotonicity(positions: usize, seed: u64) -> CheckResult {
    const NAME: &str = "sharpness_monotonicity";
    let run = || -> Result<CheckResult> {
        let mut rng = Rng::seed_from_u64(seed);
        let pi = SampleProbabilities(uniform_tensor(&[positions], 1e-6, 1.0 - 1e-6, &mut rng));
        let mut stats = Vec::new();
        for &tau in &[1.0, 0.8, 0.6, 0.5] {
            let (g0, g1) = draw_gumbel::<f64>(&[positions], &mut rng);
            let m = relaxed_mask(&pi, &g0, &g1, tau)?;
            let mean = binarization_gap(&m);
            let var = m.data().iter().map(|&v| (v.min(1.0 - v) - mean).powi(2)).sum::<f64>() / (positions - 1) as f64;
            stats.push((mean, var));
        }
        let mut min_z = f64::INFINITY;
        for w in stats.windows(2) {
            let se = Float::sqrt((w[0].1 + w[1].1) / positions as f64);
            min_z = min_z.min((w[0].0 - w[1].0) / se);
        }
        let gaps: Vec<String> = stats.iter().map(|s| format!("{:.4}", s.0)).collect();
        Ok(CheckResult::new(NAME, min_z > 3.0, min_z, format!("gaps {} at τ 1.0/0.8/0.6/0.5, min z {min_z:.2}", gaps.join("/"))))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

/// Two-channel stages, 16x16 input, small head.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig { widths: [2, 2, 2, 2], head_hidden: 8, embed_dim: 4, input_h: 16, input_w: 16, ..ModelConfig::default() }
}

/// Loss of `model` on one batch in train mode with noise from `noise_seed`.
fn tiny_loss(model: &Model, store: &ParamStore<f64>, images: &Tensor<f64>, labels: &[usize], noise_seed: u64) -> Result<f64> {
    let mut ctx = Ctx::new(store, Mode::Train);
    let x = ctx.graph.constant(images.clone());
    let mut rng = Rng::seed_from_u64(noise_seed);
    let out = model.forward(&mut ctx, x, 0.7, &mut Noise::Sample(&mut rng))?;
    let loss = model.loss(&mut ctx.graph, &out, labels, LossConfig::default())?;
    Ok(ctx.graph.value(loss.total).item())
}

/// Gradient of the composite loss w.r.t. every parameter against central
/// differences. Returns the worst relative error and the parameter name.
pub fn model_gradient_error(config: &ModelConfig, seed: u64) -> Result<(f64, String)> {
    let mut rng = Rng::seed_from_u64(seed);
    let (model, store) = Model::build::<f64>(config, &mut rng)?;
    let images = uniform_tensor(&[4, config.in_channels, config.input_h, config.input_w], -1.0, 1.0, &mut rng);
    let labels = [0, 0, 1, 1];
    let noise_seed = seed ^ 0x5eed;

    let mut ctx = Ctx::new(&store, Mode::Train);
    let x = ctx.graph.constant(images.clone());
    let mut nrng = Rng::seed_from_u64(noise_seed);
    let out = model.forward(&mut ctx, x, 0.7, &mut Noise::Sample(&mut nrng))?;
    let loss = model.loss(&mut ctx.graph, &out, &labels, LossConfig::default())?;
    let grads = ctx.graph.backward(loss.total)?;
    let analytic = ctx.param_grads(&grads);

    let mut worst = (0.0f64, String::new());
    let mut probe = store.clone();
    for (id, g) in analytic {
        let original = store.get(id).clone();
        let f = |t: &Tensor<f64>| {
            *probe.get_mut(id) = t.clone();
            tiny_loss(&model, &probe, &images, &labels, noise_seed)
        };
        let fd = finite_diff_gradient(f, &original, 1e-6)?;
        *probe.get_mut(id) = original;
        for (&a, &d) in g.data().iter().zip(fd.data()) {
            let e = rel_err(a, d);
            if e > worst.0 {
                worst = (e, store.name(id).into());
            }
        }
    }
    Ok(worst)
}

pub fn model_gradient(seed: u64) -> CheckResult {
    const NAME: &str = "model_gradient";
    match model_gradient_error(&tiny_model_config(), seed) {
        Ok((e, name)) => CheckResult::new(NAME, e <= 1e-4, e, format!("max rel err {e:.3e} (at {name})")),
        Err(e) => CheckResult::failed(NAME, e),
    }
}

/// Attention-off model against a backbone built without attention code,
/// same seed: parameters and train-mode embeddings must match bit for bit.
pub fn baseline_equivalence(config: &ModelConfig, seed: u64) -> CheckResult {
    const NAME: &str = "baseline_equivalence";
    let run = || -> Result<CheckResult> {
        let plain = config.without_attention();
        let (model, store_a) = Model::build::<f32>(&plain, &mut Rng::seed_from_u64(seed))?;
        let mut store_b = ParamStore::<f32>::new();
        let backbone = Backbone::new(&plain, &mut store_b, &mut Rng::seed_from_u64(seed))?;
        let same_params = store_a.len() == store_b.len() && store_a.ids().all(|id| store_a.get(id) == store_b.get(id));
        let images = uniform_tensor(&[4, plain.in_channels, plain.input_h, plain.input_w], -1.0, 1.0, &mut Rng::seed_from_u64(seed + 1)).cast::<f32>();
        let mut ca = Ctx::new(&store_a, Mode::Train);
        let xa = ca.graph.constant(images.clone());
        let ea = model.forward(&mut ca, xa, 1.0, &mut Noise::Off)?.embedding;
        let mut cb = Ctx::new(&store_b, Mode::Train);
        let xb = cb.graph.constant(images);
        let eb = backbone.forward(&mut cb, xb)?;
        let (va, vb) = (ca.graph.value(ea), cb.graph.value(eb));
        let identical = va.data().iter().zip(vb.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        let diff = va.max_abs_diff(vb) as f64;
        Ok(CheckResult::new(NAME, same_params && identical, diff, format!("parameters identical: {same_params}, embeddings bit-identical: {identical}")))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

/// Exhaustive evaluator: each gallery item's rank is counted directly from
/// pairwise comparisons, AP accumulated as an exact fraction.
pub fn brute_force_metrics(queries: &[Vec<f64>], query_meta: &[Meta], gallery: &[Vec<f64>], gallery_meta: &[Meta], ks: &[usize]) -> (Vec<f64>, f64) {
    let dist = |a: &[f64], b: &[f64]| Float::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
    let mut hits = vec![0usize; ks.len()];
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    for (q, qm) in queries.iter().zip(query_meta) {
        let valid: Vec<usize> = (0..gallery.len()).filter(|&j| !(gallery_meta[j].identity == qm.identity && gallery_meta[j].camera == qm.camera)).collect();
        let d: Vec<f64> = valid.iter().map(|&j| dist(q, &gallery[j])).collect();
        // rank = 1 + number of valid items strictly ahead
        let mut match_ranks: Vec<u128> = valid
            .iter()
            .enumerate()
            .filter(|(_, &j)| gallery_meta[j].identity == qm.identity)
            .map(|(a, &ja)| 1 + valid.iter().enumerate().filter(|&(b, &jb)| d[b] < d[a] || (d[b] == d[a] && jb < ja)).count() as u128)
            .collect();
        if match_ranks.is_empty() {
            continue;
        }
        evaluated += 1;
        match_ranks.sort_unstable();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if match_ranks[0] <= k as u128 {
                *h += 1;
            }
        }
        // Σ_i i / r_i over a common denominator, divided once at the end
        let den: u128 = match_ranks.iter().fold(1, |l, &r| l / gcd(l, r) * r);
        let num: u128 = match_ranks.iter().enumerate().map(|(i, &r)| (i as u128 + 1) * (den / r)).sum();
        let (num, den) = reduce(num, den * match_ranks.len() as u128);
        ap_sum += num as f64 / den as f64;
    }
    let n = evaluated.max(1) as f64;
    let cmc = hits.iter().map(|&h| if evaluated == 0 { 0.0 } else { h as f64 / n }).collect();
    (cmc, if evaluated == 0 { 0.0 } else { ap_sum / n })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(n: u128, d: u128) -> (u128, u128) {
    let g = gcd(n, d).max(1);
    (n / g, d / g)
}

/// CMC and mAP against [`brute_force_metrics`] on random instances with
/// galleries of at most 8, plus the hand AP example.
pub fn metric_oracles(instances: usize, seed: u64) -> CheckResult {
    const NAME: &str = "metric_oracles";
    let run = || -> Result<CheckResult> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut mismatches = 0usize;
        let mut worst = 0.0f64;
        let ks = [1, 2, 3, 5, 10];
        for _ in 0..instances {
            let dim = rng.gen_range(1..=3);
            let n_q = rng.gen_range(1..=4);
            let n_g = rng.gen_range(1..=8);
            let ids = rng.gen_range(1..=3);
            let meta = |rng: &mut Rng| Meta { identity: rng.gen_range(0..ids), camera: rng.gen_range(0..2) };
            // coarse grid coordinates so exact distance ties occur
            let emb = |rng: &mut Rng| (0..dim).map(|_| rng.gen_range(-2i32..=2) as f64).collect::<Vec<f64>>();
            let qm: Vec<Meta> = (0..n_q).map(|_| meta(&mut rng)).collect();
            let gm: Vec<Meta> = (0..n_g).map(|_| meta(&mut rng)).collect();
            let qe: Vec<Vec<f64>> = (0..n_q).map(|_| emb(&mut rng)).collect();
            let ge: Vec<Vec<f64>> = (0..n_g).map(|_| emb(&mut rng)).collect();
            let flat = |v: &[Vec<f64>]| Tensor::new([v.len(), dim], v.concat());
            let table = evalkit::build_table(&flat(&qe)?, &qm, &flat(&ge)?, &gm);
            let (cmc, map) = brute_force_metrics(&qe, &qm, &ge, &gm, &ks);
            let ours: Vec<f64> = ks.iter().map(|&k| evalkit::cmc_topk(&table, k)).collect();
            let our_map = evalkit::mean_average_precision(&table);
            if ours != cmc || our_map != map {
                mismatches += 1;
                worst = worst.max((our_map - map).abs());
            }
        }
        let hand = RankingTable { rows: vec![evalkit::RankedQuery { order: vec![0, 1, 2], matches: vec![true, false, true] }], skipped: 0 };
        let hand_ap = evalkit::mean_average_precision(&hand);
        Ok(CheckResult::new(
            NAME,
            mismatches == 0 && hand_ap == 5.0 / 6.0,
            worst,
            format!("{mismatches} mismatches over {instances} instances, AP(ranks 1,3) = {hand_ap}"),
        ))
    };
    run().unwrap_or_else(|e| CheckResult::failed(NAME, e))
}

/// Every suite that needs no dataset or training run.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    run_all_with(seed, tv_gradient::<f64>)
}

/// [`run_all`] with a substitute TV gradient, for negative controls.
pub fn run_all_with(seed: u64, tv_grad: TvGradientFn) -> Vec<CheckResult> {
    vec![
        tv_oracle(tv_grad, 100, seed),
        sampler_fidelity(10_000, seed),
        sampler_gradient(1_000, seed),
        temperature_schedule(),
        sharpness_monotonicity(10_000, seed),
        model_gradient(seed),
        baseline_equivalence(&ModelConfig::default(), seed),
        metric_oracles(200, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped(a: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(tv_gradient(a)?.map(|v| -v))
    }

    #[test]
    fn tv_check_catches_sign_error() {
        assert!(tv_oracle(tv_gradient::<f64>, 20, 1).passed);
        let bad = tv_oracle(flipped, 20, 1);
        assert!(!bad.passed);
        assert_eq!(bad.name, "tv_oracle");
    }

    #[test]
    fn cheap_suites_pass() {
        for r in [sampler_fidelity(2_000, 3), sampler_gradient(200, 3), temperature_schedule(), metric_oracles(50, 3)] {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn brute_force_handles_ties_by_index() {
        let m = |i, c| Meta { identity: i, camera: c };
        let (cmc, map) = brute_force_metrics(&[vec![0.0]], &[m(1, 0)], &[vec![1.0], vec![-1.0]], &[m(2, 1), m(1, 1)], &[1, 2]);
        assert_eq!(cmc, vec![0.0, 1.0]);
        assert_eq!(map, 0.5);
    }
}
