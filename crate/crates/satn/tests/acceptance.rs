//! One line per acceptance criterion, with the measured statistic, the
//! runtime and its budget.
//!
//! Criteria 8 and 11 are directional comparisons between trained models.
//! Their outcome is reported but does not decide the exit status; every
//! other criterion does. Set `SATN_ACCEPTANCE_SKIP_TRAINING=1` to skip the
//! two ablation criteria.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use satn::ablate::{self, Cell, CellSummary};
use satn::config::RunConfig;
use satn::dataio::{generate_toy_dataset, load_dataset, Dataset, ToySpec};
use satn::train::{self, RunLog};
use satn_core::network::ModelConfig;
use satn_core::verify::{self, CheckResult};

const SEED: u64 = 0;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Line {
    id: u32,
    passed: bool,
    gating: bool,
    summary: String,
    elapsed: Duration,
    budget: Duration,
}

impl Line {
    fn print(&self) {
        let verdict = match (self.passed, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (reported)",
        };
        let time = if self.elapsed <= self.budget { "within" } else { "over" };
        println!("criterion {:>2}: {verdict}  {}  [{:.1}s, {time} {}s budget]", self.id, self.summary, self.elapsed.as_secs_f64(), self.budget.as_secs());
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn from_check(id: u32, budget_s: u64, f: impl FnOnce() -> CheckResult) -> Line {
    let (r, elapsed) = timed(f);
    Line { id, passed: r.passed, gating: true, summary: format!("{}: {}", r.name, r.detail), elapsed, budget: Duration::from_secs(budget_s) }
}

/// The training scale used for the end-to-end criteria: default toy
/// dataset, model and 150-epoch schedule, with half-resolution input so the
/// seeded grids fit their time budgets. Evaluation runs after the last epoch.
fn acceptance_config(dataset: &Path, out: &Path) -> RunConfig {
    let mut c = RunConfig { dataset: dataset.to_path_buf(), out: out.to_path_buf(), ..RunConfig::default() };
    c.input_h = 32;
    c.input_w = 16;
    c.eval_every = c.epochs;
    c
}

fn grid(base: &RunConfig, cells: &[Cell], data: &Dataset) -> satn::Result<Vec<CellSummary>> {
    let mut log = RunLog::create(&base.out, true)?;
    ablate::run_grid(base, cells, &SEEDS, data, &mut log)
}

fn median_map(summary: &[CellSummary], cell: &str) -> f64 {
    summary.iter().find(|s| s.cell == cell).map_or(f64::NAN, |s| s.median_map)
}

fn directional(id: u32, budget_s: u64, f: impl FnOnce() -> satn::Result<(bool, String)>) -> Line {
    let (r, elapsed) = timed(f);
    let (passed, summary) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    Line { id, passed, gating: false, summary, elapsed, budget: Duration::from_secs(budget_s) }
}

fn criterion8(base: &RunConfig, data: &Dataset) -> satn::Result<(bool, String)> {
    let s = grid(base, ablate::DIRECTIONAL, data)?;
    let (b, sc, full) = (median_map(&s, ablate::BASELINE), median_map(&s, "samg_cil"), median_map(&s, ablate::FULL));
    let passed = full >= sc && sc >= b && full - b >= 0.02;
    Ok((
        passed,
        format!(
            "median mAP over {} seeds: full {full:.4} >= samg_cil {sc:.4} >= baseline {b:.4}, full - baseline {:+.4} (need >= +0.02)",
            SEEDS.len(),
            full - b
        ),
    ))
}

fn criterion11(base: &RunConfig, data: &Dataset) -> satn::Result<(bool, String)> {
    let cells: Vec<Cell> = ablate::GENERATORS.iter().filter(|c| c.name != ablate::BASELINE).cloned().collect();
    let s = grid(base, &cells, data)?;
    let sharp = median_map(&s, "sharp");
    let others: Vec<(&str, f64)> = ["threshold", "power2", "power3"].iter().map(|&c| (c, median_map(&s, c))).collect();
    let passed = others.iter().all(|&(_, m)| m <= sharp) && s.len() == cells.len();
    let listing = others.iter().map(|(c, m)| format!("{c} {m:.4}")).collect::<Vec<_>>().join(", ");
    Ok((passed, format!("median mAP over {} seeds: sharp {sharp:.4}; must not be exceeded by {listing}", SEEDS.len())))
}

fn criterion10(base: &RunConfig, data: &Dataset) -> satn::Result<(bool, String)> {
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let cfg = RunConfig { epochs: 6, eval_every: 3, seed: 7, out: base.out.join(run), ..base.clone() };
        let mut log = RunLog::create(&cfg.out, true)?;
        train::train(&cfg, data, &mut log)?;
        let read = |f: &str| fs::read(cfg.out.join(f)).map_err(|e| satn::SatnError::io(cfg.out.join(f), e));
        outputs.push((read(train::METRICS)?, read(train::CHECKPOINT)?));
    }
    let (m, c) = (outputs[0].0 == outputs[1].0, outputs[0].1 == outputs[1].1);
    Ok((m && c, format!("two seeded 6-epoch runs: metrics.csv identical {m}, checkpoint identical {c} ({} bytes)", outputs[0].1.len())))
}

fn main() -> ExitCode {
    let skip_training = std::env::var_os("SATN_ACCEPTANCE_SKIP_TRAINING").is_some_and(|v| v != "0");
    let tmp = tempfile::tempdir().expect("temp dir");
    let data_dir = tmp.path().join("toy");
    generate_toy_dataset(&ToySpec::default(), SEED, &data_dir).expect("toy dataset");
    let data = load_dataset(&data_dir).expect("load toy dataset");
    let base = |sub: &str| acceptance_config(&data_dir, &tmp.path().join(sub));

    let mut lines = vec![
        from_check(1, 10, || verify::tv_oracle(satn_core::regularizers::tv_gradient::<f64>, 100, SEED)),
        from_check(2, 10, || verify::sampler_fidelity(10_000, SEED)),
        from_check(3, 10, || verify::sampler_gradient(1_000, SEED)),
        from_check(4, 1, verify::temperature_schedule),
        from_check(5, 10, || verify::sharpness_monotonicity(10_000, SEED)),
        from_check(6, 300, || verify::model_gradient(SEED)),
        from_check(7, 60, || verify::baseline_equivalence(&ModelConfig::default(), SEED)),
    ];
    for l in &lines {
        l.print();
    }
    let c8 = if skip_training { None } else { Some(directional(8, 30 * 60, || criterion8(&base("c8"), &data))) };
    match &c8 {
        Some(l) => l.print(),
        None => println!("criterion  8: SKIPPED (SATN_ACCEPTANCE_SKIP_TRAINING)"),
    }
    let c9 = from_check(9, 10, || verify::metric_oracles(200, SEED));
    c9.print();
    let (r10, t10) = timed(|| criterion10(&base("c10"), &data));
    let (ok10, s10) = r10.unwrap_or_else(|e| (false, format!("error: {e}")));
    let c10 = Line { id: 10, passed: ok10, gating: true, summary: s10, elapsed: t10, budget: Duration::from_secs(600) };
    c10.print();
    let c11 = if skip_training { None } else { Some(directional(11, 60 * 60, || criterion11(&base("c11"), &data))) };
    match &c11 {
        Some(l) => l.print(),
        None => println!("criterion 11: SKIPPED (SATN_ACCEPTANCE_SKIP_TRAINING)"),
    }
    lines.extend(c8);
    lines.push(c9);
    lines.push(c10);
    lines.extend(c11);

    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if lines.iter().any(|l| l.gating && !l.passed) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
