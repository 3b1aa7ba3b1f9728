//! The work behind each `satn` subcommand.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use satn_core::attention::{binarization_gap, MaskKind, Noise};
use satn_core::diffcore::{Ctx, Mode};
use satn_core::evalkit::EvalReport;
use satn_core::network::Model;
use satn_core::verify::{self, CheckResult};
use satn_core::Tensor;

use crate::ablate::{self, CellSummary};
use crate::config::{RunConfig, Source};
use crate::container;
use crate::dataio::{self, eval_transform, AugmentConfig, Split, ToySpec};
use crate::error::{Result, SatnError};
use crate::train::{self, RunLog, TrainOutcome};

pub fn gen_toy(spec: &ToySpec, seed: u64, dir: &Path) -> Result<usize> {
    Ok(dataio::generate_toy_dataset(spec, seed, dir)?.len())
}

pub fn train(cfg: &RunConfig, sources: &[(String, Source)], quiet: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut log = RunLog::create(&cfg.out, quiet)?;
    log.header("train", cfg, sources)?;
    let data = dataio::load_dataset(&cfg.dataset)?;
    train::train(cfg, &data, &mut log)
}

/// The config a checkpoint was trained with: `config.txt` next to it when no
/// file was given explicitly.
pub fn checkpoint_config(checkpoint: &Path, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        let p = checkpoint.parent()?.join(train::CONFIG);
        p.is_file().then_some(p)
    })
}

/// Evaluates `checkpoint` on the query and gallery splits. Writes
/// `report.csv` and `run.log` under `cfg.out`.
pub fn eval(cfg: &RunConfig, sources: &[(String, Source)], checkpoint: &Path, quiet: bool) -> Result<EvalReport> {
    let mut log = RunLog::create(&cfg.out, quiet)?;
    log.header("eval", cfg, sources)?;
    log.line(format!("checkpoint = {}", checkpoint.display()))?;
    let ck = train::load_checkpoint(checkpoint, cfg)?;
    let data = dataio::load_dataset(&cfg.dataset)?;
    let r = train::evaluate(&ck.model, &ck.store, &data, ck.tau, cfg.eval_noise.then_some(cfg.seed))?;
    log.line(format!(
        "epoch {} tau {:.4}: cmc1 {:.6} cmc5 {:.6} cmc10 {:.6} map {:.6} ({} queries, {} skipped)",
        ck.epoch, ck.tau, r.cmc1, r.cmc5, r.cmc10, r.map, r.evaluated, r.skipped
    ))?;
    let path = cfg.out.join("report.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epoch", "cmc1", "cmc5", "cmc10", "map", "queries", "skipped"])?;
    w.write_record([
        ck.epoch.to_string(),
        format!("{:.6}", r.cmc1),
        format!("{:.6}", r.cmc5),
        format!("{:.6}", r.cmc10),
        format!("{:.6}", r.map),
        r.evaluated.to_string(),
        r.skipped.to_string(),
    ])?;
    w.flush().map_err(|e| SatnError::io(&path, e))?;
    Ok(r)
}

pub fn ablate(cfg: &RunConfig, sources: &[(String, Source)], grid: &str, seeds: &[u64], quiet: bool) -> Result<Vec<CellSummary>> {
    let cells = ablate::grid(grid)?;
    if seeds.is_empty() {
        return Err(SatnError::Config("`--seeds` needs at least one seed".into()));
    }
    for c in cells {
        c.apply(cfg).validate()?;
    }
    let mut log = RunLog::create(&cfg.out, quiet)?;
    log.header(&format!("ablate {grid}"), cfg, sources)?;
    log.line(format!("seeds = {seeds:?}"))?;
    let data = dataio::load_dataset(&cfg.dataset)?;
    let summary = ablate::run_grid(cfg, cells, seeds, &data, &mut log)?;
    for s in &summary {
        log.line(format!(
            "{:<12} cmc1 {:.4} ({:+.4})  map {:.4} ({:+.4})  over {} seeds",
            s.cell, s.median_cmc1, s.delta_cmc1, s.median_map, s.delta_map, s.runs
        ))?;
    }
    Ok(summary)
}

pub fn verify(seed: u64, out: Option<&Path>) -> Result<Vec<CheckResult>> {
    let results = verify::run_all(seed);
    if let Some(dir) = out {
        let mut log = RunLog::create(dir, true)?;
        log.line(format!("satn {} verify", env!("CARGO_PKG_VERSION")))?;
        log.line(format!("seed = {seed}"))?;
        for r in &results {
            log.line(format_check(r))?;
        }
    }
    Ok(results)
}

pub fn format_check(r: &CheckResult) -> String {
    format!("{} {:<24} metric {:.3e}  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.metric, r.detail)
}

/// Binarization gap of one block over the dumped images.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGap {
    pub block: usize,
    pub shape: Vec<usize>,
    pub mask_kind: MaskKind,
    pub gap: f64,
    /// The same statistic for a sigmoid gate on the same features.
    pub sigmoid_gap: f64,
}

fn block_masks(model: &Model, store: &satn_core::diffcore::ParamStore<f32>, x: &Tensor<f32>, tau: f64) -> Result<Vec<Option<Tensor<f32>>>> {
    let mut ctx = Ctx::new(store, Mode::Eval);
    let xv = ctx.graph.constant(x.clone());
    let out = model.forward(&mut ctx, xv, tau, &mut Noise::Off)?;
    Ok(out.blocks.iter().map(|b| b.mask.map(|m| ctx.graph.value(m).clone())).collect())
}

/// Writes eval-mode masks of every active block for the first `count`
/// query images (`masks/<image>.satn`, one entry per block), a PPM heat
/// overlay per image and block, and `gaps.csv`.
pub fn dump_masks(cfg: &RunConfig, sources: &[(String, Source)], checkpoint: &Path, count: usize, overlays: bool, quiet: bool) -> Result<Vec<BlockGap>> {
    let mut log = RunLog::create(&cfg.out, quiet)?;
    log.header("dump-masks", cfg, sources)?;
    let ck = train::load_checkpoint(checkpoint, cfg)?;
    if !ck.model.config.blocks.iter().any(|b| b.is_active()) {
        return Err(SatnError::Config("the configured model has no attention blocks to dump".into()));
    }
    let data = dataio::load_dataset(&cfg.dataset)?;
    let aug = AugmentConfig::new(cfg.input_h, cfg.input_w);
    let idx: Vec<usize> = data.indices(Split::Query).into_iter().take(count).collect();
    if idx.is_empty() {
        return Err(SatnError::Dataset("no query images to dump".into()));
    }
    let imgs: Vec<Tensor<f32>> = idx.iter().map(|&i| eval_transform(&data.images[i], &data.means, &aug)).collect();
    let x = Tensor::stack(&imgs)?;

    let masks = block_masks(&ck.model, &ck.store, &x, ck.tau)?;
    let mut sigmoid_model = ck.model.clone();
    for b in sigmoid_model.config.blocks.iter_mut().filter(|b| b.is_active()) {
        b.mask_kind = MaskKind::Sigmoid;
    }
    let sigmoid_masks = block_masks(&sigmoid_model, &ck.store, &x, ck.tau)?;

    let dir = cfg.out.join("masks");
    fs::create_dir_all(&dir).map_err(|e| SatnError::io(&dir, e))?;
    let per_image: Vec<Vec<(usize, Tensor<f32>)>> = {
        let mut v = vec![Vec::new(); idx.len()];
        for (b, m) in masks.iter().enumerate() {
            if let Some(m) = m {
                for (i, t) in m.unstack().into_iter().enumerate() {
                    v[i].push((b, t));
                }
            }
        }
        v
    };
    for (n, &i) in idx.iter().enumerate() {
        let stem = data.records[i].path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let entries: Vec<(String, Tensor<f32>)> = per_image[n].iter().map(|(b, t)| (format!("block{}", b + 1), t.clone())).collect();
        container::write(&dir.join(format!("{stem}.satn")), &entries)?;
        if overlays {
            for (b, t) in &per_image[n] {
                let path = dir.join(format!("{stem}_block{}.ppm", b + 1));
                write_overlay(&path, &imgs[n], t)?;
            }
        }
    }

    let mut gaps = Vec::new();
    let path = cfg.out.join("gaps.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["block", "mask_kind", "shape", "gap", "sigmoid_gap"])?;
    for (b, m) in masks.iter().enumerate() {
        let (Some(m), Some(s)) = (m, &sigmoid_masks[b]) else { continue };
        let g = BlockGap {
            block: b + 1,
            shape: m.shape()[1..].to_vec(),
            mask_kind: ck.model.config.blocks[b].mask_kind,
            gap: binarization_gap(m),
            sigmoid_gap: binarization_gap(s),
        };
        let shape = g.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        w.write_record([g.block.to_string(), g.mask_kind.to_string(), shape.clone(), format!("{:.6}", g.gap), format!("{:.6}", g.sigmoid_gap)])?;
        log.line(format!("block {} [{shape}] {}: gap {:.4}, sigmoid gate {:.4}", g.block, g.mask_kind, g.gap, g.sigmoid_gap))?;
        gaps.push(g);
    }
    w.flush().map_err(|e| SatnError::io(&path, e))?;
    log.line(format!("wrote masks for {} images to {}", idx.len(), dir.display()))?;
    Ok(gaps)
}

/// Grey image with the channel-mean mask, upsampled by nearest neighbour,
/// blended into the red channel.
fn write_overlay(path: &Path, image: &Tensor<f32>, mask: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (mc, mh, mw) = (mask.shape()[0], mask.shape()[1], mask.shape()[2]);
    let (img, m) = (image.data(), mask.data());
    let (lo, hi) = img.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let grey = (0..c).map(|k| img[(k * h + y) * w + x]).sum::<f32>() / c as f32;
            let grey = ((grey - lo) / span).clamp(0.0, 1.0);
            let (my, mx) = (y * mh / h, x * mw / w);
            let heat = ((0..mc).map(|k| m[(k * mh + my) * mw + mx]).sum::<f32>() / mc as f32).clamp(0.0, 1.0);
            let px = |v: f32| (v * 255.0).round() as u8;
            bytes.extend([px(0.5 * grey + 0.5 * heat), px(0.5 * grey), px(0.5 * grey)]);
        }
    }
    let mut f = fs::File::create(path).map_err(|e| SatnError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| SatnError::io(path, e))
}
