//! Ablation grids: named configuration cells trained once per seed.

use std::fs;
use std::path::Path;

use satn_core::attention::MaskKind;

use crate::config::{RunConfig, Source};
use crate::dataio::Dataset;
use crate::error::{Result, SatnError};
use crate::train::{self, RunLog};

/// A named edit applied on top of the base configuration.
#[derive(Clone, Debug)]
pub struct Cell {
    pub name: &'static str,
    pub mask_kind: MaskKind,
    pub blocks: &'static [usize],
    pub cu: bool,
    pub cil: bool,
    pub tv: bool,
}

impl Cell {
    const fn new(name: &'static str, mask_kind: MaskKind, blocks: &'static [usize], cu: bool, cil: bool, tv: bool) -> Self {
        Self { name, mask_kind, blocks, cu, cil, tv }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig { mask_kind: self.mask_kind, blocks: self.blocks.to_vec(), cu: self.cu, cil: self.cil, tv: self.tv, ..base.clone() }
    }
}

const ALL: &[usize] = &[1, 2, 3, 4];
use MaskKind::{None as Off, Power2, Power3, Sharp, Threshold};

pub const BASELINE: &str = "baseline";
pub const FULL: &str = "full";

/// Attention design variants on all four blocks.
pub const COMPONENTS: &[Cell] = &[
    Cell::new(BASELINE, Off, &[], false, false, false),
    Cell::new("samg", Sharp, ALL, false, false, false),
    Cell::new("samg_cil", Sharp, ALL, false, true, false),
    Cell::new("samg_cu", Sharp, ALL, true, false, false),
    Cell::new("samg_cil_cu", Sharp, ALL, true, true, false),
    Cell::new(FULL, Sharp, ALL, true, true, true),
];

/// Which blocks carry attention, with sharp masks and cross-feature interaction.
pub const BLOCKS: &[Cell] = &[
    Cell::new(BASELINE, Off, &[], false, false, false),
    Cell::new("b1", Sharp, &[1], false, true, false),
    Cell::new("b2", Sharp, &[2], false, true, false),
    Cell::new("b3", Sharp, &[3], false, true, false),
    Cell::new("b4", Sharp, &[4], false, true, false),
    Cell::new("b12", Sharp, &[1, 2], false, true, false),
    Cell::new("b123", Sharp, &[1, 2, 3], false, true, false),
    Cell::new("b1234", Sharp, ALL, false, true, false),
];

/// Mask generators compared with everything else held fixed.
pub const GENERATORS: &[Cell] = &[
    Cell::new(BASELINE, Off, &[], false, false, false),
    Cell::new("sharp", Sharp, ALL, false, false, false),
    Cell::new("threshold", Threshold, ALL, false, false, false),
    Cell::new("power2", Power2, ALL, false, false, false),
    Cell::new("power3", Power3, ALL, false, false, false),
];

/// The directional check subset: baseline, sharp with interaction, full design.
pub const DIRECTIONAL: &[Cell] =
    &[Cell::new(BASELINE, Off, &[], false, false, false), Cell::new("samg_cil", Sharp, ALL, false, true, false), Cell::new(FULL, Sharp, ALL, true, true, true)];

pub fn grid(name: &str) -> Result<&'static [Cell]> {
    match name {
        "components" => Ok(COMPONENTS),
        "blocks" => Ok(BLOCKS),
        "generators" => Ok(GENERATORS),
        "directional" => Ok(DIRECTIONAL),
        _ => Err(SatnError::Config(format!("unknown grid `{name}` (expected components, blocks, generators or directional)"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub cell: String,
    pub seed: u64,
    pub cmc1: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: String,
    pub runs: usize,
    pub median_cmc1: f64,
    pub median_map: f64,
    pub delta_cmc1: f64,
    pub delta_map: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-cell medians over seeds, with deltas against the first cell.
pub fn summarize(cells: &[Cell], runs: &[CellRun]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = cells
        .iter()
        .filter_map(|c| {
            let mine: Vec<&CellRun> = runs.iter().filter(|r| r.cell == c.name).collect();
            (!mine.is_empty()).then(|| CellSummary {
                cell: c.name.to_string(),
                runs: mine.len(),
                median_cmc1: median(&mut mine.iter().map(|r| r.cmc1).collect::<Vec<_>>()),
                median_map: median(&mut mine.iter().map(|r| r.map).collect::<Vec<_>>()),
                delta_cmc1: 0.0,
                delta_map: 0.0,
            })
        })
        .collect();
    if let Some(first) = out.first().cloned() {
        for s in &mut out {
            s.delta_cmc1 = s.median_cmc1 - first.median_cmc1;
            s.delta_map = s.median_map - first.median_map;
        }
    }
    out
}

/// Trains every cell for every seed under `base.out/<cell>/seed<k>` and
/// writes `runs.csv` and `summary.csv` to `base.out`.
pub fn run_grid(base: &RunConfig, cells: &[Cell], seeds: &[u64], data: &Dataset, log: &mut RunLog) -> Result<Vec<CellSummary>> {
    let mut runs = Vec::new();
    for cell in cells {
        for &seed in seeds {
            let mut cfg = cell.apply(base);
            cfg.seed = seed;
            cfg.out = base.out.join(cell.name).join(format!("seed{seed}"));
            let mut cell_log = RunLog::create(&cfg.out, true)?;
            let overrides: Vec<(String, Source)> = ["seed", "mask_kind", "blocks", "cu", "cil", "tv"].iter().map(|k| (k.to_string(), Source::Flag)).collect();
            cell_log.header(&format!("ablate cell {}", cell.name), &cfg, &overrides)?;
            let outcome = train::train(&cfg, data, &mut cell_log)?;
            let r = outcome.final_report.unwrap_or_default();
            log.line(format!("cell {} seed {seed}: cmc1 {:.4} map {:.4}", cell.name, r.cmc1, r.map))?;
            runs.push(CellRun { cell: cell.name.to_string(), seed, cmc1: r.cmc1, map: r.map });
        }
    }
    write_runs(&base.out.join("runs.csv"), &runs)?;
    let summary = summarize(cells, &runs);
    write_summary(&base.out.join("summary.csv"), &summary)?;
    Ok(summary)
}

fn write_runs(path: &Path, runs: &[CellRun]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SatnError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "seed", "cmc1", "map"])?;
    for r in runs {
        w.write_record([r.cell.clone(), r.seed.to_string(), format!("{:.6}", r.cmc1), format!("{:.6}", r.map)])?;
    }
    w.flush().map_err(|e| SatnError::io(path, e))
}

fn write_summary(path: &Path, rows: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "runs", "cmc1", "map", "delta_cmc1", "delta_map"])?;
    for s in rows {
        w.write_record([
            s.cell.clone(),
            s.runs.to_string(),
            format!("{:.6}", s.median_cmc1),
            format!("{:.6}", s.median_map),
            format!("{:+.6}", s.delta_cmc1),
            format!("{:+.6}", s.delta_map),
        ])?;
    }
    w.flush().map_err(|e| SatnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn full_cell_is_the_default_design() {
        let base = RunConfig::default();
        let full = COMPONENTS.iter().find(|c| c.name == FULL).unwrap().apply(&base);
        assert_eq!(full, base);
    }

    #[test]
    fn baseline_cell_has_no_attention() {
        let cfg = COMPONENTS[0].apply(&RunConfig::default());
        assert!(cfg.model_config().blocks.iter().all(|b| !b.is_active()));
    }

    #[test]
    fn generators_lists_the_generator_baselines() {
        let kinds: Vec<MaskKind> = GENERATORS.iter().map(|c| c.mask_kind).collect();
        for k in [Threshold, Power2, Power3, Sharp] {
            assert!(kinds.contains(&k));
        }
        assert!(GENERATORS.iter().skip(1).all(|c| !c.cu && !c.cil && !c.tv && c.blocks == ALL));
    }

    #[test]
    fn summary_deltas_are_against_the_first_cell() {
        let runs = vec![
            CellRun { cell: BASELINE.into(), seed: 0, cmc1: 0.5, map: 0.4 },
            CellRun { cell: BASELINE.into(), seed: 1, cmc1: 0.7, map: 0.6 },
            CellRun { cell: FULL.into(), seed: 0, cmc1: 0.9, map: 0.8 },
        ];
        let s = summarize(COMPONENTS, &runs);
        assert_eq!(s.len(), 2);
        assert!((s[0].median_map - 0.5).abs() < 1e-12);
        assert!((s[1].delta_map - 0.3).abs() < 1e-12);
    }
}
