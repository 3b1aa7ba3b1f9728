//! Flat `key = value` run configuration.
//!
//! Values come from three layers with precedence flag > file > default.
//! Unknown keys are rejected in every layer.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use satn_core::attention::{MaskKind, TemperatureSchedule, DEFAULT_THRESHOLD};
use satn_core::diffcore::AdamConfig;
use satn_core::network::{AttentionBlockConfig, LossConfig, MaskSource, ModelConfig, NUM_BLOCKS};

use crate::error::{Result, SatnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub mu: f64,
    pub alpha: f64,
    pub tau_init: f64,
    pub tau_final: f64,
    pub p: usize,
    pub k: usize,
    /// 0 means one pass worth of PK batches over the training images.
    pub batches_per_epoch: usize,
    pub eval_every: usize,
    pub eval_noise: bool,
    pub widths: [usize; NUM_BLOCKS],
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub mask_kind: MaskKind,
    /// 1-based indices of blocks with attention.
    pub blocks: Vec<usize>,
    pub cu: bool,
    pub cu_p: usize,
    pub cu_q: usize,
    pub cil: bool,
    pub tv: bool,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TemperatureSchedule::default();
        let l = LossConfig::default();
        let a = AdamConfig::default();
        Self {
            seed: 0,
            dataset: PathBuf::from("data/toy"),
            out: PathBuf::from("runs/default"),
            epochs: 150,
            lr: a.lr,
            weight_decay: a.weight_decay,
            margin: l.margin,
            mu: l.mu,
            alpha: t.alpha,
            tau_init: t.tau_init,
            tau_final: t.tau_final,
            p: 8,
            k: 4,
            batches_per_epoch: 0,
            eval_every: 5,
            eval_noise: false,
            widths: m.widths,
            head_hidden: m.head_hidden,
            embed_dim: m.embed_dim,
            input_h: m.input_h,
            input_w: m.input_w,
            mask_kind: MaskKind::Sharp,
            blocks: vec![1, 2, 3, 4],
            cu: true,
            cu_p: 1,
            cu_q: 1,
            cil: true,
            tv: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

pub const KEYS: [&str; 29] = [
    "seed",
    "dataset",
    "out",
    "epochs",
    "lr",
    "weight_decay",
    "margin",
    "mu",
    "alpha",
    "tau_init",
    "tau_final",
    "p",
    "k",
    "batches_per_epoch",
    "eval_every",
    "eval_noise",
    "widths",
    "head_hidden",
    "embed_dim",
    "input_h",
    "input_w",
    "mask_kind",
    "blocks",
    "cu",
    "cu_p",
    "cu_q",
    "cil",
    "tv",
    "threshold",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| SatnError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(SatnError::Config(format!("`{key}`: expected true/false or on/off, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() || v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        return "none".into();
    }
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "tau_init" => self.tau_init = parse(key, v)?,
            "tau_final" => self.tau_final = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "batches_per_epoch" => self.batches_per_epoch = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_noise" => self.eval_noise = parse_bool(key, v)?,
            "widths" => {
                let w = parse_list(key, v)?;
                self.widths = w.try_into().map_err(|_| SatnError::Config(format!("`widths`: expected {NUM_BLOCKS} comma-separated values")))?;
            }
            "head_hidden" => self.head_hidden = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "input_h" => self.input_h = parse(key, v)?,
            "input_w" => self.input_w = parse(key, v)?,
            "mask_kind" => self.mask_kind = v.parse().map_err(|e| SatnError::Config(format!("`mask_kind`: {e}")))?,
            "blocks" => self.blocks = parse_list(key, v)?,
            "cu" => self.cu = parse_bool(key, v)?,
            "cu_p" => self.cu_p = parse(key, v)?,
            "cu_q" => self.cu_q = parse(key, v)?,
            "cil" => self.cil = parse_bool(key, v)?,
            "tv" => self.tv = parse_bool(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            _ => return Err(SatnError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let b = |v: bool| if v { "true" } else { "false" }.to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "dataset" => self.dataset.display().to_string(),
            "out" => self.out.display().to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "margin" => self.margin.to_string(),
            "mu" => self.mu.to_string(),
            "alpha" => self.alpha.to_string(),
            "tau_init" => self.tau_init.to_string(),
            "tau_final" => self.tau_final.to_string(),
            "p" => self.p.to_string(),
            "k" => self.k.to_string(),
            "batches_per_epoch" => self.batches_per_epoch.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_noise" => if self.eval_noise { "on" } else { "off" }.to_string(),
            "widths" => join(&self.widths),
            "head_hidden" => self.head_hidden.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "input_h" => self.input_h.to_string(),
            "input_w" => self.input_w.to_string(),
            "mask_kind" => self.mask_kind.to_string(),
            "blocks" => join(&self.blocks),
            "cu" => b(self.cu),
            "cu_p" => self.cu_p.to_string(),
            "cu_q" => self.cu_q.to_string(),
            "cil" => b(self.cil),
            "tv" => b(self.tv),
            "threshold" => self.threshold.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SatnError::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            self.set(k, v).map_err(|e| SatnError::Config(format!("{origin}:{}: {e}", n + 1)))?;
            keys.push(k.to_string());
        }
        Ok(keys)
    }

    /// Default, then the optional file, then `flags`. Returns the config and
    /// where each non-default key came from.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<(Self, Vec<(String, Source)>)> {
        let mut cfg = Self::default();
        let mut sources: Vec<(String, Source)> = Vec::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| SatnError::io(path, e))?;
            for k in cfg.apply_text(&text, &path.display().to_string())? {
                sources.retain(|(s, _)| *s != k);
                sources.push((k, Source::File));
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
            sources.retain(|(s, _)| s != k);
            sources.push((k.clone(), Source::Flag));
        }
        cfg.validate()?;
        Ok((cfg, sources))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SatnError::Config(m));
        if self.p == 0 || self.k == 0 {
            return bad("`p` and `k` must be positive".into());
        }
        if self.k < 2 {
            return bad("`k`: batch-hard mining needs at least two images per identity".into());
        }
        if self.eval_every == 0 {
            return bad("`eval_every` must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.mu >= 0.0) || !(self.margin >= 0.0) {
            return bad("`lr` must be positive and `weight_decay`, `mu`, `margin` non-negative".into());
        }
        if !(self.tau_final > 0.0) || !(self.tau_init >= self.tau_final) || !(self.alpha >= 0.0) {
            return bad("temperature schedule needs 0 < tau_final <= tau_init and alpha >= 0".into());
        }
        if let Some(&b) = self.blocks.iter().find(|&&b| b == 0 || b > NUM_BLOCKS) {
            return bad(format!("`blocks`: {b} is not a block index 1-{NUM_BLOCKS}"));
        }
        self.model_config().validate()?;
        Ok(())
    }

    /// Attention on the listed blocks; the context unit, when on, is placed
    /// on the listed blocks among 1-3.
    pub fn model_config(&self) -> ModelConfig {
        let mut blocks = [AttentionBlockConfig::off(); NUM_BLOCKS];
        for (i, b) in blocks.iter_mut().enumerate() {
            if !self.blocks.contains(&(i + 1)) || self.mask_kind == MaskKind::None {
                continue;
            }
            let source = if self.cu && i + 1 < NUM_BLOCKS { MaskSource::ContextUnit } else { MaskSource::Trunk };
            *b = AttentionBlockConfig { context_unit_p: self.cu_p, context_unit_q: self.cu_q, ..AttentionBlockConfig::with_mask(self.mask_kind, source) };
        }
        ModelConfig {
            in_channels: crate::dataio::CHANNELS,
            widths: self.widths,
            blocks,
            head_hidden: self.head_hidden,
            embed_dim: self.embed_dim,
            input_h: self.input_h,
            input_w: self.input_w,
            tv_enabled: self.tv,
            cil_enabled: self.cil,
            threshold: self.threshold,
        }
    }

    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule { alpha: self.alpha, tau_init: self.tau_init, tau_final: self.tau_final }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { margin: self.margin, mu: self.mu }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig { seed: 9, blocks: vec![1, 3], cu: false, mask_kind: MaskKind::Power2, ..RunConfig::default() };
        c.widths = [4, 4, 8, 8];
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "t").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::default().apply_text("lr = 0.1\nlearning_rate = 2\n", "f").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        fs::write(&f, "epochs = 7\nseed = 3\n").unwrap();
        let (c, src) = RunConfig::resolve(Some(&f), &[("seed".into(), "5".into())]).unwrap();
        assert_eq!((c.epochs, c.seed, c.lr), (7, 5, 0.0002));
        assert!(src.contains(&("seed".into(), Source::Flag)) && src.contains(&("epochs".into(), Source::File)));
    }

    #[test]
    fn context_unit_never_lands_on_block_four() {
        let m = RunConfig::default().model_config();
        m.validate().unwrap();
        assert_eq!(m.blocks[3].mask_source, MaskSource::Trunk);
        assert!(m.blocks[..3].iter().all(|b| b.uses_context_unit()));
    }
}
