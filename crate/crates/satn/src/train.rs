//! Training loop, checkpoints and test-split evaluation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satn_core::attention::Noise;
use satn_core::diffcore::{commit, lr_at_epoch, Adam, Ctx, Mode, ParamStore};
use satn_core::evalkit::{self, EvalReport, Meta};
use satn_core::metriclearn::pk_batch_sample;
use satn_core::network::Model;
use satn_core::{Rng, Tensor};

use crate::config::{RunConfig, Source};
use crate::container;
use crate::dataio::{augment, augment_rng, eval_transform, AugmentConfig, Dataset, Split};
use crate::error::{Result, SatnError};

pub const CHECKPOINT: &str = "checkpoint.satn";
pub const METRICS: &str = "metrics.csv";
pub const RUN_LOG: &str = "run.log";
pub const CONFIG: &str = "config.txt";
const TAU_KEY: &str = "state/tau";
const EPOCH_KEY: &str = "state/epoch";
const EVAL_CHUNK: usize = 32;

/// Appends to `run.log`, echoing to stderr unless quiet.
pub struct RunLog {
    file: fs::File,
    path: PathBuf,
    quiet: bool,
}

impl RunLog {
    pub fn create(dir: &Path, quiet: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| SatnError::io(dir, e))?;
        let path = dir.join(RUN_LOG);
        let file = fs::File::create(&path).map_err(|e| SatnError::io(&path, e))?;
        Ok(Self { file, path, quiet })
    }

    pub fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        let msg = msg.as_ref();
        if !self.quiet {
            eprintln!("{msg}");
        }
        writeln!(self.file, "{msg}").map_err(|e| SatnError::io(&self.path, e))
    }

    /// Version, seed, every resolved key and the origin of each override.
    pub fn header(&mut self, command: &str, cfg: &RunConfig, sources: &[(String, Source)]) -> Result<()> {
        self.line(format!("satn {} {command}", env!("CARGO_PKG_VERSION")))?;
        self.line(format!("seed = {}", cfg.seed))?;
        for (k, src) in sources {
            let origin = if *src == Source::Flag { "flag" } else { "config file" };
            self.line(format!("override {k} = {} ({origin})", cfg.get(k).unwrap_or_default()))?;
        }
        self.line("resolved config:")?;
        for l in cfg.to_text().lines() {
            self.line(format!("  {l}"))?;
        }
        Ok(())
    }
}

/// A stream of the run generator reserved for one purpose.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const INIT_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const EVAL_NOISE_STREAM: u64 = 3;

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>, tau: f64, epoch: usize) -> Result<()> {
    let mut entries: Vec<(String, Tensor<f32>)> = store.ids().map(|id| (store.name(id).to_string(), store.get(id).clone())).collect();
    entries.push((TAU_KEY.into(), Tensor::scalar(tau as f32)));
    entries.push((EPOCH_KEY.into(), Tensor::scalar(epoch as f32)));
    container::write(path, &entries)
}

pub struct Checkpoint {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub tau: f64,
    pub epoch: usize,
}

/// Rebuilds the model for `cfg` and fills it from `path`. Every missing,
/// unexpected or differently shaped tensor is named in the error.
pub fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let entries = container::read(path)?;
    let (model, mut store) = Model::build::<f32>(&cfg.model_config(), &mut stream(cfg.seed, INIT_STREAM))?;
    let mut problems = Vec::new();
    let mut seen = vec![false; store.len()];
    let (mut tau, mut epoch) = (None, 0);
    for (name, t) in entries {
        match name.as_str() {
            TAU_KEY => tau = Some(t.item() as f64),
            EPOCH_KEY => epoch = t.item() as usize,
            _ => match store.find(&name) {
                Some(id) if store.get(id).shape() == t.shape() => {
                    *store.get_mut(id) = t;
                    seen[id.index()] = true;
                }
                Some(id) => problems.push(format!("{name}: checkpoint {:?} vs model {:?}", t.shape(), store.get(id).shape())),
                None => problems.push(format!("{name}: not part of the configured model")),
            },
        }
    }
    for id in store.ids().filter(|id| !seen[id.index()]) {
        problems.push(format!("{}: missing from checkpoint", store.name(id)));
    }
    if !problems.is_empty() {
        return Err(SatnError::Checkpoint(format!("{} incompatible with config:\n  {}", path.display(), problems.join("\n  "))));
    }
    let tau = tau.ok_or_else(|| SatnError::Checkpoint(format!("{}: no {TAU_KEY} entry", path.display())))?;
    Ok(Checkpoint { model, store, tau, epoch })
}

fn meta(data: &Dataset, idx: &[usize]) -> Vec<Meta> {
    idx.iter().map(|&i| Meta { identity: data.records[i].identity, camera: data.records[i].camera }).collect()
}

/// Eval-mode embeddings of the given dataset images.
pub fn embed_images(model: &Model, store: &ParamStore<f32>, data: &Dataset, idx: &[usize], tau: f64, noise: &mut Noise<'_>) -> Result<Tensor<f32>> {
    let cfg = &model.config;
    let aug = AugmentConfig::new(cfg.input_h, cfg.input_w);
    let mut rows = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let imgs: Vec<Tensor<f32>> = chunk.iter().map(|&i| eval_transform(&data.images[i], &data.means, &aug)).collect();
        let e = model.embed(store, &Tensor::stack(&imgs)?, tau, noise)?;
        rows.extend(e.unstack());
    }
    Ok(Tensor::stack(&rows)?)
}

pub fn evaluate(model: &Model, store: &ParamStore<f32>, data: &Dataset, tau: f64, eval_noise: Option<u64>) -> Result<EvalReport> {
    let (q, g) = (data.indices(Split::Query), data.indices(Split::Gallery));
    let mut rng = eval_noise.map(|s| stream(s, EVAL_NOISE_STREAM));
    let mut noise = match rng.as_mut() {
        Some(r) => Noise::Sample(r),
        None => Noise::Off,
    };
    let qe = embed_images(model, store, data, &q, tau, &mut noise)?;
    let ge = embed_images(model, store, data, &g, tau, &mut noise)?;
    Ok(evalkit::evaluate(&qe, &meta(data, &q), &ge, &meta(data, &g)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub report: Option<EvalReport>,
    pub loss_tri: f64,
    pub loss_tv: f64,
    pub tau: f64,
}

impl EpochRow {
    fn csv_fields(&self) -> Vec<String> {
        let m = |f: fn(&EvalReport) -> f64| self.report.as_ref().map(|r| format!("{:.6}", f(r))).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            m(|r| r.cmc1),
            m(|r| r.cmc5),
            m(|r| r.cmc10),
            m(|r| r.map),
            format!("{:.6}", self.loss_tri),
            format!("{:.6}", self.loss_tv),
            format!("{:.6}", self.tau),
        ]
    }
}

pub const METRICS_HEADER: [&str; 8] = ["epoch", "cmc1", "cmc5", "cmc10", "map", "loss_tri", "loss_tv", "tau"];

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    /// Last evaluation, absent when no epoch ran.
    pub final_report: Option<EvalReport>,
    pub checkpoint: PathBuf,
}

/// One PK batch per step; BN statistics and the optimizer are updated after
/// every step. A non-finite loss or gradient stops the run with the last
/// written checkpoint left in place.
pub fn train(cfg: &RunConfig, data: &Dataset, log: &mut RunLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| SatnError::io(out, e))?;
    fs::write(out.join(CONFIG), cfg.to_text()).map_err(|e| SatnError::io(out.join(CONFIG), e))?;
    let ckpt = out.join(CHECKPOINT);
    let metrics_path = out.join(METRICS);

    let (model, mut store) = Model::build::<f32>(&cfg.model_config(), &mut stream(cfg.seed, INIT_STREAM))?;
    let mut adam = Adam::new(cfg.adam(), &store);
    let mut sampler = stream(cfg.seed, SAMPLER_STREAM);
    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let schedule = cfg.schedule();
    let aug = AugmentConfig::new(cfg.input_h, cfg.input_w);

    let train_idx = data.indices(Split::Train);
    let train_ids: Vec<usize> = train_idx.iter().map(|&i| data.records[i].identity).collect();
    let batch = cfg.p * cfg.k;
    let batches = if cfg.batches_per_epoch > 0 { cfg.batches_per_epoch } else { (train_idx.len() / batch).max(1) };
    log.line(format!(
        "model: {} trainable scalars, {} train images, {batches} batches of {batch} per epoch",
        store.trainable_ids().map(|id| store.get(id).len()).sum::<usize>(),
        train_idx.len()
    ))?;

    save_checkpoint(&ckpt, &store, schedule.at(0), 0)?;
    let mut csv = csv::Writer::from_path(&metrics_path)?;
    csv.write_record(METRICS_HEADER)?;
    let mut rows = Vec::new();
    let mut final_report = None;

    for epoch in 0..cfg.epochs {
        let tau = schedule.at(epoch);
        let lr = lr_at_epoch(cfg.lr, epoch, cfg.epochs);
        let (mut sum_tri, mut sum_tv) = (0.0, 0.0);
        for b in 0..batches {
            let picks = pk_batch_sample(&train_ids, cfg.p, cfg.k, &mut sampler)?;
            let mut images = Vec::with_capacity(batch);
            let mut labels = Vec::with_capacity(batch);
            for (slot, &pi) in picks.iter().enumerate() {
                let src = train_idx[pi];
                let mut rng = augment_rng(cfg.seed, epoch, b * batch + slot);
                images.push(augment(&data.images[src], &data.means, &aug, &mut rng));
                labels.push(data.records[src].identity);
            }
            let x = Tensor::stack(&images)?;

            let mut ctx = Ctx::new(&store, Mode::Train);
            let xv = ctx.graph.constant(x);
            let fwd = model.forward(&mut ctx, xv, tau, &mut Noise::Sample(&mut noise_rng)).map_err(numeric(epoch, b))?;
            let loss = model.loss(&mut ctx.graph, &fwd, &labels, cfg.loss()).map_err(numeric(epoch, b))?;
            let total = ctx.graph.value(loss.total).item();
            if !total.is_finite() {
                return Err(SatnError::Numeric(format!("loss {total} at epoch {epoch}, batch {b}")));
            }
            sum_tri += ctx.graph.value(loss.triplet).item() as f64;
            sum_tv += loss.tv.iter().map(|&(_, v)| ctx.graph.value(v).item() as f64).sum::<f64>();
            let grads = ctx.graph.backward(loss.total).map_err(numeric(epoch, b))?;
            let param_grads = ctx.param_grads(&grads);
            let updates = ctx.take_updates();
            drop(ctx);
            adam.step(&mut store, &param_grads, lr).map_err(numeric(epoch, b))?;
            commit(&mut store, updates);
        }
        let evaluate_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let report = if evaluate_now {
            let r = evaluate(&model, &store, data, tau, cfg.eval_noise.then_some(cfg.seed))?;
            save_checkpoint(&ckpt, &store, tau, epoch + 1)?;
            final_report = Some(r);
            Some(r)
        } else {
            None
        };
        let row = EpochRow { epoch, report, loss_tri: sum_tri / batches as f64, loss_tv: sum_tv / batches as f64, tau };
        csv.write_record(row.csv_fields())?;
        csv.flush().map_err(|e| SatnError::io(&metrics_path, e))?;
        log.line(format!(
            "epoch {epoch}: tau {tau:.4} lr {lr:.3e} loss_tri {:.4} loss_tv {:.4}{}",
            row.loss_tri,
            row.loss_tv,
            report.map(|r| format!(" | cmc1 {:.4} cmc5 {:.4} map {:.4}", r.cmc1, r.cmc5, r.map)).unwrap_or_default()
        ))?;
        rows.push(row);
    }
    Ok(TrainOutcome { rows, final_report, checkpoint: ckpt })
}

fn numeric(epoch: usize, batch: usize) -> impl Fn(satn_core::Error) -> SatnError {
    move |e| match e {
        satn_core::Error::NonFinite { .. } | satn_core::Error::NonFiniteGradient(_) => SatnError::Numeric(format!("{e} at epoch {epoch}, batch {batch}")),
        other => other.into(),
    }
}

/// Train-mode forward passes without parameter updates, to estimate the
/// batch-norm statistics of an untrained model.
pub fn calibrate_batch_norm(model: &Model, store: &mut ParamStore<f32>, data: &Dataset, cfg: &RunConfig, batches: usize) -> Result<()> {
    let aug = AugmentConfig::new(cfg.input_h, cfg.input_w);
    let train_idx = data.indices(Split::Train);
    let train_ids: Vec<usize> = train_idx.iter().map(|&i| data.records[i].identity).collect();
    let mut sampler = stream(cfg.seed, SAMPLER_STREAM);
    for _ in 0..batches {
        let picks = pk_batch_sample(&train_ids, cfg.p, cfg.k, &mut sampler)?;
        let imgs: Vec<Tensor<f32>> = picks.iter().map(|&p| eval_transform(&data.images[train_idx[p]], &data.means, &aug)).collect();
        let updates = {
            let mut ctx = Ctx::new(store, Mode::Train);
            let x = ctx.graph.constant(Tensor::stack(&imgs)?);
            model.forward(&mut ctx, x, cfg.tau_init, &mut Noise::Off)?;
            ctx.take_updates()
        };
        commit(store, updates);
    }
    Ok(())
}
