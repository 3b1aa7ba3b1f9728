//! Residual backbone, sharp attention blocks, context unit and embedding head.
//!
//! Block `i` (1-based) is a stride-2 residual stage producing the trunk
//! features `T`. When its attention is active, a mask `M` is derived from
//! either `T` or the output of a context unit run on `T`, the attended
//! features are `A = M ⊙ T`, and the block emits `A + T` (or `A` alone when
//! cross-feature interaction is off).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{MaskKind, Noise, DEFAULT_THRESHOLD};
use crate::diffcore::{BatchNorm, Conv2d, Ctx, Graph, Linear, Mode, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::metriclearn::DEFAULT_MARGIN;
use crate::regularizers::DEFAULT_MU;
use crate::Rng;

pub const NUM_BLOCKS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskSource {
    Trunk,
    ContextUnit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionBlockConfig {
    pub attention_enabled: bool,
    pub mask_source: MaskSource,
    /// Stride-2 residual units in the context unit.
    pub context_unit_p: usize,
    /// Upsampling layers in the context unit.
    pub context_unit_q: usize,
    pub mask_kind: MaskKind,
}

impl AttentionBlockConfig {
    pub fn off() -> Self {
        Self { attention_enabled: false, mask_source: MaskSource::Trunk, context_unit_p: 1, context_unit_q: 1, mask_kind: MaskKind::None }
    }

    pub fn with_mask(kind: MaskKind, source: MaskSource) -> Self {
        Self { attention_enabled: kind != MaskKind::None, mask_source: source, mask_kind: kind, ..Self::off() }
    }

    pub fn is_active(&self) -> bool {
        self.attention_enabled && self.mask_kind != MaskKind::None
    }

    pub fn uses_context_unit(&self) -> bool {
        self.is_active() && self.mask_source == MaskSource::ContextUnit
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub widths: [usize; NUM_BLOCKS],
    pub blocks: [AttentionBlockConfig; NUM_BLOCKS],
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub tv_enabled: bool,
    pub cil_enabled: bool,
    /// λ of the thresholding mask.
    pub threshold: f64,
}

impl Default for ModelConfig {
    /// Sharp masks on every block, context unit on blocks 1-3, CIL and TV on.
    fn default() -> Self {
        let cu = AttentionBlockConfig::with_mask(MaskKind::Sharp, MaskSource::ContextUnit);
        Self {
            in_channels: 3,
            widths: [16, 32, 64, 128],
            blocks: [cu, cu, cu, AttentionBlockConfig::with_mask(MaskKind::Sharp, MaskSource::Trunk)],
            head_hidden: 1024,
            embed_dim: 128,
            input_h: 64,
            input_w: 32,
            tv_enabled: true,
            cil_enabled: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl ModelConfig {
    /// Same sizes with every attention path switched off.
    pub fn without_attention(&self) -> Self {
        Self { blocks: [AttentionBlockConfig::off(); NUM_BLOCKS], ..self.clone() }
    }

    /// Spatial size of block `i`'s output (0-based).
    pub fn block_hw(&self, i: usize) -> (usize, usize) {
        (self.input_h >> (i + 1), self.input_w >> (i + 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("in_channels", "must be at least 1"));
        }
        for (name, v) in [("input_h", self.input_h), ("input_w", self.input_w)] {
            if v == 0 || v % 16 != 0 {
                return Err(Error::config(name, format!("{v} is not a positive multiple of 16")));
            }
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("widths[{i}]"), "channel width must be at least 1"));
        }
        if self.head_hidden == 0 {
            return Err(Error::config("head_hidden", "must be at least 1"));
        }
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim", format!("{} is below the minimum of 2", self.embed_dim)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold", format!("{} is outside [0, 1]", self.threshold)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let field = |f: &str| format!("block{}.{f}", i + 1);
            if !b.uses_context_unit() {
                continue;
            }
            if i == NUM_BLOCKS - 1 {
                return Err(Error::config(field("mask_source"), "the context unit is only allowed on blocks 1-3"));
            }
            if b.context_unit_p == 0 {
                return Err(Error::config(field("context_unit_p"), "must be at least 1"));
            }
            if b.context_unit_q != b.context_unit_p {
                return Err(Error::config(field("context_unit_q"), format!("must equal context_unit_p ({}) to preserve the feature size", b.context_unit_p)));
            }
            let (h, w) = self.block_hw(i);
            let step = 1usize.checked_shl(b.context_unit_p as u32).unwrap_or(usize::MAX);
            if h % step != 0 || w % step != 0 {
                return Err(Error::config(field("context_unit_p"), format!("{h}x{w} features cannot be halved {} times", b.context_unit_p)));
            }
        }
        Ok(())
    }
}

/// Basic residual unit: two 3x3 conv/BN layers, projection shortcut when the
/// shape changes, ReLU after the sum.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl ResidualUnit {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Self {
        let n = |s: &str| format!("{name}.{s}");
        let conv1 = Conv2d::new(store, &n("conv1"), cin, cout, 3, stride, rng);
        let bn1 = BatchNorm::new(store, &n("bn1"), cout);
        let conv2 = Conv2d::new(store, &n("conv2"), cout, cout, 3, 1, rng);
        let bn2 = BatchNorm::new(store, &n("bn2"), cout);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let c = Conv2d::new(store, &n("proj"), cin, cout, 1, stride, rng);
            (c, BatchNorm::new(store, &n("proj_bn"), cout))
        });
        Self { conv1, bn1, conv2, bn2, shortcut }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = ctx.graph.relu(h)?;
        let h = self.conv2.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.graph.add(h, skip)?;
        ctx.graph.relu(sum)
    }
}

/// Down-then-up sub-network: `p` stride-2 residual units followed by `q`
/// nearest-neighbour 2x upsamplings, each followed by a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct ContextUnit {
    down: Vec<ResidualUnit>,
    up: Vec<Conv2d>,
}

impl ContextUnit {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, p: usize, q: usize, rng: &mut Rng) -> Self {
        let down = (0..p).map(|j| ResidualUnit::new(store, &format!("{name}.down{}", j + 1), channels, channels, 2, rng)).collect();
        let up = (0..q).map(|j| Conv2d::new(store, &format!("{name}.up{}", j + 1), channels, channels, 1, 1, rng)).collect();
        Self { down, up }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, t: Var) -> Result<Var> {
        let shape = ctx.graph.shape(t).to_vec();
        let step = 1usize << self.down.len();
        if shape.len() != 4 || !shape[2].is_multiple_of(step) || !shape[3].is_multiple_of(step) {
            return Err(Error::Contract(format!(
                "context unit with {} downsampling units needs spatial dims divisible by {step}, got {shape:?}",
                self.down.len()
            )));
        }
        let mut x = t;
        for unit in &self.down {
            x = unit.forward(ctx, x)?;
        }
        for conv in &self.up {
            x = ctx.graph.upsample2x(x)?;
            x = conv.forward(ctx, x)?;
        }
        Ok(x)
    }
}

/// Global average pool, FC, BN, ReLU, FC.
#[derive(Clone, Debug)]
pub struct Head {
    fc1: Linear,
    bn: BatchNorm,
    fc2: Linear,
}

impl Head {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cin: usize, hidden: usize, out: usize, rng: &mut Rng) -> Self {
        let fc1 = Linear::new(store, "head.fc1", cin, hidden, rng);
        let bn = BatchNorm::new(store, "head.bn", hidden);
        let fc2 = Linear::new(store, "head.fc2", hidden, out, rng);
        Self { fc1, bn, fc2 }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, features: Var) -> Result<Var> {
        let x = ctx.graph.global_avg_pool(features)?;
        let x = self.fc1.forward(ctx, x)?;
        let x = self.bn.forward(ctx, x)?;
        let x = ctx.graph.relu(x)?;
        self.fc2.forward(ctx, x)
    }
}

/// Plain residual network: four stages and the head, no attention.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<ResidualUnit>,
    pub head: Head,
}

impl Backbone {
    /// Parameters are created stages first, then the head.
    pub fn new<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let mut stages = Vec::with_capacity(NUM_BLOCKS);
        for (i, &w) in config.widths.iter().enumerate() {
            stages.push(ResidualUnit::new(store, &format!("stage{}", i + 1), cin, w, 2, rng));
            cin = w;
        }
        let head = Head::new(store, cin, config.head_hidden, config.embed_dim, rng);
        Ok(Self { stages, head })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<Var> {
        let mut x = images;
        for stage in &self.stages {
            x = stage.forward(ctx, x)?;
        }
        self.head.forward(ctx, x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    /// `F`, fed to the next stage.
    pub features: Var,
    /// `A = M ⊙ T`, present when the block's attention is active.
    pub attended: Option<Var>,
    pub mask: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub embedding: Var,
    pub blocks: Vec<BlockOutput>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, mu: DEFAULT_MU }
    }
}

/// Graph nodes of the composite loss.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub triplet: Var,
    /// `(block index, penalty)` for every active block, 0-based.
    pub tv: Vec<(usize, Var)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub context_units: Vec<Option<ContextUnit>>,
}

impl Model {
    /// Creates all parameters in `store`: the backbone exactly as
    /// [`Backbone::new`] would, then the context units.
    pub fn new<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let backbone = Backbone::new(config, store, rng)?;
        let context_units = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b.uses_context_unit().then(|| {
                    let name = format!("block{}.cu", i + 1);
                    ContextUnit::new(store, &name, config.widths[i], b.context_unit_p, b.context_unit_q, rng)
                })
            })
            .collect();
        Ok(Self { config: config.clone(), backbone, context_units })
    }

    pub fn build<T: Real>(config: &ModelConfig, rng: &mut Rng) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(config, &mut store, rng)?;
        Ok((model, store))
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.in_channels || shape[2] != c.input_h || shape[3] != c.input_w {
            return Err(Error::shape("model input", format!("expected [N, {}, {}, {}], got {shape:?}", c.in_channels, c.input_h, c.input_w)));
        }
        Ok(())
    }

    /// Block `index` (0-based) applied to `input`.
    pub fn attention_block_forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, index: usize, input: Var, tau: f64, noise: &mut Noise<'_>) -> Result<BlockOutput> {
        let cfg = &self.config.blocks[index];
        let trunk = self.backbone.stages[index].forward(ctx, input)?;
        if !cfg.is_active() {
            return Ok(BlockOutput { features: trunk, attended: None, mask: None });
        }
        if !(tau > 0.0) {
            return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
        }
        let x = match &self.context_units[index] {
            Some(cu) => cu.forward(ctx, trunk)?,
            None => trunk,
        };
        let g = &mut ctx.graph;
        let mask = match cfg.mask_kind {
            MaskKind::Sharp => {
                let pi = g.normalize_channels(x)?;
                let (g0, g1) = noise.draw(g.shape(pi));
                g.relaxed_mask(pi, g0, g1, T::of(tau))?
            }
            MaskKind::Sigmoid => g.sigmoid(x)?,
            MaskKind::Threshold => {
                let pi = g.normalize_channels(x)?;
                g.threshold(pi, T::of(self.config.threshold))?
            }
            MaskKind::Power2 | MaskKind::Power3 => {
                let pi = g.normalize_channels(x)?;
                g.powi(pi, if cfg.mask_kind == MaskKind::Power2 { 2 } else { 3 })?
            }
            MaskKind::None => unreachable!("inactive blocks return early"),
        };
        let attended = g.mul(mask, trunk)?;
        let features = if self.config.cil_enabled { g.add(attended, trunk)? } else { attended };
        Ok(BlockOutput { features, attended: Some(attended), mask: Some(mask) })
    }

    /// Full forward pass. Noise is drawn block by block in order.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, images: Var, tau: f64, noise: &mut Noise<'_>) -> Result<ForwardOutput> {
        self.check_input(ctx.graph.shape(images))?;
        let mut x = images;
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for i in 0..NUM_BLOCKS {
            let out = self.attention_block_forward(ctx, i, x, tau, noise)?;
            x = out.features;
            blocks.push(out);
        }
        let embedding = self.backbone.head.forward(ctx, x)?;
        Ok(ForwardOutput { embedding, blocks })
    }

    /// Batch-hard triplet loss plus `mu` times the TV penalty of every
    /// active block's attended features (TV dropped when disabled).
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, out: &ForwardOutput, labels: &[usize], cfg: LossConfig) -> Result<LossNodes> {
        let dist = g.pairwise_distances(out.embedding)?;
        let triplet = g.batch_hard_triplet(dist, labels, T::of(cfg.margin))?;
        let mut total = triplet;
        let mut tv = Vec::new();
        if self.config.tv_enabled {
            for (i, b) in out.blocks.iter().enumerate() {
                let Some(a) = b.attended else { continue };
                let p = g.tv_penalty(a)?;
                tv.push((i, p));
                let weighted = g.scale(p, T::of(cfg.mu))?;
                total = g.add(total, weighted)?;
            }
        }
        Ok(LossNodes { total, triplet, tv })
    }

    /// Embeddings of `images` with running batch-norm statistics.
    pub fn embed<T: Real>(&self, store: &ParamStore<T>, images: &Tensor<T>, tau: f64, noise: &mut Noise<'_>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(store, Mode::Eval);
        let x = ctx.graph.constant(images.clone());
        let out = self.forward(&mut ctx, x, tau, noise)?;
        Ok(ctx.graph.value(out.embedding).clone())
    }
}

/// Number of trainable scalars whose name starts with `prefix`.
pub fn parameter_count<T: Real>(store: &ParamStore<T>, prefix: &str) -> usize {
    store.trainable_ids().filter(|&id| store.name(id).starts_with(prefix)).map(|id| store.get(id).len()).sum()
}

/// Name prefix of block `i`'s (0-based) context unit parameters.
pub fn context_unit_prefix(i: usize) -> String {
    format!("block{}.cu.", i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::commit;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig { widths: [2, 2, 2, 2], head_hidden: 6, embed_dim: 4, input_h: 16, input_w: 16, ..ModelConfig::default() }
    }

    fn images(n: usize, cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
        use rand::Rng as _;
        let mut rng = Rng::seed_from_u64(seed);
        let shape = [n, cfg.in_channels, cfg.input_h, cfg.input_w];
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_config_is_valid_full_design() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert!(c.blocks.iter().all(|b| b.mask_kind == MaskKind::Sharp));
        assert_eq!(c.blocks.iter().filter(|b| b.uses_context_unit()).count(), 3);
        assert!(c.cil_enabled && c.tv_enabled);
    }

    #[test]
    fn config_violations_name_the_field() {
        let field = |c: ModelConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let mut c = tiny();
        c.blocks[3] = AttentionBlockConfig::with_mask(MaskKind::Sharp, MaskSource::ContextUnit);
        assert_eq!(field(c), "block4.mask_source");
        assert_eq!(field(ModelConfig { input_h: 40, ..tiny() }), "input_h");
        assert_eq!(field(ModelConfig { embed_dim: 1, ..tiny() }), "embed_dim");
        let mut c = tiny();
        c.blocks[0].context_unit_q = 2;
        assert_eq!(field(c), "block1.context_unit_q");
        let mut c = tiny();
        c.blocks[2].context_unit_p = 2;
        c.blocks[2].context_unit_q = 2;
        assert_eq!(field(c), "block3.context_unit_p");
    }

    #[test]
    fn embedding_shape_and_zero_input() {
        let cfg = ModelConfig { widths: [4, 4, 8, 8], head_hidden: 16, ..ModelConfig::default() };
        let (model, mut store) = Model::build::<f64>(&cfg, &mut Rng::seed_from_u64(1)).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(images(2, &cfg, 3));
        let mut rng = Rng::seed_from_u64(5);
        model.forward(&mut ctx, x, 1.0, &mut Noise::Sample(&mut rng)).unwrap();
        let upd = ctx.take_updates();
        commit(&mut store, upd);
        let e = model.embed(&store, &images(1, &cfg, 4), 0.5, &mut Noise::Off).unwrap();
        assert_eq!(e.shape(), &[1, 128]);
        let zeros = Tensor::zeros(&[1, 3, 64, 32]);
        let z = model.embed(&store, &zeros, 0.5, &mut Noise::Off).unwrap();
        assert!(z.is_finite());
        assert_eq!(z, model.embed(&store, &zeros, 0.5, &mut Noise::Off).unwrap());
        assert!(model.embed(&store, &Tensor::zeros(&[1, 3, 32, 32]), 0.5, &mut Noise::Off).is_err());
    }

    #[test]
    fn context_unit_preserves_shape() {
        let mut store = ParamStore::<f64>::new();
        let cu = ContextUnit::new(&mut store, "cu", 3, 1, 1, &mut Rng::seed_from_u64(0));
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(Tensor::full(&[2, 3, 8, 4], 0.5));
        let y = cu.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.graph.shape(y), &[2, 3, 8, 4]);
        let odd = ctx.graph.constant(Tensor::zeros(&[1, 3, 5, 4]));
        assert!(matches!(cu.forward(&mut ctx, odd), Err(Error::Contract(_))));
    }

    #[test]
    fn context_unit_cost_grows_with_depth() {
        let (_, store) = Model::build::<f32>(&ModelConfig::default(), &mut Rng::seed_from_u64(0)).unwrap();
        let counts: Vec<usize> = (0..3).map(|i| parameter_count(&store, &context_unit_prefix(i))).collect();
        assert!(counts[0] > 0 && counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
        assert_eq!(parameter_count(&store, &context_unit_prefix(3)), 0);
    }

    #[test]
    fn inactive_block_passes_trunk_through() {
        let mut cfg = tiny();
        cfg.blocks[1] = AttentionBlockConfig::off();
        let (model, store) = Model::build::<f64>(&cfg, &mut Rng::seed_from_u64(2)).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(images(2, &cfg, 1));
        let out = model.forward(&mut ctx, x, 1.0, &mut Noise::Off).unwrap();
        assert!(out.blocks[1].attended.is_none() && out.blocks[1].mask.is_none());
        assert!(out.blocks[0].attended.is_some());
    }

    #[test]
    fn cross_feature_output_is_bounded_by_trunk() {
        let cfg = tiny();
        let (model, store) = Model::build::<f64>(&cfg, &mut Rng::seed_from_u64(8)).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(images(3, &cfg, 2));
        let mut rng = Rng::seed_from_u64(1);
        let out = model.forward(&mut ctx, x, 0.7, &mut Noise::Sample(&mut rng)).unwrap();
        for b in &out.blocks {
            let f = ctx.graph.value(b.features);
            let a = ctx.graph.value(b.attended.unwrap());
            for (&fv, &av) in f.data().iter().zip(a.data()) {
                let t = fv - av;
                assert!(t >= 0.0 && t <= fv + 1e-12 && fv <= 2.0 * t + 1e-12);
            }
        }
    }

    #[test]
    fn cil_off_emits_attended_features() {
        let cfg = ModelConfig { cil_enabled: false, ..tiny() };
        let (model, store) = Model::build::<f64>(&cfg, &mut Rng::seed_from_u64(8)).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(images(2, &cfg, 2));
        let out = model.forward(&mut ctx, x, 1.0, &mut Noise::Off).unwrap();
        assert!(out.blocks.iter().all(|b| Some(b.features) == b.attended));
    }

    #[test]
    fn eval_before_training_is_rejected() {
        let cfg = tiny();
        let (model, store) = Model::build::<f64>(&cfg, &mut Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(model.embed(&store, &images(1, &cfg, 0), 0.5, &mut Noise::Off), Err(Error::UninitializedStats(_))));
    }
}
