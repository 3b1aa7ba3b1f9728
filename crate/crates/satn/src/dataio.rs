//! Synthetic toy re-identification data, dataset loading and augmentation.
//!
//! Every toy identity wears an upper and lower garment drawn from a small
//! shared palette, so clothing alone is ambiguous, plus one small patch
//! whose (position, colour) pair is unique to the identity. Cameras differ
//! by brightness, sensor noise and framing jitter.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use satn_core::{Rng, Tensor};

use crate::container;
use crate::error::{Result, SatnError};

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Split::Train, Split::Query, Split::Gallery].into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub train_identities: usize,
    pub test_identities: usize,
    pub cameras: usize,
    pub images_per_camera: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self { train_identities: 32, test_identities: 16, cameras: 3, images_per_camera: 6, height: 64, width: 32 }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SatnError::Config(format!("toy spec: {m}")));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return bad("image height and width must be positive multiples of 16");
        }
        if self.cameras < 2 {
            return bad("at least two cameras are needed for cross-camera matches");
        }
        if self.images_per_camera < 2 {
            return bad("at least two images per camera are needed to form query and gallery");
        }
        if self.train_identities == 0 || self.test_identities == 0 {
            return bad("train and test identity counts must be positive");
        }
        Ok(())
    }
}

type Rgb = [f32; 3];

const UPPER: [Rgb; 4] = [[0.80, 0.20, 0.20], [0.20, 0.35, 0.80], [0.85, 0.85, 0.85], [0.25, 0.60, 0.30]];
const LOWER: [Rgb; 4] = [[0.15, 0.15, 0.20], [0.45, 0.35, 0.25], [0.30, 0.30, 0.55], [0.60, 0.60, 0.60]];
const SKIN: Rgb = [0.85, 0.70, 0.55];
const PATCH: usize = 6;

/// Candidate patch corners on the torso and legs, `(row, col)` at 64x32.
const PATCH_SITES: [(usize, usize); 6] = [(14, 8), (14, 18), (24, 8), (24, 18), (38, 10), (48, 16)];

#[derive(Clone, Debug)]
struct Signature {
    upper: Rgb,
    lower: Rgb,
    patch_site: usize,
    patch: Rgb,
}

fn hue_to_rgb(h: f32) -> Rgb {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}

/// One signature per identity; (site, hue bucket) pairs are drawn without
/// replacement so no two identities share a patch.
fn signatures(n: usize, rng: &mut Rng) -> Vec<Signature> {
    let buckets = n.div_ceil(PATCH_SITES.len()).max(1);
    let mut combos: Vec<(usize, usize)> = (0..PATCH_SITES.len()).flat_map(|s| (0..buckets).map(move |b| (s, b))).collect();
    combos.shuffle(rng);
    combos
        .into_iter()
        .take(n)
        .map(|(site, bucket)| Signature {
            upper: UPPER[rng.gen_range(0..UPPER.len())],
            lower: LOWER[rng.gen_range(0..LOWER.len())],
            patch_site: site,
            patch: hue_to_rgb((bucket as f32 + 0.5) / buckets as f32),
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct CameraNuisance {
    brightness: f32,
    noise: f32,
    jitter: usize,
    background: Rgb,
}

fn cameras(n: usize, rng: &mut Rng) -> Vec<CameraNuisance> {
    (0..n)
        .map(|_| CameraNuisance {
            brightness: rng.gen_range(-0.15..0.15),
            noise: rng.gen_range(0.02..0.08),
            jitter: rng.gen_range(1..=3),
            background: [rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6)],
        })
        .collect()
}

fn fill(img: &mut [f32], h: usize, w: usize, rows: (isize, isize), cols: (isize, isize), color: Rgb) {
    for r in rows.0.max(0)..rows.1.min(h as isize) {
        for c in cols.0.max(0)..cols.1.min(w as isize) {
            for (ch, &v) in color.iter().enumerate() {
                img[(ch * h + r as usize) * w + c as usize] = v;
            }
        }
    }
}

fn render(sig: &Signature, cam: &CameraNuisance, h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    let mut img = vec![0.0f32; CHANNELS * h * w];
    fill(&mut img, h, w, (0, h as isize), (0, w as isize), cam.background);
    // background clutter
    for _ in 0..3 {
        let (r, c) = (rng.gen_range(0..h) as isize, rng.gen_range(0..w) as isize);
        let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        fill(&mut img, h, w, (r, r + 4), (c, c + 3), color);
    }
    let sy = h as f32 / 64.0;
    let sx = w as f32 / 32.0;
    let j = cam.jitter as isize;
    let (dy, dx) = (rng.gen_range(-j..=j), rng.gen_range(-j..=j));
    let rows = |a: usize, b: usize| ((a as f32 * sy) as isize + dy, (b as f32 * sy) as isize + dy);
    let cols = |a: usize, b: usize| ((a as f32 * sx) as isize + dx, (b as f32 * sx) as isize + dx);
    fill(&mut img, h, w, rows(4, 12), cols(12, 20), SKIN);
    fill(&mut img, h, w, rows(12, 36), cols(7, 25), sig.upper);
    fill(&mut img, h, w, rows(36, 60), cols(9, 23), sig.lower);
    let (pr, pc) = PATCH_SITES[sig.patch_site];
    fill(&mut img, h, w, rows(pr, pr + PATCH), cols(pc, pc + PATCH), sig.patch);
    for v in img.iter_mut() {
        let n: f32 = rng.sample(StandardNormal);
        *v = (*v + cam.brightness + cam.noise * n).clamp(0.0, 1.0);
    }
    Tensor::new([CHANNELS, h, w], img).expect("image shape")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub identity: usize,
    pub camera: usize,
    pub split: Split,
}

/// Writes the toy dataset under `dir`: one container per image,
/// `manifest.csv` and `means.csv` (per-channel mean of the training images).
pub fn generate_toy_dataset(spec: &ToySpec, seed: u64, dir: &Path) -> Result<Vec<Record>> {
    spec.validate()?;
    let mut setup = Rng::seed_from_u64(seed);
    let n_ids = spec.train_identities + spec.test_identities;
    let sigs = signatures(n_ids, &mut setup);
    let cams = cameras(spec.cameras, &mut setup);
    for split in [Split::Train, Split::Query, Split::Gallery] {
        let d = dir.join("images").join(split.as_str());
        fs::create_dir_all(&d).map_err(|e| SatnError::io(&d, e))?;
    }
    let mut records = Vec::new();
    let mut sums = [0.0f64; CHANNELS];
    let mut train_pixels = 0usize;
    for id in 0..n_ids {
        for cam in 0..spec.cameras {
            for k in 0..spec.images_per_camera {
                let split = match (id < spec.train_identities, k) {
                    (true, _) => Split::Train,
                    (false, 0) => Split::Query,
                    (false, _) => Split::Gallery,
                };
                let index = records.len() as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index + 1);
                let img = render(&sigs[id], &cams[cam], spec.height, spec.width, &mut rng);
                if split == Split::Train {
                    let plane = spec.height * spec.width;
                    for (c, s) in sums.iter_mut().enumerate() {
                        *s += img.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    train_pixels += plane;
                }
                let rel = PathBuf::from("images").join(split.as_str()).join(format!("{id:04}_c{cam}_{k:02}.satn"));
                container::write(&dir.join(&rel), &[("image".into(), img)])?;
                records.push(Record { path: rel, identity: id, camera: cam, split });
            }
        }
    }
    write_manifest(dir, &records)?;
    let means: Vec<f32> = sums.iter().map(|s| (s / train_pixels as f64) as f32).collect();
    write_means(dir, &means)?;
    Ok(records)
}

fn write_manifest(dir: &Path, records: &[Record]) -> Result<()> {
    let path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["path", "identity", "camera", "split"])?;
    for r in records {
        let p = r.path.to_string_lossy().replace('\\', "/");
        w.write_record([p.as_str(), &r.identity.to_string(), &r.camera.to_string(), r.split.as_str()])?;
    }
    w.flush().map_err(|e| SatnError::io(&path, e))
}

fn write_means(dir: &Path, means: &[f32]) -> Result<()> {
    let path = dir.join("means.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["channel", "mean"])?;
    for (c, m) in means.iter().enumerate() {
        w.write_record([c.to_string(), format!("{m:.9}")])?;
    }
    w.flush().map_err(|e| SatnError::io(&path, e))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    /// Manifest order; identity and camera are compacted to dense ranges.
    pub records: Vec<Record>,
    pub images: Vec<Tensor<f32>>,
    pub means: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }
}

fn dense<K: Ord + Copy>(keys: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let set: BTreeSet<K> = keys.collect();
    set.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.csv");
    let mut rd = csv::Reader::from_path(&manifest).map_err(|e| SatnError::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut raw = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| SatnError::Dataset(format!("manifest record {line}: missing column {i}")));
        let num = |i: usize| -> Result<usize> {
            field(i)?.trim().parse().map_err(|_| SatnError::Dataset(format!("manifest record {line}: bad number in column {i}")))
        };
        let split = Split::parse(field(3)?.trim()).ok_or_else(|| SatnError::Dataset(format!("manifest record {line}: unknown split `{}`", &row[3])))?;
        raw.push(Record { path: PathBuf::from(field(0)?), identity: num(1)?, camera: num(2)?, split });
    }
    if raw.is_empty() {
        return Err(SatnError::Dataset(format!("{}: no records", manifest.display())));
    }
    check_invariants(&raw)?;

    let ids = dense(raw.iter().map(|r| r.identity));
    let cams = dense(raw.iter().map(|r| r.camera));
    let mut images = Vec::with_capacity(raw.len());
    let mut shape: Option<Vec<usize>> = None;
    for r in &raw {
        let path = dir.join(&r.path);
        if !path.is_file() {
            return Err(SatnError::Dataset(format!("missing image file {}", path.display())));
        }
        let entries = container::read(&path)?;
        let img = entries
            .into_iter()
            .find(|(n, _)| n == "image")
            .map(|(_, t)| t)
            .ok_or_else(|| SatnError::Dataset(format!("{}: no `image` entry", path.display())))?;
        let expected = shape.get_or_insert_with(|| img.shape().to_vec());
        if img.rank() != 3 || img.dim(0) != CHANNELS || img.shape() != expected.as_slice() {
            return Err(SatnError::Dataset(format!(
                "{}: image shape {:?} does not match {:?} with {CHANNELS} channels",
                path.display(),
                img.shape(),
                expected
            )));
        }
        images.push(img);
    }
    let shape = shape.expect("non-empty");
    let means = read_means(dir)?;
    let records = raw.into_iter().map(|r| Record { identity: ids[&r.identity], camera: cams[&r.camera], ..r }).collect();
    Ok(Dataset { root: dir.to_path_buf(), records, images, means, height: shape[1], width: shape[2] })
}

fn check_invariants(records: &[Record]) -> Result<()> {
    let train: BTreeSet<usize> = records.iter().filter(|r| r.split == Split::Train).map(|r| r.identity).collect();
    let mut gallery: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::Gallery) {
        gallery.entry(r.identity).or_default().insert(r.camera);
    }
    for r in records.iter().filter(|r| r.split != Split::Train) {
        if train.contains(&r.identity) {
            return Err(SatnError::Dataset(format!("{}: identity {} appears in both train and test splits", r.path.display(), r.identity)));
        }
    }
    for r in records.iter().filter(|r| r.split == Split::Query) {
        let other_cam = gallery.get(&r.identity).is_some_and(|c| c.iter().any(|&c| c != r.camera));
        if !other_cam {
            return Err(SatnError::Dataset(format!("{}: query identity {} has no gallery image from another camera", r.path.display(), r.identity)));
        }
    }
    Ok(())
}

fn read_means(dir: &Path) -> Result<Vec<f32>> {
    let path = dir.join("means.csv");
    let mut rd = csv::Reader::from_path(&path).map_err(|e| SatnError::Dataset(format!("{}: {e}", path.display())))?;
    let mut means = vec![0.0f32; CHANNELS];
    let mut seen = 0;
    for row in rd.records() {
        let row = row?;
        let parse = |i: usize| row.get(i).and_then(|v| v.trim().parse::<f64>().ok());
        match (parse(0), parse(1)) {
            (Some(c), Some(m)) if (c as usize) < CHANNELS => {
                means[c as usize] = m as f32;
                seen += 1;
            }
            _ => return Err(SatnError::Dataset(format!("{}: malformed row", path.display()))),
        }
    }
    if seen != CHANNELS {
        return Err(SatnError::Dataset(format!("{}: expected {CHANNELS} channel means", path.display())));
    }
    Ok(means)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub out_h: usize,
    pub out_w: usize,
    pub min_area: f64,
    pub max_area: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub flip_prob: f64,
}

impl AugmentConfig {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self { out_h, out_w, min_area: 0.64, max_area: 1.0, min_ratio: 2.0, max_ratio: 3.0, flip_prob: 0.5 }
    }
}

/// Bilinear resize of the window `(top, left, h, w)` of a `[C, H, W]` image.
pub fn resize_crop(img: &Tensor<f32>, window: (usize, usize, usize, usize), out_h: usize, out_w: usize) -> Tensor<f32> {
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    let (top, left, wh, ww) = window;
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f32) {
        let x = ((o as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), x - i0 as f32)
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, out_h, wh);
            for ox in 0..out_w {
                let (x0, x1, fx) = coord(ox, out_w, ww);
                let at = |y: usize, x: usize| plane[(top + y) * w + left + x];
                let top_row = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot_row = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top_row * (1.0 - fy) + bot_row * fy);
            }
        }
    }
    Tensor::new([c, out_h, out_w], out).expect("resize shape")
}

pub fn hflip(img: &Tensor<f32>) -> Tensor<f32> {
    let w = img.dim(img.rank() - 1);
    let data = img.data().chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
    Tensor::new(img.shape(), data).expect("same shape")
}

fn subtract_means(mut img: Tensor<f32>, means: &[f32]) -> Tensor<f32> {
    let plane = img.dim(1) * img.dim(2);
    for (ch, m) in means.iter().enumerate() {
        img.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v -= m);
    }
    img
}

/// Crop window with area fraction and height/width ratio in the configured
/// ranges; ten rejected proposals fall back to the full image.
fn sample_window(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut Rng) -> (usize, usize, usize, usize) {
    for _ in 0..10 {
        let area = rng.gen_range(cfg.min_area..=cfg.max_area) * (h * w) as f64;
        let ratio = rng.gen_range(cfg.min_ratio..=cfg.max_ratio);
        let ch = (area * ratio).sqrt().round() as usize;
        let cw = (area / ratio).sqrt().round() as usize;
        if ch >= 1 && cw >= 1 && ch <= h && cw <= w {
            return (rng.gen_range(0..=h - ch), rng.gen_range(0..=w - cw), ch, cw);
        }
    }
    (0, 0, h, w)
}

/// Training transform: random crop, resize, random flip, mean subtraction.
pub fn augment(img: &Tensor<f32>, means: &[f32], cfg: &AugmentConfig, rng: &mut Rng) -> Tensor<f32> {
    let window = sample_window(img.dim(1), img.dim(2), cfg, rng);
    let mut out = resize_crop(img, window, cfg.out_h, cfg.out_w);
    if rng.gen_bool(cfg.flip_prob) {
        out = hflip(&out);
    }
    subtract_means(out, means)
}

/// Evaluation transform: full-image resize and mean subtraction.
pub fn eval_transform(img: &Tensor<f32>, means: &[f32], cfg: &AugmentConfig) -> Tensor<f32> {
    let out = resize_crop(img, (0, 0, img.dim(1), img.dim(2)), cfg.out_h, cfg.out_w);
    subtract_means(out, means)
}

/// Generator for augmenting the sample at `slot` of `epoch`, independent of
/// every other slot.
pub fn augment_rng(seed: u64, epoch: usize, slot: usize) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c_e5a1_7e00_0000);
    rng.set_stream(((epoch as u64) << 32) | slot as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_of_full_window_at_same_size_is_identity() {
        let img = Tensor::new([1, 4, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(resize_crop(&img, (0, 0, 4, 2), 4, 2), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = Tensor::new([2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(&hflip(&img).data()[..3], &[2.0, 1.0, 0.0]);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn patches_are_unique() {
        let sigs = signatures(48, &mut Rng::seed_from_u64(0));
        let keys: BTreeSet<(usize, [u32; 3])> = sigs.iter().map(|s| (s.patch_site, s.patch.map(f32::to_bits))).collect();
        assert_eq!(keys.len(), 48);
    }
}
