use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use satn::dataio::{augment, eval_transform, generate_toy_dataset, hflip, load_dataset, AugmentConfig, Split, ToySpec};
use satn::SatnError;
use satn_core::Rng;
use sha2::{Digest, Sha256};

fn small() -> ToySpec {
    ToySpec { train_identities: 4, test_identities: 4, cameras: 2, images_per_camera: 4, height: 32, width: 16 }
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let hash = Sha256::digest(fs::read(&p).unwrap());
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), format!("{hash:x}"));
            }
        }
    }
    out
}

#[test]
fn eight_ids_two_cameras_four_images_give_64_files() {
    let dir = tempfile::tempdir().unwrap();
    let recs = generate_toy_dataset(&small(), 3, dir.path()).unwrap();
    assert_eq!(recs.len(), 64);
    let files = digests(dir.path());
    assert_eq!(files.keys().filter(|k| k.ends_with(".satn")).count(), 64);
    assert!(files.contains_key("manifest.csv"));
    assert!(files.contains_key("means.csv"));
}

#[test]
fn same_seed_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_toy_dataset(&small(), 11, a.path()).unwrap();
    generate_toy_dataset(&small(), 11, b.path()).unwrap();
    assert_eq!(digests(a.path()), digests(b.path()));
}

#[test]
fn different_seeds_share_the_manifest_but_not_pixels() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_toy_dataset(&small(), 1, a.path()).unwrap();
    generate_toy_dataset(&small(), 2, b.path()).unwrap();
    let (da, db) = (digests(a.path()), digests(b.path()));
    assert_eq!(da["manifest.csv"], db["manifest.csv"]);
    let differing = da.iter().filter(|(k, v)| k.ends_with(".satn") && db[*k] != **v).count();
    assert_eq!(differing, 64);
}

#[test]
fn round_trip_preserves_labels() {
    let dir = tempfile::tempdir().unwrap();
    let recs = generate_toy_dataset(&small(), 5, dir.path()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    assert_eq!(data.records, recs);
    assert_eq!((data.height, data.width), (32, 16));
    assert_eq!(data.indices(Split::Train).len(), 32);
    assert_eq!(data.indices(Split::Query).len(), 8);
    assert_eq!(data.indices(Split::Gallery).len(), 24);
    assert!(data.images.iter().all(|t| t.shape() == [3, 32, 16]));
}

#[test]
fn missing_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let recs = generate_toy_dataset(&small(), 5, dir.path()).unwrap();
    let victim = dir.path().join(&recs[9].path);
    fs::remove_file(&victim).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains(&recs[9].path.file_name().unwrap().to_string_lossy().to_string()), "{err}");
}

#[test]
fn query_without_gallery_match_breaks_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    generate_toy_dataset(&small(), 5, dir.path()).unwrap();
    let path = dir.path().join("manifest.csv");
    let text = fs::read_to_string(&path).unwrap();
    // drop every gallery image of the first test identity
    let kept: Vec<&str> = text.lines().filter(|l| !(l.contains("gallery") && l.contains("/0004_"))).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, SatnError::Dataset(_)), "{err}");
    assert!(err.to_string().contains("gallery"), "{err}");
}

#[test]
fn augmentation_contracts() {
    let dir = tempfile::tempdir().unwrap();
    generate_toy_dataset(&small(), 5, dir.path()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    let cfg = AugmentConfig::new(16, 8);
    let mut rng = Rng::seed_from_u64(0);
    for img in data.images.iter().take(16) {
        let (lo, hi) = img.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = augment(img, &data.means, &cfg, &mut rng);
        assert_eq!(out.shape(), [3, 16, 8]);
        for c in 0..3 {
            let m = data.means[c];
            let plane = &out.data()[c * 128..(c + 1) * 128];
            assert!(plane.iter().all(|&v| v >= lo - m - 1e-6 && v <= hi - m + 1e-6));
        }
        assert_eq!(hflip(&hflip(img)), *img);
        assert_eq!(eval_transform(img, &data.means, &cfg), eval_transform(img, &data.means, &cfg));
    }
}
