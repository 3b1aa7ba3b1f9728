use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satn::dataio::{generate_toy_dataset, ToySpec};

const BIN: &str = env!("CARGO_BIN_EXE_satn");

fn satn(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn satn")
}

fn ok(args: &[&str]) -> String {
    let o = satn(args);
    assert!(o.status.success(), "satn {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: String,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let spec = ToySpec { train_identities: 4, test_identities: 3, cameras: 2, images_per_camera: 3, height: 32, width: 16 };
        generate_toy_dataset(&spec, 0, &root.join("data")).unwrap();
        let config = root.join("tiny.conf");
        fs::write(
            &config,
            "# small enough for tests\nwidths = 2,2,4,4\nhead_hidden = 8\nembed_dim = 4\ninput_h = 32\ninput_w = 16\np = 2\nk = 2\nbatches_per_epoch = 2\neval_every = 2\n",
        )
        .unwrap();
        let data = root.join("data").display().to_string();
        Self { _tmp: tmp, root, data }
    }

    fn dir(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn config(&self) -> String {
        self.dir("tiny.conf")
    }

    fn train(&self, out: &str, extra: &[&str]) -> String {
        let (cfg, dir) = (self.config(), self.dir(out));
        let mut args = vec!["train", "-q", "--config", &cfg, "--dataset", &self.data, "--out", &dir];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let f = Fixture::new();
    f.train("r0", &["--epochs", "0"]);
    let dir = f.root.join("r0");
    assert!(dir.join("checkpoint.satn").is_file());
    let metrics = String::from_utf8(read(dir.join("metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let f = Fixture::new();
    f.train("a", &["--epochs", "3", "--seed", "4"]);
    f.train("b", &["--epochs", "3", "--seed", "4"]);
    f.train("c", &["--epochs", "3", "--seed", "5"]);
    let (a, b, c) = (f.root.join("a"), f.root.join("b"), f.root.join("c"));
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert_eq!(read(a.join("checkpoint.satn")), read(b.join("checkpoint.satn")));
    assert_ne!(read(a.join("checkpoint.satn")), read(c.join("checkpoint.satn")));
}

#[test]
fn run_log_echoes_config_seed_version_and_overrides() {
    let f = Fixture::new();
    f.train("r", &["--epochs", "1", "--seed", "9", "--no-tv"]);
    let log = String::from_utf8(read(f.root.join("r/run.log"))).unwrap();
    assert!(log.contains(env!("CARGO_PKG_VERSION")));
    assert!(log.contains("seed = 9"));
    assert!(log.contains("override tv = false (flag)"));
    assert!(log.contains("override head_hidden = 8 (config file)"));
    assert!(log.contains("  lr = 0.0002"));
}

#[test]
fn tau_column_follows_the_schedule() {
    let f = Fixture::new();
    f.train("tau", &["--epochs", "90", "--set", "batches_per_epoch=1", "--set", "eval_every=90"]);
    let text = String::from_utf8(read(f.root.join("tau/metrics.csv"))).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let taus: Vec<f64> = rdr.records().map(|r| r.unwrap()[7].parse().unwrap()).collect();
    assert_eq!(taus.len(), 90);
    assert_eq!(taus[0], 1.0);
    assert!((taus[50] - (-0.4f64).exp()).abs() < 1e-6);
    assert!(taus[86] > 0.5);
    assert!(taus[87..].iter().all(|&t| t == 0.5));
}

#[test]
fn eval_reproduces_the_final_training_row() {
    let f = Fixture::new();
    f.train("r", &["--epochs", "2"]);
    let text = String::from_utf8(read(f.root.join("r/metrics.csv"))).unwrap();
    let last: Vec<String> = text.lines().last().unwrap().split(',').map(str::to_string).collect();
    let ck = f.dir("r/checkpoint.satn");
    let first = ok(&["eval", "-q", "--checkpoint", &ck, "--dataset", &f.data]);
    let again = ok(&["eval", "-q", "--checkpoint", &ck, "--dataset", &f.data]);
    assert_eq!(first, again);
    let report = String::from_utf8(read(f.root.join("r/eval/report.csv"))).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..5], &last[1..5]);
}

#[test]
fn incompatible_checkpoint_names_the_tensors() {
    let f = Fixture::new();
    f.train("r", &["--epochs", "0"]);
    let ck = f.dir("r/checkpoint.satn");
    let cfg = f.config();
    let o = satn(&["eval", "-q", "--checkpoint", &ck, "--config", &cfg, "--dataset", &f.data, "--set", "embed_dim=6"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("head.fc2.weight"), "{err}");
}

#[test]
fn dump_masks_is_deterministic_and_shaped_like_the_blocks() {
    let f = Fixture::new();
    f.train("r", &["--epochs", "1"]);
    let ck = f.dir("r/checkpoint.satn");
    let (d1, d2) = (f.dir("m1"), f.dir("m2"));
    ok(&["dump-masks", "-q", "--checkpoint", &ck, "--dataset", &f.data, "--out", &d1, "--count", "2"]);
    ok(&["dump-masks", "-q", "--checkpoint", &ck, "--dataset", &f.data, "--out", &d2, "--count", "2"]);
    let names: Vec<PathBuf> = fs::read_dir(f.root.join("m1/masks")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(names.iter().filter(|p| p.extension().unwrap() == "ppm").count(), 8);
    for p in &names {
        assert_eq!(read(p), read(f.root.join("m2/masks").join(p.file_name().unwrap())));
    }
    let satn_file = names.iter().find(|p| p.extension().unwrap() == "satn").unwrap();
    let entries = satn::container::read(satn_file).unwrap();
    let shapes: Vec<Vec<usize>> = entries.iter().map(|(_, t)| t.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![2, 16, 8], vec![2, 8, 4], vec![4, 4, 2], vec![4, 2, 1]]);
    assert_eq!(read(f.root.join("m1/gaps.csv")), read(f.root.join("m2/gaps.csv")));
    let gaps = String::from_utf8(read(f.root.join("m1/gaps.csv"))).unwrap();
    let mut rdr = csv::Reader::from_reader(gaps.as_bytes());
    for row in rdr.records() {
        let row = row.unwrap();
        let (sharp, sigmoid): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!(sharp < sigmoid, "block {}: sharp gap {sharp} vs sigmoid gate {sigmoid}", &row[0]);
    }
}

#[test]
fn ablate_baseline_matches_train_without_attention() {
    let f = Fixture::new();
    let (cfg, dir) = (f.config(), f.dir("abl"));
    ok(&["ablate", "-q", "--config", &cfg, "--dataset", &f.data, "--out", &dir, "--epochs", "2", "--grid", "generators", "--seeds", "3"]);
    f.train("base", &["--epochs", "2", "--seed", "3", "--mask-kind", "none"]);
    assert_eq!(read(f.root.join("abl/baseline/seed3/metrics.csv")), read(f.root.join("base/metrics.csv")));
    assert_eq!(read(f.root.join("abl/baseline/seed3/checkpoint.satn")), read(f.root.join("base/checkpoint.satn")));
    let summary = String::from_utf8(read(f.root.join("abl/summary.csv"))).unwrap();
    for cell in ["baseline", "sharp", "threshold", "power2", "power3"] {
        assert!(summary.lines().any(|l| l.starts_with(&format!("{cell},"))), "{summary}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(satn(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(satn(&["train", "--mask-kind", "fuzzy", "--epochs", "0"]).status.code(), Some(1));
    let f = Fixture::new();
    let (cfg, out) = (f.config(), f.dir("x"));
    let o = satn(&["train", "-q", "--config", &cfg, "--dataset", &f.data, "--out", &out, "--set", "k=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = satn(&["train", "-q", "--config", &cfg, "--dataset", &f.data, "--out", &out, "--epochs", "1", "--set", "lr=1e30"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(f.root.join("x/checkpoint.satn").is_file());
}

#[test]
fn verify_passes_on_a_fresh_build() {
    let o = satn(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
