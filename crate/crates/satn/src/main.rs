use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use satn::commands;
use satn::config::{RunConfig, Source};
use satn::dataio::ToySpec;
use satn::error::{Result, SatnError};

#[derive(Parser)]
#[command(name = "satn", version, about = "Sharp attention networks for re-identification on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics.csv and run.log.
    Train(RunArgs),
    /// Evaluate a checkpoint on the query and gallery splits.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every cell of an ablation grid for each seed.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// components, blocks, generators or directional.
        #[arg(long, default_value = "components")]
        grid: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Run the gradient, sampling, TV and metric property suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write eval-mode attention masks and heat overlays for query images.
    DumpMasks {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        no_overlays: bool,
    },
    /// Generate the synthetic toy dataset.
    GenToy {
        #[arg(long, default_value = "data/toy")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_ids: Option<usize>,
        #[arg(long)]
        test_ids: Option<usize>,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        per_camera: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    Off,
    On,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// none, sharp, sigmoid, threshold, power2 or power3.
    #[arg(long)]
    mask_kind: Option<String>,
    /// Comma-separated 1-based blocks with attention, or `none`.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    no_cu: bool,
    #[arg(long)]
    no_cil: bool,
    #[arg(long)]
    no_tv: bool,
    #[arg(long, value_enum)]
    eval_noise: Option<Toggle>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn flags(&self) -> Result<Vec<(String, String)>> {
        let mut f = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                f.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("dataset", self.dataset.as_ref().map(|p| p.display().to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("mask_kind", self.mask_kind.clone());
        put("blocks", self.blocks.clone());
        put("cu", self.no_cu.then(|| "false".into()));
        put("cil", self.no_cil.then(|| "false".into()));
        put("tv", self.no_tv.then(|| "false".into()));
        put("eval_noise", self.eval_noise.map(|t| matches!(t, Toggle::On).to_string()));
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| SatnError::Config(format!("`--set {kv}`: expected KEY=VALUE")))?;
            f.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(f)
    }

    fn resolve(&self) -> Result<(RunConfig, Vec<(String, Source)>)> {
        RunConfig::resolve(self.config.as_deref(), &self.flags()?)
    }

    /// Like [`resolve`](Self::resolve), falling back to the config saved next
    /// to the checkpoint. The output directory defaults to `<run>/eval`.
    fn resolve_for_checkpoint(&self, checkpoint: &std::path::Path, sub: &str) -> Result<(RunConfig, Vec<(String, Source)>)> {
        let file = commands::checkpoint_config(checkpoint, self.config.as_deref());
        let mut flags = self.flags()?;
        if self.out.is_none() {
            let dir = checkpoint.parent().unwrap_or(std::path::Path::new(".")).join(sub);
            flags.push(("out".into(), dir.display().to_string()));
        }
        RunConfig::resolve(file.as_deref(), &flags)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let (cfg, src) = a.resolve()?;
            let o = commands::train(&cfg, &src, a.quiet)?;
            if let Some(r) = o.final_report {
                println!("cmc1 {:.4} cmc5 {:.4} cmc10 {:.4} map {:.4}", r.cmc1, r.cmc5, r.cmc10, r.map);
            }
            println!("checkpoint {}", o.checkpoint.display());
        }
        Command::Eval { run, checkpoint } => {
            let (cfg, src) = run.resolve_for_checkpoint(&checkpoint, "eval")?;
            let r = commands::eval(&cfg, &src, &checkpoint, run.quiet)?;
            println!("cmc1 {:.6} cmc5 {:.6} cmc10 {:.6} map {:.6}", r.cmc1, r.cmc5, r.cmc10, r.map);
        }
        Command::Ablate { run, grid, seeds } => {
            let (cfg, src) = run.resolve()?;
            println!("cell,runs,cmc1,map,delta_cmc1,delta_map");
            for s in commands::ablate(&cfg, &src, &grid, &seeds, run.quiet)? {
                println!("{},{},{:.4},{:.4},{:+.4},{:+.4}", s.cell, s.runs, s.median_cmc1, s.median_map, s.delta_cmc1, s.delta_map);
            }
        }
        Command::Verify { seed, out } => {
            let results = commands::verify(seed, out.as_deref())?;
            for r in &results {
                println!("{}", commands::format_check(r));
            }
            return Ok(results.iter().all(|r| r.passed));
        }
        Command::DumpMasks { run, checkpoint, count, no_overlays } => {
            let (cfg, src) = run.resolve_for_checkpoint(&checkpoint, "masks")?;
            for g in commands::dump_masks(&cfg, &src, &checkpoint, count, !no_overlays, run.quiet)? {
                println!("block {} {:?} {}: gap {:.4} sigmoid {:.4}", g.block, g.shape, g.mask_kind, g.gap, g.sigmoid_gap);
            }
        }
        Command::GenToy { out, seed, train_ids, test_ids, cameras, per_camera } => {
            let d = ToySpec::default();
            let spec = ToySpec {
                train_identities: train_ids.unwrap_or(d.train_identities),
                test_identities: test_ids.unwrap_or(d.test_identities),
                cameras: cameras.unwrap_or(d.cameras),
                images_per_camera: per_camera.unwrap_or(d.images_per_camera),
                ..d
            };
            let n = commands::gen_toy(&spec, seed, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
