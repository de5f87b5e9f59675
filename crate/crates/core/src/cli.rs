//! Command-line front end: `train`, `eval` and `demo`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{mix_augment, AugmentConfig};
use crate::config::RunConfig;
use crate::data::{
    gen_synthetic, label_to_image, load_dataset, write_dataset, write_pgm, SyntheticSpec, MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::network::SegNetwork;
use crate::routes::{route_order, RouteSet, ScanDirection};
use crate::trainer::{evaluate_network, parse_diversity_log, predict, train, CoTrainState, RunOutputs, Which};

pub const THREADS_ENV: &str = "DCSCAN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dcscan", version, about = "Dual-route selective-scan co-training for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train both networks from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Validate the configuration, print it with defaults filled in, and exit.
        #[arg(long)]
        dry_run: bool,
        /// Print only the resolved configuration as JSON and exit.
        #[arg(long)]
        dump_config: bool,
        /// Continue from a checkpoint directory written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of a dataset manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = NetworkChoice::A)]
        network: NetworkChoice,
        /// Directory for predicted masks (default: `<checkpoint>/predictions`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspection dumps.
    Demo {
        #[arg(value_enum)]
        kind: DemoKind,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Photometric probability for `augment`.
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        /// Patch size for `augment` (default: size/4).
        #[arg(long)]
        patch: Option<usize>,
        /// Output directory for `augment`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Diversity log for `diversity`.
        #[arg(long, default_value = "diversity.log")]
        log: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NetworkChoice {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DemoKind {
    Scan,
    Augment,
    Diversity,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    if let Err(msg) = check_threads_env() {
        let _ = writeln!(err, "error: {msg}");
        return 2;
    }
    let result = match cli.command {
        Command::Train { config, dry_run, dump_config, resume } => {
            cmd_train(&config, dry_run, dump_config, resume.as_deref(), out, err)
        }
        Command::Eval { checkpoint, data, network, out: pred_dir } => {
            cmd_eval(&checkpoint, &data, network, pred_dir.as_deref(), out, err)
        }
        Command::Demo { kind, size, seed, alpha, patch, out: dir, log } => match kind {
            DemoKind::Scan => demo_scan(size, out),
            DemoKind::Augment => demo_augment(size, seed, alpha, patch, &dir, out),
            DemoKind::Diversity => demo_diversity(&log, out),
        },
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
    }
}

/// Worker cap from the environment. Every command runs on one thread, which
/// satisfies any positive cap.
fn check_threads_env() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path) -> std::result::Result<RunConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", path.display())));
    }
    RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e.to_string()),
        other => Failure::from(other),
    })
}

fn cmd_train(
    config: &Path,
    dry_run: bool,
    dump_config: bool,
    resume: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let cfg = load_config(config)?;
    if dump_config {
        let _ = writeln!(out, "{}", cfg.to_json());
        return Ok(());
    }
    if dry_run {
        let _ = writeln!(out, "config {} is valid; resolved values:", config.display());
        let _ = writeln!(out, "{}", cfg.to_json());
        return Ok(());
    }
    let outputs = RunOutputs { dir: cfg.output_dir.clone() };
    fs::create_dir_all(&outputs.dir).map_err(io_err(&outputs.dir))?;
    let data_dir = outputs.dir.join("data");
    let manifest = match &cfg.data {
        Some(m) => m.clone(),
        None => {
            let synthetic = gen_synthetic(&cfg.synthetic)?;
            write_dataset(&data_dir, &synthetic, cfg.network.num_classes)?;
            data_dir.join(MANIFEST_NAME)
        }
    };
    // Training reads the dataset back from disk so that `eval` on the same
    // manifest sees bit-identical pixels.
    let (data, classes) = load_dataset(&manifest)?;
    if classes != cfg.network.num_classes {
        return Err(Failure::Usage(format!(
            "dataset has {classes} classes, network.num_classes is {}",
            cfg.network.num_classes
        )));
    }
    if data.labeled.is_empty() {
        return Err(Failure::Usage(format!("{} lists no labeled images", manifest.display())));
    }
    let config_copy = outputs.dir.join("config.json");
    fs::write(&config_copy, cfg.to_json()).map_err(io_err(&config_copy))?;

    let mut state = match resume {
        Some(dir) => {
            let s = CoTrainState::load(dir)?;
            if s.train != cfg.trainer {
                let _ = writeln!(err, "warning: resuming with trainer settings from {}", dir.display());
            }
            s
        }
        None => CoTrainState::new(&cfg.network, cfg.trainer.clone(), cfg.augment.clone(), cfg.losses)?,
    };
    let start = state.t;
    let history = train(&mut state, &data, Some(&outputs))?;
    if let Some(last) = history.last() {
        let _ = writeln!(
            out,
            "trained iterations {start}..{}: final sup={:.4} unsup={:.4} dfc={:.4} total={:.4}",
            state.t, last.sup, last.unsup, last.dfc, last.total
        );
    }
    let eval_set = if data.test.is_empty() { &data.labeled } else { &data.test };
    let report = state.evaluate(eval_set, Which::A)?;
    let path = outputs.dir.join(RunOutputs::FINAL_REPORT);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json).map_err(io_err(&path))?;
    let _ = writeln!(out, "final evaluation (network A):\n{report}");
    let _ = writeln!(out, "checkpoint: {}", outputs.final_dir().display());
    Ok(())
}

/// Accepts a co-training checkpoint (with `state.json`) or a single network directory.
fn load_network(checkpoint: &Path, which: NetworkChoice, err: &mut dyn Write) -> Result<SegNetwork> {
    let (dir, expected) = if checkpoint.join("state.json").is_file() {
        match which {
            NetworkChoice::A => (checkpoint.join("a").join("net"), RouteSet::Hv),
            NetworkChoice::B => (checkpoint.join("b").join("net"), RouteSet::Da),
        }
    } else {
        let expected = if which == NetworkChoice::A { RouteSet::Hv } else { RouteSet::Da };
        (checkpoint.to_path_buf(), expected)
    };
    let net = SegNetwork::load(&dir)?;
    if net.route_set() != expected {
        let _ = writeln!(
            err,
            "warning: network {which:?} in {} scans {} routes, expected {}",
            dir.display(),
            net.route_set(),
            expected
        );
    }
    Ok(net)
}

fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    which: NetworkChoice,
    pred_dir: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let net = load_network(checkpoint, which, err)?;
    let (data, _) = load_dataset(manifest)?;
    let samples = if data.test.is_empty() { &data.labeled } else { &data.test };
    if samples.is_empty() {
        return Err(Failure::Runtime(format!("{} holds no labeled images", manifest.display())));
    }
    let report = evaluate_network(&net, samples)?;
    let dir = pred_dir.map(Path::to_path_buf).unwrap_or_else(|| checkpoint.join("predictions"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let classes = net.config().num_classes;
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
        let mask = label_to_image(&predict(&net, &s.image)?, h, w, classes)?;
        write_pgm(dir.join(format!("pred_{i:04}.pgm")), &mask)?;
    }
    let _ = writeln!(out, "network {which:?} ({}) on {}:\n{report}", net.route_set(), manifest.display());
    let _ = writeln!(out, "predicted masks: {}", dir.display());
    Ok(())
}

fn demo_scan(size: usize, out: &mut dyn Write) -> CmdResult {
    if size == 0 {
        return Err(Failure::Usage("--size must be positive".into()));
    }
    let width = (size * size).to_string().len();
    for dir in ScanDirection::ALL {
        let perm = route_order(dir, size, size)?;
        let _ = writeln!(out, "{} order {:?}", dir.name(), perm.order());
        for r in 0..size {
            let row: Vec<String> =
                (0..size).map(|c| format!("{:>width$}", perm.inverse()[r * size + c])).collect();
            let _ = writeln!(out, "  {}", row.join(" "));
        }
    }
    Ok(())
}

fn demo_augment(size: usize, seed: u64, alpha: f64, patch: Option<usize>, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let spec = SyntheticSpec { image_size: size, seed, ..Default::default() };
    spec.validate()?;
    let cfg = AugmentConfig { alpha, ..Default::default() };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = spec.sample(&mut rng)?;
    let d = patch.unwrap_or((size / 4).max(1));
    let pair = mix_augment(&sample.image, sample.label.as_deref(), d, &cfg, &mut rng)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_pgm(dir.join("view_a.pgm"), &pair.first)?;
    write_pgm(dir.join("view_b.pgm"), &pair.second)?;
    write_pgm(dir.join("mask.pgm"), &pair.mask_image())?;
    let _ = writeln!(
        out,
        "wrote view_a.pgm, view_b.pgm, mask.pgm to {} ({} patches of size {d}, {} strong in view a)",
        dir.display(),
        pair.strong_in_first.len(),
        pair.strong_in_first.iter().filter(|&&s| s).count()
    );
    Ok(())
}

fn demo_diversity(log: &Path, out: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(log).map_err(io_err(log))?;
    let points = parse_diversity_log(&text)?;
    if points.is_empty() {
        return Err(Failure::Runtime(format!("{} holds no diversity entries", log.display())));
    }
    for (t, v) in points {
        let _ = writeln!(out, "iter {t:>6}  cosine distance {v:.6}");
    }
    Ok(())
}
