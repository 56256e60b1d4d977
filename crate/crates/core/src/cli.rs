//! The `mpif` command-line tool. Lives in the library so tests can drive
//! the exact code path the binary runs.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 missing or
//! unreadable files, 4 malformed config or input, 5 checkpoint/config
//! mismatch, 6 training diverged.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::augment::NoiseMode;
use crate::dsp::{DspError, FrontendConfig};
use crate::io::{
    featurize, join_keys, load_utterances, parse_keys, parse_manifest, parse_run_config, parse_scores, write_corpus,
    write_scores, IoError, Manifest, RunConfig, SplitSpec, SyntheticSpec,
};
use crate::metrics::{
    ablation_report, compute_eer, compute_min_tdcf, parse_ablation_csv, write_ablation_csv, AblationRow, MetricError,
    TdcfCosts, TrialScore,
};
use crate::model::{decode_checkpoint, ModelError, Network};
use crate::train::{score_utterances, train, RunLog, TrainError, Utterance, BEST_CHECKPOINT, RUNLOG_FILE};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;

/// Name of the config snapshot each subcommand leaves next to its outputs.
pub const SNAPSHOT_FILE: &str = "config.json";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Io { .. } => EXIT_IO,
            IoError::Parse { .. } | IoError::Config(_) | IoError::Audio { .. } => EXIT_CONFIG,
            IoError::Mismatch(_) => EXIT_MISMATCH,
            IoError::Dsp(_) => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::Config(_) | ModelError::Checkpoint(_) => EXIT_CONFIG,
            ModelError::Mismatch(_) | ModelError::InputShape { .. } => EXIT_MISMATCH,
            ModelError::Tensor(_) => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Io { .. } => Self::new(EXIT_IO, e.to_string()),
            TrainError::Config(_) | TrainError::Augment(_) => Self::new(EXIT_CONFIG, e.to_string()),
            TrainError::Divergence { .. } | TrainError::NonFiniteGradient { .. } => Self::new(EXIT_DIVERGED, e.to_string()),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        let code = match e {
            MetricError::Costs(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mpif", version, about = "F0-subband fake speech detection: features, training and scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bonafide/spoof corpus (WAVs, manifests, keys).
    Synth(SynthArgs),
    /// Compute and cache features for every row of a manifest.
    Featurize(FeaturizeArgs),
    /// Train from a run config; writes checkpoints and the run log.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint.
    Eval(EvalArgs),
    /// EER and min t-DCF of a score file against a key file.
    Score(ScoreArgs),
    /// Train and evaluate once per p_hyper value and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utterances per class in the train split.
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    #[arg(long, default_value_t = 20)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 30)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 27_000)]
    pub duration_samples: usize,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config whose `frontend` section is used (default frontend if absent).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Recompute even when a valid cache file exists.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `data.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config; its frontend is used and its network must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub keys: PathBuf,
    /// JSON t-DCF cost model (default constants if absent).
    #[arg(long)]
    pub costs: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated p_hyper grid.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub p_hyper: Vec<f64>,
    /// Manifest the trained models are scored on (default: the dev manifest).
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// System name used for the table columns.
    #[arg(long, default_value = "MPIF-Res2Net")]
    pub system: String,
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Featurize(a) => featurize_cmd(&a).map(|_| ()),
        Command::Train(a) => train_cmd(&a).map(|_| ()),
        Command::Eval(a) => eval_cmd(&a).map(|_| ()),
        Command::Score(a) => score_cmd(&a).map(|_| ()),
        Command::Ablate(a) => ablate_cmd(&a).map(|_| ()),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn read_string(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::new(EXIT_CONFIG, format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn snapshot(path: &Path, value: serde_json::Value) -> Result<()> {
    write(path, serde_json::to_string_pretty(&value).expect("json value") + "\n")
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    Ok(parse_run_config(&read_string(path)?)?)
}

/// Manifest plus the directory its relative audio paths hang off.
fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    Ok((parse_manifest(&read_string(path)?)?, parent(path).to_path_buf()))
}

fn load_set(path: &Path, frontend: &FrontendConfig, features: Option<&Path>, with_audio: bool) -> Result<Vec<Utterance>> {
    let (m, base) = load_manifest(path)?;
    Ok(load_utterances(&m, &base, frontend, features, with_audio)?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let split = |name: &str, n| SplitSpec {
        name: name.into(),
        n_per_class: n,
    };
    let spec = SyntheticSpec {
        duration_samples: a.duration_samples,
        seed: a.seed,
        splits: vec![split("train", a.n_train), split("dev", a.n_dev), split("eval", a.n_eval)],
        ..Default::default()
    };
    let paths = write_corpus(&a.out, &spec)?;
    snapshot(&a.out.join(SNAPSHOT_FILE), json!({ "subcommand": "synth", "spec": spec }))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn featurize_cmd(a: &FeaturizeArgs) -> Result<crate::io::FeaturizeReport> {
    let frontend = match &a.config {
        Some(p) => load_config(p)?.frontend,
        None => FrontendConfig::default(),
    };
    let (m, base) = load_manifest(&a.manifest)?;
    let report = featurize(&m, &base, &a.out, &frontend, a.force)?;
    snapshot(
        &a.out.join(SNAPSHOT_FILE),
        json!({ "subcommand": "featurize", "manifest": a.manifest, "frontend": frontend, "force": a.force }),
    )?;
    println!("written {} skipped {} failed {}", report.written, report.skipped, report.failed.len());
    if !report.failed.is_empty() {
        for (id, e) in &report.failed {
            eprintln!("{id}: {e}");
        }
        return Err(CliError::new(EXIT_IO, format!("{} file(s) failed", report.failed.len())));
    }
    Ok(report)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Manifests and directories named by a run config, resolved against the
/// config file's directory.
struct RunPaths {
    train: PathBuf,
    dev: PathBuf,
    features: Option<PathBuf>,
}

fn run_paths(cfg: &RunConfig, config_path: &Path) -> Result<RunPaths> {
    let base = parent(config_path);
    let need = |p: &Option<PathBuf>, name: &str| {
        p.as_ref()
            .map(|p| resolve(base, p))
            .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("config has no data.{name}")))
    };
    Ok(RunPaths {
        train: need(&cfg.data.train_manifest, "train_manifest")?,
        dev: need(&cfg.data.dev_manifest, "dev_manifest")?,
        features: cfg.data.feature_dir.as_ref().map(|p| resolve(base, p)),
    })
}

fn run_training(cfg: &RunConfig, paths: &RunPaths, out: &Path) -> Result<crate::train::TrainOutcome> {
    let with_audio = cfg.train.noise.mode != NoiseMode::None;
    let feats = paths.features.as_deref();
    let train_set = load_set(&paths.train, &cfg.frontend, feats, with_audio)?;
    let dev_set = load_set(&paths.dev, &cfg.frontend, feats, false)?;
    write(&out.join(SNAPSHOT_FILE), cfg.to_canonical_json())?;
    let outcome = train(cfg, &train_set, &dev_set, Some(out))?;
    // the files on disk must agree with what was kept in memory
    let log = RunLog::from_jsonl(&read_string(&out.join(RUNLOG_FILE))?)
        .map_err(|e| CliError::new(EXIT_FAILURE, format!("run log: {e}")))?;
    if log != outcome.log {
        return Err(CliError::new(EXIT_FAILURE, "run log on disk differs from the run"));
    }
    decode_checkpoint(&read(&out.join(BEST_CHECKPOINT))?)?;
    Ok(outcome)
}

pub fn train_cmd(a: &TrainArgs) -> Result<RunLog> {
    let cfg = load_config(&a.config)?;
    let paths = run_paths(&cfg, &a.config)?;
    let out = match (&a.out, &cfg.data.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(parent(&a.config), o),
        (None, None) => return Err(CliError::new(EXIT_CONFIG, "no output directory (--out or data.out_dir)")),
    };
    let outcome = run_training(&cfg, &paths, &out)?;
    for r in &outcome.log.records {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.3}  dev EER {:.4}  min t-DCF {:.4}  specmix {}/{}",
            r.epoch, r.train_loss, r.train_accuracy, r.dev_eer, r.dev_min_tdcf, r.specmix_batches, r.batches
        );
    }
    if let Some(b) = outcome.log.best() {
        println!("best epoch {} (dev EER {:.4}) -> {}", b.epoch, b.dev_eer, out.join(BEST_CHECKPOINT).display());
    }
    Ok(outcome.log)
}

fn write_score_file(path: &Path, scores: &[TrialScore], n_rows: usize) -> Result<()> {
    let text = write_scores(scores);
    write(path, &text)?;
    let back = parse_scores(&read_string(path)?)?;
    if back.len() != n_rows {
        return Err(CliError::new(EXIT_FAILURE, format!("{}: expected {n_rows} rows", path.display())));
    }
    Ok(())
}

pub fn eval_cmd(a: &EvalArgs) -> Result<Vec<TrialScore>> {
    if a.batch_size == 0 {
        return Err(CliError::new(EXIT_CONFIG, "--batch-size must be at least 1"));
    }
    let ck = decode_checkpoint(&read(&a.checkpoint)?)?;
    let frontend = match &a.config {
        Some(p) => {
            let cfg = load_config(p)?;
            if cfg.network != ck.config {
                return Err(CliError::new(
                    EXIT_MISMATCH,
                    format!("{}: network config differs from the checkpoint's", p.display()),
                ));
            }
            cfg.frontend
        }
        None => FrontendConfig::default(),
    };
    if (frontend.rows, frontend.frames) != (ck.config.input_rows, ck.config.input_cols) {
        return Err(CliError::new(
            EXIT_MISMATCH,
            format!(
                "features are {}x{} but the checkpoint expects {}x{}",
                frontend.rows, frontend.frames, ck.config.input_rows, ck.config.input_cols
            ),
        ));
    }
    let net: Network = ck.to_network()?;
    let set = load_set(&a.manifest, &frontend, a.features.as_deref(), false)?;
    let scores = score_utterances(&net, &set, a.batch_size)?;
    write_score_file(&a.out, &scores, set.len())?;
    let snap = PathBuf::from(format!("{}.{SNAPSHOT_FILE}", a.out.display()));
    snapshot(
        &snap,
        json!({
            "subcommand": "eval",
            "checkpoint": a.checkpoint,
            "checkpoint_step": ck.step,
            "manifest": a.manifest,
            "features": a.features,
            "batch_size": a.batch_size,
            "frontend": frontend,
            "network": ck.config,
        }),
    )?;
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreReport {
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: f64,
    pub costs: TdcfCosts,
}

pub fn score_report(scores: &[TrialScore], costs: &TdcfCosts) -> Result<ScoreReport> {
    let eer = compute_eer(scores)?;
    let min_tdcf = compute_min_tdcf(scores, costs)?;
    let n_bonafide = scores.iter().filter(|t| t.label == Some(crate::Label::Bonafide)).count();
    Ok(ScoreReport {
        n_bonafide,
        n_spoof: scores.len() - n_bonafide,
        eer: eer.eer,
        eer_threshold: eer.threshold,
        min_tdcf,
        costs: costs.clone(),
    })
}

pub fn score_cmd(a: &ScoreArgs) -> Result<ScoreReport> {
    let costs: TdcfCosts = match &a.costs {
        Some(p) => serde_json::from_str(&read_string(p)?)
            .map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?,
        None => TdcfCosts::default(),
    };
    costs.coefficients()?;
    let scores = parse_scores(&read_string(&a.scores)?)?;
    let keys = parse_keys(&read_string(&a.keys)?)?;
    let report = score_report(&join_keys(&scores, &keys)?, &costs)?;
    println!("trials     {} bonafide / {} spoof", report.n_bonafide, report.n_spoof);
    println!("EER        {:.4}% (threshold {})", 100.0 * report.eer, report.eer_threshold);
    println!("min t-DCF  {:.6}", report.min_tdcf);
    if let Some(out) = &a.out {
        let mut v = serde_json::to_value(&report).expect("report serialises");
        v["scores"] = json!(a.scores);
        v["keys"] = json!(a.keys);
        snapshot(out, v)?;
    }
    Ok(report)
}

/// Results of one ablation sweep.
#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub table: String,
    pub logs: Vec<(f64, RunLog)>,
}

fn p_dir(p: f64) -> String {
    format!("p_hyper_{p}")
}

pub fn ablate_cmd(a: &AblateArgs) -> Result<AblationOutcome> {
    let base = load_config(&a.config)?;
    let paths = run_paths(&base, &a.config)?;
    let mut grid = a.p_hyper.clone();
    if grid.is_empty() || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(CliError::new(EXIT_CONFIG, "p_hyper values must lie in [0, 1]"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let eval_manifest = a.eval_manifest.clone().unwrap_or_else(|| paths.dev.clone());
    let eval_set = load_set(&eval_manifest, &base.frontend, paths.features.as_deref(), false)?;
    snapshot(
        &a.out.join(SNAPSHOT_FILE),
        json!({
            "subcommand": "ablate",
            "p_hyper": grid,
            "system": a.system,
            "eval_manifest": eval_manifest,
            "run": serde_json::to_value(&base).expect("config serialises"),
        }),
    )?;

    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for &p in &grid {
        let mut cfg = base.clone();
        cfg.train.specmix.p_hyper = p;
        let dir = a.out.join(p_dir(p));
        let outcome = run_training(&cfg, &paths, &dir)?;
        if p == 1.0 && cfg.train.noise.mode == NoiseMode::None {
            if let Some(r) = outcome.log.records.iter().find(|r| r.identity_batches != r.batches) {
                return Err(CliError::new(
                    EXIT_FAILURE,
                    format!("p_hyper = 1 altered {} batch(es) in epoch {}", r.batches - r.identity_batches, r.epoch),
                ));
            }
        }
        let scores = score_utterances(&outcome.best, &eval_set, cfg.train.eval_batch_size)?;
        write_score_file(&dir.join("scores.tsv"), &scores, eval_set.len())?;
        let report = score_report(&scores, &cfg.costs)?;
        println!("p_hyper {p}: EER {:.4} min t-DCF {:.4}", report.eer, report.min_tdcf);
        rows.push(AblationRow {
            system: a.system.clone(),
            p_hyper: p,
            eer: report.eer,
            min_tdcf: report.min_tdcf,
        });
        logs.push((p, outcome.log));
    }

    let table = ablation_report(&rows)?;
    let csv_text = write_ablation_csv(&rows)?;
    write(&a.out.join("ablation.csv"), &csv_text)?;
    write(&a.out.join("ablation.txt"), &table)?;
    if parse_ablation_csv(&read_string(&a.out.join("ablation.csv"))?)? != rows {
        return Err(CliError::new(EXIT_FAILURE, "ablation CSV does not round-trip"));
    }
    print!("{table}");
    Ok(AblationOutcome { rows, table, logs })
}
