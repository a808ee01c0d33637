//! Command-line orchestration: subcommands, run manifests, exit codes.

pub mod config;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::error;
use serde::{Deserialize, Serialize};

pub use config::{load_config, PipelineConfig};

use crate::ensemble::{EnsembleManifest, Strategy};
use crate::error::{Error, Result};
use crate::ingest::csv_io::read_beats_file;
use crate::models::{checkpoint, Architecture};
use crate::train::TrainingHistory;
use crate::util::{stage_seed, thread_budget};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Exit status for an error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        Error::Config(_) => EXIT_CONFIG,
        Error::Parse { .. } | Error::Format { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Split(_) => {
            EXIT_DATA
        }
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ecgkit", version, about = "MIT-BIH beat classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (JSON); absent keys take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment WFDB records into a labelled, split beat CSV.
    Ingest {
        /// Directory holding `.hea`, `.dat` and annotation files.
        #[arg(long)]
        records_dir: PathBuf,
        /// Lead name, or `auto` for MLII with a fallback to the first signal.
        #[arg(long)]
        lead: Option<String>,
        /// Samples per beat window.
        #[arg(long)]
        beat_len: Option<usize>,
        /// Annotation file extension.
        #[arg(long)]
        annotator: Option<String>,
        /// Output beat CSV.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Balance the train split with per-class GAN samples.
    Augment {
        /// Split beat CSV from `ingest`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Discriminator confidence a synthetic beat needs to be kept.
        #[arg(long)]
        tau: Option<f64>,
        /// Fraction of the majority train count each minority class is raised to.
        #[arg(long)]
        balance_ratio: Option<f64>,
        /// Adversarial training epochs per class.
        #[arg(long)]
        epochs: Option<usize>,
        /// Output beat CSV with synthetic train beats appended.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one architecture or `all` of them.
    Train {
        /// `cnn`, `cnn_lstm`, `cnn_lstm_attn`, `resnet1d`, a comma list, or `all`.
        #[arg(long)]
        arch: String,
        /// Pipeline configuration (JSON).
        #[arg(long, required = true)]
        config: PathBuf,
        /// Beat CSV with train/val tags.
        #[arg(long)]
        data: PathBuf,
        /// Output directory; one subdirectory per architecture.
        #[arg(long)]
        out: PathBuf,
        /// Master seed; overrides the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report metrics, intervals and Grad-CAM for one checkpoint.
    Evaluate {
        /// Model checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Beat CSV; test-tagged beats are used when any exist.
        #[arg(long)]
        test: PathBuf,
        /// Training history CSV to copy into the report.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fuse the logits of several checkpoints.
    Ensemble {
        /// `models.json` listing checkpoints and validation macro F1.
        #[arg(long)]
        manifest: PathBuf,
        /// `all_equal`, `top3_equal`, `top2_equal` or `top2_weighted`.
        #[arg(long)]
        strategy: Option<String>,
        /// Beat CSV; test-tagged beats are used when any exist.
        #[arg(long)]
        test: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grad-CAM maps for the first test beats.
    Gradcam {
        /// Model checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Beat CSV; test-tagged beats are used when any exist.
        #[arg(long)]
        test: PathBuf,
        /// Number of beats to explain.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Class to explain; the predicted class when absent.
        #[arg(long)]
        target: Option<usize>,
        /// Output directory for `gradcam_<i>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest, augment, train, ensemble and evaluate in one run.
    Reproduce {
        /// Train all four architectures.
        #[arg(long)]
        all: bool,
        /// Architectures to train when `--all` is absent.
        #[arg(long, value_delimiter = ',')]
        arch: Vec<String>,
        /// Pipeline configuration (JSON).
        #[arg(long, required = true)]
        config: PathBuf,
        /// Records directory; overrides the configuration.
        #[arg(long)]
        records_dir: Option<PathBuf>,
        /// Output root; overrides the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Augment { .. } => "augment",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ensemble { .. } => "ensemble",
            Command::Gradcam { .. } => "gradcam",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// `ok`, or the error that ended the run.
    pub status: String,
    pub produced: Vec<PathBuf>,
}

impl RunManifest {
    /// Writes through a temporary file and a rename.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Where a file-output command records its manifest.
pub fn manifest_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

struct Outcome {
    config_hash: Option<String>,
    seed: Option<u64>,
    manifest: PathBuf,
    produced: Vec<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Vec<Architecture>> {
    if s == "all" {
        return Ok(Architecture::ALL.to_vec());
    }
    s.split(',')
        .map(|a| a.trim().parse::<Architecture>().map_err(|e| Error::Usage(e.to_string())))
        .collect()
}

fn config_or_default(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn dispatch(cmd: Command, manifest: &mut PathBuf) -> Result<Outcome> {
    let threads = thread_budget();
    match cmd {
        Command::Ingest {
            records_dir,
            lead,
            beat_len,
            annotator,
            out,
            common,
        } => {
            *manifest = manifest_for_file(&out);
            let mut cfg = config_or_default(common.config.as_deref())?;
            cfg.data.records_dir = Some(records_dir);
            cfg.data.beats_csv = None;
            cfg.data.lead = lead.unwrap_or(cfg.data.lead);
            cfg.data.beat_len = beat_len.unwrap_or(cfg.data.beat_len);
            cfg.data.annotator = annotator.unwrap_or(cfg.data.annotator);
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.check_paths()?;
            let (_, produced) = stages::ingest(&cfg.data, stage_seed(cfg.seed, "ingest"), &out)?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Augment {
            input,
            tau,
            balance_ratio,
            epochs,
            out,
            common,
        } => {
            *manifest = manifest_for_file(&out);
            let mut cfg = config_or_default(common.config.as_deref())?;
            cfg.gan.tau = tau.unwrap_or(cfg.gan.tau);
            cfg.gan.balance_ratio = balance_ratio.unwrap_or(cfg.gan.balance_ratio);
            cfg.gan.epochs = epochs.unwrap_or(cfg.gan.epochs);
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let ds = read_beats_file(&input)?;
            cfg.data.beat_len = ds.beat_len;
            let gan = cfg.gan_config()?;
            let (_, _, produced) = stages::augment(&ds, &gan, stage_seed(cfg.seed, "augment"), threads, &out)?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Train {
            arch,
            config,
            data,
            out,
            seed,
        } => {
            *manifest = out.join(RUN_MANIFEST);
            let archs = parse_arch(&arch)?;
            let mut cfg = load_config(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let ds = read_beats_file(&data)?;
            if ds.beat_len != cfg.data.beat_len {
                return Err(Error::Config(format!(
                    "beats have length {}, configuration says {}",
                    ds.beat_len, cfg.data.beat_len
                )));
            }
            let (_, produced) = stages::train_archs(&ds, &cfg, &archs, stage_seed(cfg.seed, "train"), threads, &out)?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Evaluate {
            checkpoint: ckpt,
            test,
            history,
            out,
            common,
        } => {
            *manifest = out.join(RUN_MANIFEST);
            let mut cfg = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let model = checkpoint::load(&ckpt)?;
            let ds = read_beats_file(&test)?;
            let history = history.map(|h| TrainingHistory::read_csv_file(&h)).transpose()?;
            let label = model.descriptor.architecture.as_str();
            let produced = stages::evaluate_model(
                &model,
                &ds,
                history.as_ref(),
                &cfg.evaluate,
                stage_seed(cfg.seed, "evaluate"),
                threads,
                &out,
                label,
            )?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Ensemble {
            manifest: models,
            strategy,
            test,
            out,
            common,
        } => {
            *manifest = out.join(RUN_MANIFEST);
            let mut cfg = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let strategy: Strategy = match strategy {
                Some(s) => s.parse()?,
                None => cfg.ensemble.strategy,
            };
            cfg.ensemble.strategy = strategy;
            let m = EnsembleManifest::read(&models)?;
            let ds = read_beats_file(&test)?;
            let (_, produced) = stages::ensemble(
                &m,
                &base_dir(&models),
                strategy,
                &ds,
                &cfg.evaluate,
                stage_seed(cfg.seed, "ensemble"),
                threads,
                &out,
            )?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Gradcam {
            checkpoint: ckpt,
            test,
            samples,
            target,
            out,
        } => {
            *manifest = out.join(RUN_MANIFEST);
            let model = checkpoint::load(&ckpt)?;
            let ds = read_beats_file(&test)?;
            let produced = stages::gradcam(&model, &ds, samples, target, &out)?;
            Ok(Outcome {
                config_hash: None,
                seed: None,
                manifest: manifest.clone(),
                produced,
            })
        }
        Command::Reproduce {
            all,
            arch,
            config,
            records_dir,
            out,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = records_dir {
                cfg.data.records_dir = Some(dir);
                cfg.data.beats_csv = None;
            }
            cfg.out = out.unwrap_or(cfg.out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            *manifest = cfg.out.join(RUN_MANIFEST);
            let archs = match (all, arch.is_empty()) {
                (true, _) => Architecture::ALL.to_vec(),
                (false, false) => parse_arch(&arch.join(","))?,
                (false, true) => return Err(Error::Usage("reproduce needs --all or --arch".into())),
            };
            cfg.check_paths()?;
            let produced = reproduce(&cfg, &archs, threads)?;
            Ok(Outcome {
                config_hash: Some(cfg.hash()?),
                seed: Some(cfg.seed),
                manifest: manifest.clone(),
                produced,
            })
        }
    }
}

/// Runs every stage under `<out>/<stage>/`.
pub fn reproduce(cfg: &PipelineConfig, archs: &[Architecture], threads: usize) -> Result<Vec<PathBuf>> {
    let root = &cfg.out;
    let mut produced = Vec::new();
    let (ds, files) = stages::ingest(&cfg.data, stage_seed(cfg.seed, "ingest"), &root.join("ingest").join("beats.csv"))?;
    produced.extend(files);
    let aug_path = root.join("augment").join("beats_aug.csv");
    let ds = if cfg.gan.enabled {
        let (balanced, _, files) = stages::augment(&ds, &cfg.gan_config()?, stage_seed(cfg.seed, "augment"), threads, &aug_path)?;
        produced.extend(files);
        balanced
    } else {
        produced.extend(stages::passthrough(&ds, &aug_path)?);
        ds
    };
    let train_dir = root.join("train");
    let (trained, files) = stages::train_archs(&ds, cfg, archs, stage_seed(cfg.seed, "train"), threads, &train_dir)?;
    produced.extend(files);
    let eval_seed = stage_seed(cfg.seed, "evaluate");
    for t in &trained {
        produced.extend(stages::evaluate_model(
            &t.model,
            &ds,
            Some(&t.history),
            &cfg.evaluate,
            eval_seed,
            threads,
            &root.join("evaluate").join(t.architecture.as_str()),
            t.architecture.as_str(),
        )?);
    }
    if trained.len() >= cfg.ensemble.strategy.required_members() {
        let m = EnsembleManifest::read(&train_dir.join(stages::MODELS_MANIFEST))?;
        let (_, files) = stages::ensemble(
            &m,
            &train_dir,
            cfg.ensemble.strategy,
            &ds,
            &cfg.evaluate,
            stage_seed(cfg.seed, "ensemble"),
            threads,
            &root.join("ensemble"),
        )?;
        produced.extend(files);
    } else {
        log::warn!(
            "skipping the {} ensemble: {} trained model(s)",
            cfg.ensemble.strategy,
            trained.len()
        );
    }
    Ok(produced)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let command = cli.command.name().to_string();
    let started = now_ms();
    let mut manifest_path = PathBuf::new();
    let result = dispatch(cli.command, &mut manifest_path);
    let (status, code, outcome) = match result {
        Ok(o) => ("ok".to_string(), EXIT_OK, Some(o)),
        Err(e) => {
            error!("{command}: {e}");
            eprintln!("error: {e}");
            (format!("error: {e}"), exit_code(&e), None)
        }
    };
    let write_to = outcome.as_ref().map_or(manifest_path.clone(), |o| o.manifest.clone());
    if write_to.as_os_str().is_empty() {
        return code;
    }
    let manifest = RunManifest {
        command,
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config_hash: outcome.as_ref().and_then(|o| o.config_hash.clone()),
        seed: outcome.as_ref().and_then(|o| o.seed),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        status,
        produced: outcome.map(|o| o.produced).unwrap_or_default(),
    };
    // A failed run may not have created its output directory.
    if let Some(parent) = write_to.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() && code != EXIT_OK {
            return code;
        }
    }
    match manifest.write_atomic(&write_to) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == EXIT_OK {
                exit_code(&e)
            } else {
                code
            }
        }
    }
}
