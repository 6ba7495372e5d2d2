//! Thin command-line front end over the library: dataset generation, zoo
//! training, threshold calibration, single attacks, the transfer matrix,
//! ablation sweeps, and report format conversion.
//!
//! Every experiment subcommand accepts `--config <file.toml>`; values
//! present in the config file override the corresponding flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use bpfa::attacks::{
    run_attack_instrumented, AttackConfig, AttackMode, HookSpec, DEFAULT_DODGING_ETA, DEFAULT_ETA,
    DEFAULT_TRANSFER_MOMENTUM,
};
use bpfa::harness::{
    calibrate_zoo, emit_report_files, report_from_csv, run_transfer_matrix, save_sweep_csv,
    sweep_eta, sweep_iterations, train_plain_zoo, train_robust_zoo, write_report, ExperimentPlan,
    ReportFormat, Zoo,
};
use bpfa::nn::{load_model, save_model, ArchId};
use bpfa::synth::{
    generate, load_dataset, sample_pairs, save_dataset, DatasetParams, FacePair, IdentityDataset,
    Polarity,
};
use bpfa::trainer::{
    adversarial_train, calibrate_threshold, save_threshold, save_train_log, train, TrainConfig,
};
use bpfa::{Error, Result};

#[derive(Parser)]
#[command(
    name = "bpfa",
    about = "Feature-augmentation adversarial attacks on toy face-embedding networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the deterministic synthetic-identity dataset.
    GenData(GenDataCmd),
    /// Train one embedding model (optionally with adversarial training).
    Train(TrainCmd),
    /// Calibrate a FAR-based decision threshold for one model.
    Calibrate(CalibrateCmd),
    /// Run a single attack on one face pair and dump its trajectory.
    Attack(AttackCmd),
    /// Run the full surrogate x victim transfer matrix.
    Matrix(MatrixCmd),
    /// Sweep the feature step size for one surrogate (negative = APFA).
    SweepEta(SweepEtaCmd),
    /// Sweep the iteration budget for one surrogate.
    SweepIters(SweepItersCmd),
    /// Convert a stored report between csv, json, and markdown.
    Report(ReportCmd),
}

#[derive(Args)]
struct GenDataCmd {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output path for the dataset container (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCmd {
    /// Dataset container path; generated from --seed when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Architecture: A, B, C, or D.
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Mix adversarially crafted dodging examples into every batch.
    #[arg(long)]
    robust: bool,
    /// Output path for the trained model (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV path for the per-epoch training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateCmd {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// FAR target (0.001 for impersonation, 0.01 for dodging).
    #[arg(long, default_value_t = 0.001)]
    far: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output path for the threshold record (JSON).
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by the experiment subcommands. Every field is optional so
/// a TOML config file with the same keys can override any of them.
#[derive(Args, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct RunFlags {
    /// Master seed for dataset, training, pair sampling, and crafting.
    #[arg(long)]
    seed: Option<u64>,
    /// Load this dataset container instead of generating one from the seed.
    #[arg(long)]
    #[serde(default)]
    data: Option<PathBuf>,
    /// impersonation | dodging
    #[arg(long)]
    mode: Option<String>,
    /// Number of face pairs to attack.
    #[arg(long)]
    pairs: Option<usize>,
    /// FAR target for victim thresholds (default 0.001 impersonation, 0.01 dodging).
    #[arg(long)]
    far: Option<f64>,
    /// Evaluate on the adversarially trained twin zoo instead of the plain zoo
    /// (default on for dodging, off for impersonation).
    #[arg(long)]
    robust_victims: Option<bool>,
    /// L-inf budget in pixel units.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Input step size in pixel units.
    #[arg(long)]
    beta: Option<f64>,
    /// Iteration budget.
    #[arg(long)]
    n_max: Option<usize>,
    /// Feature step size for the augmented attack.
    #[arg(long)]
    eta: Option<f64>,
    /// Hooked layer kinds, e.g. "batchnorm" or "conv2d+batchnorm"
    /// (defaults: conv2d+batchnorm for impersonation, batchnorm for dodging).
    #[arg(long)]
    hooks: Option<String>,
    /// Momentum decay for the baseline (enables momentum accumulation).
    #[arg(long)]
    mi: Option<f64>,
    /// Input-diversity transform probability for the baseline.
    #[arg(long)]
    di: Option<f64>,
    /// Conv feature-dropout rate for the baseline.
    #[arg(long)]
    dfanet: Option<f64>,
}

impl RunFlags {
    /// Overlay `over` on `self`: any value present in `over` wins.
    fn overridden_by(mut self, over: RunFlags) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(seed, data, mode, pairs, far, robust_victims, epsilon, beta, n_max, eta, hooks, mi, di, dfanet);
        self
    }

    fn load_config(self, config: Option<&Path>) -> Result<Self> {
        match config {
            None => Ok(self),
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let over: RunFlags = toml::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config {path:?}: {e}")))?;
                Ok(self.overridden_by(over))
            }
        }
    }
}

#[derive(Args)]
struct MatrixCmd {
    #[command(flatten)]
    flags: RunFlags,
    /// TOML config file; its values override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the csv/json/markdown report files.
    #[arg(long, default_value = "target/reports")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepEtaCmd {
    #[command(flatten)]
    flags: RunFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Surrogate model name (A-D, or Ar-Dr with --robust-victims surrogates).
    #[arg(long, default_value = "A")]
    surrogate: String,
    /// Comma-separated feature-step grid; negative values are APFA.
    #[arg(
        long,
        default_value = "-0.4,-0.25,-0.15,-0.05,0,0.05,0.1,0.15,0.25,0.4,0.6,0.8",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    etas: Vec<f64>,
    /// Output CSV path for the curve.
    #[arg(long, default_value = "target/reports/sweep_eta.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepItersCmd {
    #[command(flatten)]
    flags: RunFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "A")]
    surrogate: String,
    /// Comma-separated iteration grid; 0 evaluates the clean images.
    #[arg(long, default_value = "0,5,10,25,50,100", value_delimiter = ',')]
    iters: Vec<usize>,
    #[arg(long, default_value = "target/reports/sweep_iters.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct AttackCmd {
    #[command(flatten)]
    flags: RunFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained surrogate model path; trained in memory from --arch when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Architecture to train when --model is omitted.
    #[arg(long, default_value = "A")]
    arch: String,
    /// Pair index in the sampled pair list of the plan seed.
    #[arg(long, default_value_t = 0)]
    pair_index: usize,
    /// Output path for the adversarial image (dataset container format).
    #[arg(long)]
    out_image: Option<PathBuf>,
    /// Output CSV path for the (t, loss, bank_bytes) trajectory.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    /// Stored report CSV (as produced by `matrix`).
    #[arg(long)]
    input: PathBuf,
    /// csv | json | markdown
    #[arg(long)]
    format: String,
    /// Output path; markdown goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<ArchId> {
    ArchId::ALL
        .into_iter()
        .find(|a| a.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {s:?}; expected A-D")))
}

fn parse_mode(s: &str) -> Result<AttackMode> {
    match s {
        "impersonation" => Ok(AttackMode::Impersonation),
        "dodging" => Ok(AttackMode::Dodging),
        other => Err(Error::InvalidArgument(format!(
            "unknown mode {other:?}; expected impersonation or dodging"
        ))),
    }
}

/// Everything a resolved experiment needs, built once from the flags.
struct World {
    dataset: IdentityDataset,
    surrogates: Zoo,
    victims: Zoo,
    thresholds: BTreeMap<String, bpfa::trainer::Threshold>,
    pairs: Vec<FacePair>,
    baseline: AttackConfig,
    augmented: AttackConfig,
    seed: u64,
}

fn build_world(flags: &RunFlags) -> Result<World> {
    let seed = flags.seed.unwrap_or(7);
    let mode = parse_mode(flags.mode.as_deref().unwrap_or("impersonation"))?;
    let robust_victims = flags
        .robust_victims
        .unwrap_or(mode == AttackMode::Dodging);
    let far = flags.far.unwrap_or(match mode {
        AttackMode::Impersonation => 0.001,
        AttackMode::Dodging => 0.01,
    });
    let pairs_n = flags.pairs.unwrap_or(200);

    let dataset = match &flags.data {
        Some(path) => load_dataset(path)?,
        None => generate(&DatasetParams::desk_default(seed))?,
    };
    let surrogates = train_plain_zoo(&dataset, seed)?;
    let victims = if robust_victims {
        train_robust_zoo(&dataset, seed)?
    } else {
        Zoo {
            models: surrogates
                .models
                .iter()
                .map(|(n, m)| (n.clone(), m.clone()))
                .collect(),
        }
    };
    let thresholds = calibrate_zoo(&victims, &dataset, far)?;
    let polarity = match mode {
        AttackMode::Impersonation => Polarity::Negative,
        AttackMode::Dodging => Polarity::Positive,
    };
    let pairs = sample_pairs(&dataset, pairs_n, polarity, seed)?;

    let mut baseline = AttackConfig::fim("base", mode, 0);
    if let Some(e) = flags.epsilon {
        baseline.epsilon = e;
    }
    if let Some(b) = flags.beta {
        baseline.beta = b;
    }
    if let Some(n) = flags.n_max {
        baseline.n_max = n;
    }
    match flags.mi {
        Some(mu) => baseline = baseline.with_momentum(mu),
        // The desk-scale dodging baseline is the light-momentum combination.
        None if mode == AttackMode::Dodging => {
            baseline = baseline.with_momentum(DEFAULT_TRANSFER_MOMENTUM)
        }
        None => {}
    }
    if let Some(p) = flags.di {
        baseline = baseline.with_di(p);
    }
    if let Some(r) = flags.dfanet {
        baseline = baseline.with_dropout(r);
    }
    let eta = flags.eta.unwrap_or(match mode {
        AttackMode::Impersonation => DEFAULT_ETA,
        AttackMode::Dodging => DEFAULT_DODGING_ETA,
    });
    let mut augmented = baseline.clone().with_bpfa(eta);
    if let Some(kinds) = &flags.hooks {
        augmented.hooks = HookSpec::Kind(kinds.clone());
    }
    augmented.name = "base+bpfa".into();
    Ok(World {
        dataset,
        surrogates,
        victims,
        thresholds,
        pairs,
        baseline,
        augmented,
        seed,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(c) => {
            let ds = generate(&DatasetParams::desk_default(c.seed))?;
            save_dataset(&ds, &c.out)?;
            println!(
                "wrote {} identities x {} images ({:?}) to {}",
                ds.num_identities(),
                ds.images_per_identity(),
                ds.image_shape(),
                c.out.display()
            );
        }
        Cmd::Train(c) => {
            let ds = match &c.data {
                Some(p) => load_dataset(p)?,
                None => generate(&DatasetParams::desk_default(c.seed))?,
            };
            let arch = parse_arch(&c.arch)?;
            let (net, log) = if c.robust {
                adversarial_train(&ds, &TrainConfig::adversarial_default(arch, c.seed))?
            } else {
                train(&ds, &TrainConfig::desk_default(arch, c.seed))?
            };
            save_model(&net, &c.out)?;
            if let Some(log_path) = &c.log {
                save_train_log(&log, log_path)?;
            }
            let last = log.last().expect("nonempty training log");
            println!(
                "trained {} (seed {}): final loss {:.4}, train accuracy {:.3} -> {}",
                arch.name(),
                c.seed,
                last.loss,
                last.accuracy,
                c.out.display()
            );
        }
        Cmd::Calibrate(c) => {
            let ds = match &c.data {
                Some(p) => load_dataset(p)?,
                None => generate(&DatasetParams::desk_default(c.seed))?,
            };
            let net = load_model(&c.model)?;
            let t = calibrate_threshold(&net, &ds, c.far)?;
            save_threshold(&t, &c.out)?;
            println!(
                "threshold {:.6} achieves FAR {:.4} (target {}) over all {} negative pairs -> {}",
                t.value,
                t.measured_far,
                t.far_target,
                t.n_pairs,
                c.out.display()
            );
        }
        Cmd::Attack(c) => {
            let flags = c.flags.load_config(c.config.as_deref())?;
            let seed = flags.seed.unwrap_or(7);
            let mode = parse_mode(flags.mode.as_deref().unwrap_or("impersonation"))?;
            let ds = match &flags.data {
                Some(p) => load_dataset(p)?,
                None => generate(&DatasetParams::desk_default(seed))?,
            };
            let net = match &c.model {
                Some(p) => load_model(p)?,
                None => {
                    let arch = parse_arch(&c.arch)?;
                    train(&ds, &TrainConfig::desk_default(arch, seed))?.0
                }
            };
            let polarity = match mode {
                AttackMode::Impersonation => Polarity::Negative,
                AttackMode::Dodging => Polarity::Positive,
            };
            let pairs = sample_pairs(&ds, flags.pairs.unwrap_or(200), polarity, seed)?;
            let pair = pairs.get(c.pair_index).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "pair index {} out of range (sampled {})",
                    c.pair_index,
                    pairs.len()
                ))
            })?;
            let mut cfg = AttackConfig::fim("attack", mode, seed);
            if let Some(e) = flags.epsilon {
                cfg.epsilon = e;
            }
            if let Some(b) = flags.beta {
                cfg.beta = b;
            }
            if let Some(n) = flags.n_max {
                cfg.n_max = n;
            }
            if let Some(mu) = flags.mi {
                cfg = cfg.with_momentum(mu);
            }
            if let Some(p) = flags.di {
                cfg = cfg.with_di(p);
            }
            if let Some(r) = flags.dfanet {
                cfg = cfg.with_dropout(r);
            }
            if let Some(eta) = flags.eta {
                cfg = cfg.with_bpfa(eta);
            }
            if let Some(kinds) = &flags.hooks {
                cfg.hooks = HookSpec::Kind(kinds.clone());
            }
            let outcome = run_attack_instrumented(&net, &ds, pair, &cfg, false)?;
            let first = outcome.trajectory.first().expect("n_max >= 1");
            let last = outcome.trajectory.last().expect("n_max >= 1");
            println!(
                "attack on pair {} ({:?}): loss {:.4} -> {:.4} over {} iterations, bank {} bytes",
                c.pair_index,
                mode.name(),
                first.loss,
                last.loss,
                outcome.trajectory.len(),
                last.bank_bytes
            );
            if let Some(path) = &c.trajectory {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["t", "loss", "bank_bytes"])?;
                for row in &outcome.trajectory {
                    w.write_record([
                        row.t.to_string(),
                        format!("{}", row.loss),
                        row.bank_bytes.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            if let Some(path) = &c.out_image {
                std::fs::write(path, serde_json::to_string(&outcome.x_adv)?)?;
            }
        }
        Cmd::Matrix(c) => {
            let flags = c.flags.load_config(c.config.as_deref())?;
            let w = build_world(&flags)?;
            let plan = ExperimentPlan {
                dataset: &w.dataset,
                surrogates: &w.surrogates,
                victims: &w.victims,
                pairs: &w.pairs,
                attacks: &[w.baseline.clone(), w.augmented.clone()],
                thresholds: &w.thresholds,
                seed: w.seed,
            };
            let report = run_transfer_matrix(&plan)?;
            print!("{}", bpfa::harness::report_to_markdown(&report));
            emit_report_files(&report, &c.out_dir, "matrix")?;
            println!("report files written under {}", c.out_dir.display());
        }
        Cmd::SweepEta(c) => {
            let flags = c.flags.load_config(c.config.as_deref())?;
            let w = build_world(&flags)?;
            let plan = ExperimentPlan {
                dataset: &w.dataset,
                surrogates: &w.surrogates,
                victims: &w.victims,
                pairs: &w.pairs,
                attacks: &[],
                thresholds: &w.thresholds,
                seed: w.seed,
            };
            let mut base = w.augmented.clone();
            base.name = w.baseline.name.clone();
            let points = sweep_eta(&plan, &c.surrogate, &base, &c.etas)?;
            for p in &points {
                println!("eta {:+.3}: mean black-box ASR {:.4}", p.x, p.mean_blackbox_asr);
            }
            if let Some(dir) = c.out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            save_sweep_csv(&points, "eta", &c.out)?;
            println!("curve written to {}", c.out.display());
        }
        Cmd::SweepIters(c) => {
            let flags = c.flags.load_config(c.config.as_deref())?;
            let w = build_world(&flags)?;
            let plan = ExperimentPlan {
                dataset: &w.dataset,
                surrogates: &w.surrogates,
                victims: &w.victims,
                pairs: &w.pairs,
                attacks: &[],
                thresholds: &w.thresholds,
                seed: w.seed,
            };
            for (label, cfg) in [("base", &w.baseline), ("base+bpfa", &w.augmented)] {
                let points = sweep_iterations(&plan, &c.surrogate, cfg, &c.iters)?;
                for p in &points {
                    println!(
                        "{label:>10} n {:>4}: mean black-box ASR {:.4}",
                        p.x, p.mean_blackbox_asr
                    );
                }
                let path = c.out.with_file_name(format!(
                    "{}_{}.csv",
                    c.out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep_iters"),
                    label.replace('+', "_")
                ));
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                save_sweep_csv(&points, "n", &path)?;
                println!("curve written to {}", path.display());
            }
        }
        Cmd::Report(c) => {
            let report = report_from_csv(&c.input)?;
            let format: ReportFormat = c.format.parse()?;
            match &c.out {
                Some(path) => {
                    write_report(&report, format, path)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", bpfa::harness::report_to_markdown(&report)),
            }
        }
    }
    Ok(())
}

/// Short machine-readable class for the process exit message.
fn error_class(e: &Error) -> &'static str {
    match e {
        Error::ShapeMismatch { .. } => "shape-mismatch",
        Error::NonFinite(_) => "non-finite",
        Error::ZeroNorm => "zero-norm",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::ModelFormat(_) => "model-format",
        Error::DatasetFormat(_) => "dataset-format",
        Error::TrainingDiverged(_) => "training-diverged",
        Error::AccuracyFloor(_) => "accuracy-floor",
        Error::Calibration(_) => "calibration",
        Error::MissingHook(_) => "missing-hook",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", error_class(&e));
            ExitCode::FAILURE
        }
    }
}
