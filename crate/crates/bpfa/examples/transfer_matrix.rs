//! Full black-box impersonation transfer experiment: train the
//! four-architecture zoo, calibrate FAR 0.001 thresholds, craft every
//! baseline attack with and without feature augmentation on every
//! surrogate, and print the surrogate x victim matrix. White-box cells
//! are starred; bold marks cells the augmentation improves.
//!
//! Environment overrides for quick runs:
//!   PAIRS (default 200), N_MAX (default 100), ETA (default 0.15),
//!   OUT_DIR (default target/reports)

use std::path::PathBuf;

use bpfa::attacks::{AttackConfig, AttackMode, DEFAULT_ETA};
use bpfa::harness::{
    calibrate_zoo, emit_report_files, report_to_markdown, run_transfer_matrix, train_plain_zoo,
    ExperimentPlan,
};
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let pairs_n = env_usize("PAIRS", 200);
    let n_max = env_usize("N_MAX", 100);
    let eta = env_f64("ETA", DEFAULT_ETA);
    let out_dir = PathBuf::from(std::env::var("OUT_DIR").unwrap_or_else(|_| "target/reports".into()));

    let ds = generate(&DatasetParams::desk_default(seed))?;
    let zoo = train_plain_zoo(&ds, seed)?;
    let thresholds = calibrate_zoo(&zoo, &ds, 0.001)?;
    for (name, t) in &thresholds {
        println!("model {name}: threshold {:.4} (FAR {:.4})", t.value, t.measured_far);
    }

    let pairs = sample_pairs(&ds, pairs_n, Polarity::Negative, seed)?;
    let mode = AttackMode::Impersonation;
    let mut attacks = Vec::new();
    for (name, base) in [
        ("fim", AttackConfig::fim("fim", mode, 0)),
        ("mi", AttackConfig::fim("mi", mode, 0).with_momentum(1.0)),
        ("di", AttackConfig::fim("di", mode, 0).with_di(0.7)),
        ("dfanet", AttackConfig::fim("dfanet", mode, 0).with_dropout(0.1)),
    ] {
        let mut base = base;
        base.n_max = n_max;
        let mut aug = base.clone().with_bpfa(eta);
        aug.name = format!("{name}+bpfa");
        attacks.push(base);
        attacks.push(aug);
    }

    let plan = ExperimentPlan {
        dataset: &ds,
        surrogates: &zoo,
        victims: &zoo,
        pairs: &pairs,
        attacks: &attacks,
        thresholds: &thresholds,
        seed,
    };
    let report = run_transfer_matrix(&plan)?;
    print!("{}", report_to_markdown(&report));
    emit_report_files(&report, &out_dir, "transfer_matrix")?;
    println!("report files written under {}", out_dir.display());
    Ok(())
}
