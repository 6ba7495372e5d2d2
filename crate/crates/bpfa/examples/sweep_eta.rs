//! Sweep the feature step size for one surrogate across negative
//! (loss-decreasing injection), zero (baseline), and positive
//! (loss-increasing injection) values, and report where the mean
//! black-box ASR peaks. The expected shape is a rise-then-fall curve
//! with its maximum at a moderate positive step.

use bpfa::attacks::{AttackConfig, AttackMode};
use bpfa::harness::{
    calibrate_zoo, save_sweep_csv, sweep_eta, train_plain_zoo, ExperimentPlan,
};
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let surrogate = "A";
    let etas = [-0.4, -0.25, -0.15, -0.05, 0.0, 0.05, 0.1, 0.15, 0.25, 0.4, 0.6, 0.8];

    let ds = generate(&DatasetParams::desk_default(seed))?;
    let zoo = train_plain_zoo(&ds, seed)?;
    let thresholds = calibrate_zoo(&zoo, &ds, 0.001)?;
    let pairs = sample_pairs(&ds, 200, Polarity::Negative, seed)?;

    let plan = ExperimentPlan {
        dataset: &ds,
        surrogates: &zoo,
        victims: &zoo,
        pairs: &pairs,
        attacks: &[],
        thresholds: &thresholds,
        seed,
    };
    // Keeping one attack name across the grid keeps per-pair seeds fixed,
    // so the eta = 0 point coincides with the plain baseline exactly.
    let base = AttackConfig::fim("fim", AttackMode::Impersonation, 0).with_bpfa(0.0);
    let points = sweep_eta(&plan, surrogate, &base, &etas)?;

    println!("surrogate {surrogate}, mean black-box impersonation ASR by feature step:");
    for p in &points {
        println!("  eta {:+.2}: {:.4}", p.x, p.mean_blackbox_asr);
    }
    let best = points
        .iter()
        .max_by(|a, b| a.mean_blackbox_asr.partial_cmp(&b.mean_blackbox_asr).unwrap())
        .unwrap();
    println!("peak at eta {:+.2} ({:.4})", best.x, best.mean_blackbox_asr);

    std::fs::create_dir_all("target/reports")?;
    let out = "target/reports/sweep_eta.csv";
    save_sweep_csv(&points, "eta", out)?;
    println!("curve written to {out}");
    Ok(())
}
