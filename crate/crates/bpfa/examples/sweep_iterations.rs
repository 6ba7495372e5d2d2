//! Sweep the iteration budget for one surrogate, comparing the baseline
//! and its feature-augmented variant on the same pairs and seeds. At
//! n = 0 the "attack" is the clean image, so the ASR collapses to the
//! victim's false accept rate; both curves then rise with the budget and
//! the augmented curve should finish on top.

use bpfa::attacks::{AttackConfig, AttackMode, DEFAULT_ETA};
use bpfa::harness::{
    calibrate_zoo, save_sweep_csv, sweep_iterations, train_plain_zoo, ExperimentPlan,
};
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let surrogate = "A";
    let grid = [0usize, 5, 10, 25, 50, 100];

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

    let base = AttackConfig::fim("fim", AttackMode::Impersonation, 0);
    let mut aug = base.clone().with_bpfa(DEFAULT_ETA);
    aug.name = "fim+bpfa".into();

    std::fs::create_dir_all("target/reports")?;
    println!("surrogate {surrogate}, mean black-box impersonation ASR by iteration budget:");
    for cfg in [&base, &aug] {
        let points = sweep_iterations(&plan, surrogate, cfg, &grid)?;
        print!("  {:>9}:", cfg.name);
        for p in &points {
            print!("  n={:>3} {:.3}", p.x, p.mean_blackbox_asr);
        }
        println!();
        let out = format!("target/reports/sweep_iters_{}.csv", cfg.name.replace('+', "_"));
        save_sweep_csv(&points, "n", &out)?;
        println!("  curve written to {out}");
    }
    Ok(())
}
