//! Impersonation transfer from plain-trained surrogates to the
//! adversarially trained twin zoo. Adversarial training blunts transfer
//! overall, so this run answers a narrower question: does feature
//! augmentation still help (or at least never hurt) when the victims are
//! hardened?

use bpfa::attacks::{AttackConfig, AttackMode, DEFAULT_ETA};
use bpfa::harness::{
    calibrate_zoo, emit_report_files, report_to_markdown, run_transfer_matrix, train_plain_zoo,
    train_robust_zoo, ExperimentPlan,
};
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let ds = generate(&DatasetParams::desk_default(seed))?;
    let surrogates = train_plain_zoo(&ds, seed)?;
    let victims = train_robust_zoo(&ds, seed)?;
    let thresholds = calibrate_zoo(&victims, &ds, 0.001)?;
    let pairs = sample_pairs(&ds, 200, Polarity::Negative, seed)?;

    let base = AttackConfig::fim("fim", AttackMode::Impersonation, 0);
    let mut aug = base.clone().with_bpfa(DEFAULT_ETA);
    aug.name = "fim+bpfa".into();

    let plan = ExperimentPlan {
        dataset: &ds,
        surrogates: &surrogates,
        victims: &victims,
        pairs: &pairs,
        attacks: &[base, aug],
        thresholds: &thresholds,
        seed,
    };
    let report = run_transfer_matrix(&plan)?;
    print!("{}", report_to_markdown(&report));

    let mut gains = Vec::new();
    for row in report.rows.iter().filter(|r| r.attack == "fim+bpfa") {
        let b = report
            .rows
            .iter()
            .find(|q| q.attack == "fim" && q.surrogate == row.surrogate && q.victim == row.victim)
            .expect("paired baseline row");
        gains.push(row.asr - b.asr);
    }
    println!(
        "mean impersonation ASR gain on robust victims: {:+.2} points over {} cells (worst {:+.1})",
        gains.iter().sum::<f64>() / gains.len() as f64 * 100.0,
        gains.len(),
        gains.iter().cloned().fold(f64::INFINITY, f64::min) * 100.0
    );
    emit_report_files(&report, "target/reports".as_ref(), "robust_transfer")?;
    println!("report files written under target/reports");
    Ok(())
}
