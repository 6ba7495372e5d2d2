//! Craft one impersonation attack end to end, with and without feature
//! augmentation, and instrument what the augmentation does: per-iteration
//! loss of the injected ("hard") model versus the plain model, gradient
//! bank size, and a CSV dump of the final feature-map perturbation.

use bpfa::attacks::{
    normalized_sq_distance, run_attack_instrumented, AttackConfig, AttackContext, AttackMode,
    DEFAULT_ETA,
};
use bpfa::nn::{build, dump_feature_perturbation, ArchId};
use bpfa::rng::substream;
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};
use bpfa::trainer::{train, TrainConfig};

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let ds = generate(&DatasetParams::desk_default(seed))?;
    let (net, _) = train(&ds, &TrainConfig::desk_default(ArchId::C, seed))?;
    let pair = sample_pairs(&ds, 10, Polarity::Negative, seed)?[0].clone();
    let (x_src, x_target) = ds.pair_images(&pair);

    let baseline = AttackConfig::fim("fim", AttackMode::Impersonation, seed);
    let augmented = {
        let mut a = baseline.clone().with_bpfa(DEFAULT_ETA);
        a.name = "fim+bpfa".into();
        a
    };

    std::fs::create_dir_all("target/reports")?;
    println!("pair: attacker identity {} -> target identity {}", pair.attacker_id, pair.target_id);
    println!("\n  t   injected loss   plain loss   (augmented attack)");
    let outcome_aug = run_attack_instrumented(&net, &ds, &pair, &augmented, true)?;
    for row in outcome_aug.trajectory.iter().step_by(10) {
        println!(
            "{:>3}   {:>13.4}   {:>10.4}",
            row.t,
            row.loss,
            row.plain_loss.unwrap()
        );
    }
    let mut w = csv::Writer::from_path("target/reports/single_attack_trajectory.csv")?;
    w.write_record(["t", "loss", "bank_bytes"])?;
    for row in &outcome_aug.trajectory {
        w.write_record([row.t.to_string(), format!("{}", row.loss), row.bank_bytes.to_string()])?;
    }
    w.flush()?;

    let outcome_base = run_attack_instrumented(&net, &ds, &pair, &baseline, false)?;
    let target_emb = net.forward_plain(x_target)?;
    for (name, outcome) in [("fim", &outcome_base), ("fim+bpfa", &outcome_aug)] {
        let d = normalized_sq_distance(&net.forward_plain(&outcome.x_adv)?, &target_emb)?;
        let linf = outcome
            .x_adv
            .data()
            .iter()
            .zip(x_src.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!(
            "{name:>9}: final distance to target {d:.4}, L-inf perturbation {linf:.1} (budget {})",
            baseline.epsilon
        );
    }

    // Re-run the augmented attack step by step to reach its final bank and
    // dump the signed feature perturbation at the first hooked layer.
    let ctx = AttackContext::new(&net, &augmented, x_src, Some(x_target))?;
    let mut rng = substream(augmented.seed, "attack", 0);
    let mut state = ctx.initial_state();
    for _ in 0..augmented.n_max {
        state = ctx.step(&state, &mut rng, false)?.0;
    }
    let hook = ctx.hooks().indices()[0];
    let dump = "target/reports/single_attack_feature_perturbation.csv";
    dump_feature_perturbation(&state.bank, hook, augmented.eta, dump)?;
    let fresh = build(ArchId::C, ds.image_shape(), 16, seed)?;
    println!(
        "\nbank: {} bytes across {} hooked layers ({:.2}% of the {}-byte weights)",
        state.bank.byte_len(),
        ctx.hooks().len(),
        100.0 * state.bank.byte_len() as f64 / fresh.weight_bytes() as f64,
        fresh.weight_bytes()
    );
    println!("feature perturbation at layer {hook} written to {dump}");
    Ok(())
}
