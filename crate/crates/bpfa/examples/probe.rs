//! Scratch: white-box dodging diagnostics for plain vs robust twins.

use bpfa::attacks::{normalized_sq_distance, run_attack, AttackConfig, AttackMode};
use bpfa::harness::{train_plain_zoo, train_robust_zoo};
use bpfa::synth::{generate, sample_pairs, DatasetParams, Polarity};
use bpfa::trainer::calibrate_threshold;

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let ds = generate(&DatasetParams::desk_default(seed))?;
    let plain = train_plain_zoo(&ds, seed)?;
    let robust = match std::env::var("ADV") {
        Ok(spec) => {
            let mut parts = spec.split(',');
            let eps: f64 = parts.next().unwrap().parse().unwrap();
            let steps: usize = parts.next().unwrap().parse().unwrap();
            let models: bpfa::Result<Vec<_>> = bpfa::nn::ArchId::ALL
                .iter()
                .enumerate()
                .map(|(i, arch)| {
                    let mut cfg = bpfa::trainer::TrainConfig::adversarial_default(
                        *arch,
                        seed + i as u64,
                    );
                    cfg.adversarial =
                        Some(bpfa::trainer::AdvTrainParams { epsilon: eps, steps });
                    let (net, _) = bpfa::trainer::adversarial_train(&ds, &cfg)?;
                    Ok((format!("{}r", arch.name()), net))
                })
                .collect();
            bpfa::harness::Zoo { models: models? }
        }
        Err(_) => train_robust_zoo(&ds, seed)?,
    };
    let pairs = sample_pairs(&ds, 50, Polarity::Positive, seed)?;
    let n_max: usize = std::env::var("NMAX").map(|v| v.parse().unwrap()).unwrap_or(5);
    let beta: f64 = std::env::var("BETA").map(|v| v.parse().unwrap()).unwrap_or(2.0);

    for ((pname, pnet), (rname, rnet)) in plain.models.iter().zip(&robust.models) {
        for (name, net) in [(pname, pnet), (rname, rnet)] {
            let t = match std::env::var("THRESH").as_deref() {
                Ok("eer") => {
                    let (_, eer_t) = bpfa::trainer::verification_accuracy(net, &ds, 2, seed)?;
                    eer_t
                }
                _ => calibrate_threshold(net, &ds, 0.01)?.value,
            };
            let mut dists = Vec::new();
            for (i, pair) in pairs.iter().enumerate() {
                let mut cfg = AttackConfig::fim("wb", AttackMode::Dodging, i as u64);
                cfg.n_max = n_max;
                cfg.beta = beta;
                let out = run_attack(net, &ds, pair, &cfg)?;
                let src = ds.image(pair.attacker_id, pair.attacker_img);
                dists.push(normalized_sq_distance(
                    &net.forward_plain(&out.x_adv)?,
                    &net.forward_plain(src)?,
                )?);
            }
            let asr = dists.iter().filter(|&&d| d > t).count() as f64 / dists.len() as f64;
            let mean = dists.iter().sum::<f64>() / dists.len() as f64;
            println!(
                "{name:>2}: threshold {:.4}  mean achieved dist {mean:.4}  asr {asr:.2}",
                t
            );
        }
    }
    Ok(())
}
