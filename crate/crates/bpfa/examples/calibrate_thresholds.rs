//! Calibrate FAR-based decision thresholds for every zoo model at both
//! operating points (FAR 0.001 for impersonation, FAR 0.01 for dodging)
//! and verify each achieved FAR by an independent brute-force recount
//! over the full negative-pair pool (every cross-identity image pair).

use bpfa::attacks::normalized_sq_distance;
use bpfa::harness::train_plain_zoo;
use bpfa::synth::{generate, DatasetParams};
use bpfa::trainer::calibrate_threshold;

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let ds = generate(&DatasetParams::desk_default(seed))?;
    let zoo = train_plain_zoo(&ds, seed)?;
    let k = ds.num_identities();
    let m = ds.images_per_identity();
    println!(
        "negative pool: {k} identities x {m} images -> {} cross-identity pairs",
        k * (k - 1) / 2 * m * m
    );

    for far_target in [0.001, 0.01] {
        println!("FAR target {far_target}:");
        for (name, net) in &zoo.models {
            let t = calibrate_threshold(net, &ds, far_target)?;

            // Independent recount: re-embed every image and enumerate the
            // same pool by brute force.
            let mut embeddings = Vec::with_capacity(k);
            for id in 0..k {
                let mut per = Vec::with_capacity(m);
                for s in 0..m {
                    per.push(net.forward_plain(ds.image(id, s))?);
                }
                embeddings.push(per);
            }
            let (mut accepts, mut total) = (0usize, 0usize);
            for a in 0..k {
                for b in (a + 1)..k {
                    for i in 0..m {
                        for j in 0..m {
                            let d =
                                normalized_sq_distance(&embeddings[a][i], &embeddings[b][j])?;
                            total += 1;
                            if d < t.value {
                                accepts += 1;
                            }
                        }
                    }
                }
            }
            let recount = accepts as f64 / total as f64;
            assert_eq!(total, t.n_pairs);
            assert_eq!(recount, t.measured_far);
            println!(
                "  model {name}: threshold {:.6}, reported FAR {:.4}, recounted FAR {recount:.4}, |target err| {:.5}",
                t.value,
                t.measured_far,
                (recount - far_target).abs()
            );
        }
    }
    println!("all recounts match the reported FARs exactly");
    Ok(())
}
