//! Generate the deterministic synthetic-identity dataset and print its
//! separability statistics: mean pixel distance between same-identity and
//! different-identity image pairs, which is what makes the verification
//! task non-trivial but learnable at desk scale.

use bpfa::rng::substream;
use bpfa::synth::{generate, save_dataset, DatasetParams};

fn main() -> bpfa::Result<()> {
    let seed = 7u64;
    let ds = generate(&DatasetParams::desk_default(seed))?;
    println!(
        "dataset: {} identities x {} images, shape {:?}",
        ds.num_identities(),
        ds.images_per_identity(),
        ds.image_shape()
    );

    let mut rng = substream(seed, "stats", 0);
    let (same, diff) = ds.pixel_distance_stats(&mut rng, 2000);
    println!("mean pixel L2 distance, same identity:      {same:8.2}");
    println!("mean pixel L2 distance, different identity: {diff:8.2}");

    let out = "target/reports/dataset.json";
    std::fs::create_dir_all("target/reports")?;
    save_dataset(&ds, out)?;
    println!("dataset container written to {out}");

    // Re-generating with the same parameters is bit-identical.
    let again = generate(&DatasetParams::desk_default(seed))?;
    let identical = (0..ds.num_identities()).all(|id| {
        (0..ds.images_per_identity()).all(|s| ds.image(id, s).data() == again.image(id, s).data())
    });
    println!("regeneration bit-identical: {identical}");
    Ok(())
}
