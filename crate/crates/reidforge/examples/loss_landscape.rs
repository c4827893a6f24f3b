//! Evaluate the three training losses on the same toy batch and show how
//! each one moves as the clusters tighten.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reidforge::featstore::{l2_normalize_rows, FeatureMatrix};
use reidforge::losses::{id_loss, supcon_loss, triplet_loss};

/// Two identities, four samples each, clusters centered at +/- `sep` on the
/// first axis with unit blobs around them.
fn toy_batch(rng: &mut ChaCha8Rng, sep: f64) -> (FeatureMatrix, Vec<i64>) {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for id in 0..2i64 {
        let center = if id == 0 { -sep } else { sep };
        for _ in 0..4 {
            data.push(center + rng.random_range(-0.5..0.5));
            data.push(rng.random_range(-0.5..0.5));
            data.push(rng.random_range(-0.5..0.5));
            labels.push(id);
        }
    }
    (FeatureMatrix::new(8, 3, data).unwrap(), labels)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("separation    id-cross-entropy    supcon      triplet");
    for sep in [0.2, 0.5, 1.0, 2.0, 4.0] {
        let (batch, labels) = toy_batch(&mut rng, sep);

        // crude logits: project onto the separation axis for class 1 and its
        // negation for class 0, so wider separation means sharper logits
        let logits = FeatureMatrix::new(
            8,
            2,
            (0..8).flat_map(|i| [-batch.at(i, 0), batch.at(i, 0)]).collect(),
        )
        .unwrap();
        let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let ce = id_loss(&logits, &classes, 0.1).unwrap();

        let unit = l2_normalize_rows(&batch).unwrap();
        let sc = supcon_loss(&unit, &labels, 0.1).unwrap();
        let tr = triplet_loss(&batch, &labels, 0.3).unwrap();

        println!(
            "   {sep:4.1}          {:8.4}        {:8.4}    {:8.4}",
            ce.value, sc.value, tr.value
        );
    }

    // every loss ships an exact gradient of matching shape
    let (batch, labels) = toy_batch(&mut rng, 0.3);
    let out = triplet_loss(&batch, &labels, 0.3).unwrap();
    println!(
        "\ntriplet gradient shape {}x{}, largest entry {:+.4}",
        out.grad.rows(),
        out.grad.dim(),
        out.grad.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
}
