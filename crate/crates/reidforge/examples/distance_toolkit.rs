//! The distance post-processing toolkit: subtract auxiliary similarity
//! cues from the visual distance, smooth tracklet members toward their
//! window mean, and average several distance matrices into an ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reidforge::featstore::{FeatureMatrix, GalleryManifest, ManifestEntry};
use reidforge::retrieval::{
    ensemble_distances, fuse_distances, pairwise_distance, rank, tracklet_rerank,
    DistanceMatrix, EnsembleNorm, Metric,
};

fn main() {
    // ── fusion: visual distance minus weighted auxiliary similarities ──
    let visual = DistanceMatrix::new(1, 3, vec![0.50, 0.52, 0.90]).unwrap();
    // auxiliary scores are distances too, but enter with a minus sign, so a
    // LARGE value (very dissimilar orientation/camera) lowers the fused
    // distance: matching across viewpoints is rewarded
    let orientation = DistanceMatrix::new(1, 3, vec![0.1, 0.9, 0.2]).unwrap();
    let camera = DistanceMatrix::new(1, 3, vec![0.2, 0.8, 0.3]).unwrap();
    let fused = fuse_distances(&visual, &orientation, &camera, 0.1, 0.1).unwrap();
    println!("visual {:?}", visual.row(0));
    println!("fused  {:?}  (gallery 1 overtakes gallery 0)", fused.row(0).iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("order before {:?}, after {:?}", rank(&visual)[0], rank(&fused)[0]);

    // ── tracklet smoothing: frames of one track share a window mean ──
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = [1.0, -2.0, 0.5];
    let noisy: Vec<f64> = (0..5)
        .flat_map(|_| truth.map(|v| v + rng.random_range(-0.4..0.4)))
        .collect();
    let features = FeatureMatrix::new(5, 3, noisy).unwrap();
    let manifest = GalleryManifest::new(
        (0..5)
            .map(|i| ManifestEntry {
                item_id: format!("f{i}"),
                identity: 1,
                camera: 0,
                tracklet: 0,
                frame: i as i64,
            })
            .collect(),
    )
    .unwrap();
    let smoothed = tracklet_rerank(&features, &manifest, 3).unwrap();
    let spread = |m: &FeatureMatrix| {
        (0..m.rows())
            .map(|r| {
                m.row(r)
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max)
    };
    println!("\ntracklet of 5 frames, window 3: worst frame error {:.3} -> {:.3}", spread(&features), spread(&smoothed));

    // ── ensembling: average the rankings of two feature variants ──
    let points = FeatureMatrix::new(4, 2, vec![2.0, 2.2, 0.5, 0.2, 0.3, 0.6, -0.5, 0.4]).unwrap();
    let queries = FeatureMatrix::new(1, 2, vec![0.4, 0.4]).unwrap();
    let euclid = pairwise_distance(&queries, &points, Metric::Euclidean).unwrap();
    let cosine = pairwise_distance(&queries, &points, Metric::Cosine).unwrap();
    let combined = ensemble_distances(&[euclid.clone(), cosine.clone()], EnsembleNorm::MinMax).unwrap();
    println!("\neuclidean order {:?}, cosine order {:?}, ensemble order {:?}", rank(&euclid)[0], rank(&cosine)[0], rank(&combined)[0]);
}
