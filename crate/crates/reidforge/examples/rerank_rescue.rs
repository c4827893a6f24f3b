//! A hand-built retrieval case where plain nearest-neighbor ranking puts a
//! distractor first and k-reciprocal re-ranking restores the true matches.
//!
//! The query belongs to cluster A but sits displaced toward cluster B. A
//! single B "satellite" lies even closer to the query than A does. Raw
//! distance ranks the satellite first; neighborhood consensus does not,
//! because the satellite's reciprocal neighbors are all in B while the
//! query's are in A.

use reidforge::evalkit::{evaluate, EvalProtocol};
use reidforge::featstore::{FeatureMatrix, GalleryManifest, ManifestEntry};
use reidforge::retrieval::{k_reciprocal_rerank, pairwise_distance, rank, Metric, RerankParams};

fn cluster(center: (f64, f64), radius: f64, count: usize) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let angle = i as f64 * std::f64::consts::TAU / count as f64;
            (center.0 + radius * angle.cos(), center.1 + radius * angle.sin())
        })
        .collect()
}

fn matrix(points: &[(f64, f64)]) -> FeatureMatrix {
    FeatureMatrix::new(points.len(), 2, points.iter().flat_map(|&(x, y)| [x, y]).collect()).unwrap()
}

fn manifest(ids: &[i64], camera: i64) -> GalleryManifest {
    GalleryManifest::new(
        ids.iter()
            .enumerate()
            .map(|(i, &identity)| ManifestEntry {
                item_id: format!("item_{i}"),
                identity,
                camera,
                tracklet: -1,
                frame: -1,
            })
            .collect(),
    )
    .unwrap()
}

fn main() {
    let mut gallery_pts = cluster((0.0, 0.0), 0.15, 5); // identity 1, the true matches
    gallery_pts.extend(cluster((1.8, 0.0), 0.15, 5)); // identity 2, a far cluster
    gallery_pts.push((1.05, 0.0)); // identity 2 satellite drifting toward the query
    let gallery_ids: Vec<i64> = [vec![1; 5], vec![2; 5], vec![2]].concat();

    let query_pts = [(0.65, 0.0)]; // identity 1, pushed toward cluster B
    let gallery = matrix(&gallery_pts);
    let query = matrix(&query_pts);

    let qg = pairwise_distance(&query, &gallery, Metric::Euclidean).unwrap();
    let qq = pairwise_distance(&query, &query, Metric::Euclidean).unwrap();
    let gg = pairwise_distance(&gallery, &gallery, Metric::Euclidean).unwrap();

    let show = |name: &str, dist: &reidforge::retrieval::DistanceMatrix| {
        let order = rank(dist);
        let labels: Vec<String> = order[0]
            .iter()
            .take(5)
            .map(|&g| format!("id{} ({:.3})", gallery_ids[g], dist.at(0, g)))
            .collect();
        println!("{name}: {}", labels.join("  "));
    };

    show("plain   ", &qg);

    let params = RerankParams {
        k1: 6,
        k2: 1, // skip local query expansion: the lone query would borrow the satellite's neighborhood
        lambda: 0.3,
    };
    let reranked = k_reciprocal_rerank(&qg, &qq, &gg, &params).unwrap();
    show("reranked", &reranked);

    let qm = manifest(&[1], 0);
    let gm = manifest(&gallery_ids, 1);
    let protocol = EvalProtocol::default();
    let before = evaluate(&qg, &qm, &gm, &protocol).unwrap();
    let after = evaluate(&reranked, &qm, &gm, &protocol).unwrap();
    println!("\nmAP {:.4} -> {:.4}, rank-1 {:.0}% -> {:.0}%", before.map, after.map, 100.0 * before.cmc[0], 100.0 * after.cmc[0]);
}
