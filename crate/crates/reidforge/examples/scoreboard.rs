//! Score a tiny labeled retrieval run: mean average precision, the CMC
//! curve, and the cross-camera filter that drops same-camera matches.

use reidforge::evalkit::{evaluate, per_query_csv, report_text, EvalProtocol};
use reidforge::featstore::{GalleryManifest, ManifestEntry};
use reidforge::retrieval::DistanceMatrix;

fn manifest(rows: &[(&str, i64, i64)]) -> GalleryManifest {
    GalleryManifest::new(
        rows.iter()
            .map(|&(item_id, identity, camera)| ManifestEntry {
                item_id: item_id.into(),
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
    let queries = manifest(&[("q0", 1, 0), ("q1", 2, 0), ("q2", 3, 0)]);
    let gallery = manifest(&[
        ("g0", 1, 1), // true match for q0
        ("g1", 1, 0), // same identity but same camera as q0: filtered out
        ("g2", 2, 1), // true match for q1
        ("g3", 2, 1), // second true match for q1
        ("g4", 9, 1), // distractor
        ("g5", 3, 1), // true match for q2, buried at rank 3
    ]);

    // rows are query-to-gallery distances; smaller is better
    #[rustfmt::skip]
    let dist = DistanceMatrix::new(3, 6, vec![
        0.5, 0.1, 0.9, 0.8, 0.3, 0.7, // q0: same-camera copy first, distractor beats the real match
        0.9, 0.8, 0.3, 0.6, 0.4, 0.7, // q1: matches at ranks 1 and 3
        0.9, 0.8, 0.6, 0.5, 0.3, 0.4, // q2: distractors at ranks 1 and 2
    ])
    .unwrap();

    let protocol = EvalProtocol {
        max_rank: 5,
        ..EvalProtocol::default()
    };
    let report = evaluate(&dist, &queries, &gallery, &protocol).unwrap();
    println!("{}", report_text(&report));
    print!("{}", per_query_csv(&report));

    // without the camera filter q0's same-camera twin counts as a hit
    let lax = EvalProtocol {
        cross_camera_filter: false,
        max_rank: 5,
        ..EvalProtocol::default()
    };
    let lax_report = evaluate(&dist, &queries, &gallery, &lax).unwrap();
    println!("\nmAP with cross-camera filter = {:.4}, without = {:.4}", report.map, lax_report.map);
}
