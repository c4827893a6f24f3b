//! Retrieval quality measurement: per-query average precision, mAP, and
//! cumulative match characteristic curves under the usual re-id protocol
//! (junk removal, same-camera filtering, optional rank truncation).

use crate::error::{Error, Result};
use crate::featstore::GalleryManifest;
use crate::retrieval::{rank, DistanceMatrix};

/// Evaluation protocol knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    /// drop gallery items that share both identity and camera with the query
    pub cross_camera_filter: bool,
    /// identity labels treated as junk and removed from the gallery
    pub junk_ids: Vec<i64>,
    /// cap the ranked list per query before average precision (mAP@T)
    pub truncate_at: Option<usize>,
    /// count queries with no reachable match as AP 0 instead of excluding
    /// them from the denominators
    pub score_unmatched_as_zero: bool,
    /// length of the CMC curve
    pub max_rank: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            cross_camera_filter: true,
            junk_ids: Vec::new(),
            truncate_at: None,
            score_unmatched_as_zero: false,
            max_rank: 50,
        }
    }
}

/// Aggregated retrieval quality plus the per-query breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    /// cmc[k] = fraction of evaluated queries with a hit in the top k+1
    pub cmc: Vec<f64>,
    /// None marks a query excluded for having no reachable match
    pub per_query_ap: Vec<Option<f64>>,
    pub evaluated_queries: usize,
}

/// Average precision of one ranked list.
///
/// `ranked` holds gallery indices in retrieval order; `relevance` is indexed
/// by gallery index. The denominator is `min(total relevant, list length)`,
/// which makes truncated lists score as mAP@T. Returns 0 when nothing
/// relevant is reachable.
pub fn average_precision(ranked: &[usize], relevance: &[bool]) -> f64 {
    let total_relevant = relevance.iter().filter(|&&r| r).count();
    let denom = total_relevant.min(ranked.len());
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in ranked.iter().enumerate() {
        if relevance[g] {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Score a distance matrix against query and gallery metadata.
///
/// Per query, junk identities and (optionally) same-identity same-camera
/// gallery items are removed, the remaining list is ranked, and AP plus the
/// first-hit rank feed mAP and CMC. Queries with no reachable match are
/// excluded from both denominators unless `score_unmatched_as_zero` is set.
/// All queries unmatched is an error.
pub fn evaluate(
    dist: &DistanceMatrix,
    queries: &GalleryManifest,
    gallery: &GalleryManifest,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    if queries.len() != dist.queries() {
        return Err(Error::ShapeMismatch {
            context: "evaluate queries",
            expected: (dist.queries(), 1),
            found: (queries.len(), 1),
        });
    }
    if gallery.len() != dist.gallery() {
        return Err(Error::ShapeMismatch {
            context: "evaluate gallery",
            expected: (dist.gallery(), 1),
            found: (gallery.len(), 1),
        });
    }
    if protocol.max_rank == 0 {
        return Err(Error::InvalidParam {
            name: "max_rank",
            msg: "must be >= 1".into(),
        });
    }
    if let Some(0) = protocol.truncate_at {
        return Err(Error::InvalidParam {
            name: "truncate_at",
            msg: "must be >= 1 when set".into(),
        });
    }

    let order = rank(dist);
    let ranks = protocol.max_rank.min(dist.gallery());
    let mut cmc_hits = vec![0usize; ranks];
    let mut per_query_ap: Vec<Option<f64>> = Vec::with_capacity(dist.queries());
    let mut evaluated = 0usize;
    let mut map_sum = 0.0;

    for qi in 0..dist.queries() {
        let qe = queries.entry(qi);
        let mut relevance = vec![false; dist.gallery()];
        let mut filtered: Vec<usize> = Vec::with_capacity(dist.gallery());
        let mut reachable = 0usize;
        for &gi in &order[qi] {
            let ge = gallery.entry(gi);
            if protocol.junk_ids.contains(&ge.identity) {
                continue;
            }
            if protocol.cross_camera_filter
                && ge.identity == qe.identity
                && ge.camera == qe.camera
            {
                continue;
            }
            if ge.identity == qe.identity {
                relevance[gi] = true;
                reachable += 1;
            }
            filtered.push(gi);
        }

        if reachable == 0 {
            if protocol.score_unmatched_as_zero {
                per_query_ap.push(Some(0.0));
                evaluated += 1; // contributes zero AP and no CMC hit
            } else {
                per_query_ap.push(None);
            }
            continue;
        }
        evaluated += 1;

        let scored: &[usize] = match protocol.truncate_at {
            Some(t) => &filtered[..t.min(filtered.len())],
            None => &filtered,
        };
        let ap = average_precision(scored, &relevance);
        map_sum += ap;
        per_query_ap.push(Some(ap));

        if let Some(first) = filtered.iter().position(|&gi| relevance[gi]) {
            if first < ranks {
                for slot in &mut cmc_hits[first..] {
                    *slot += 1;
                }
            }
        }
    }

    if evaluated == 0 {
        return Err(Error::NoEvaluableQueries);
    }
    let denom = evaluated as f64;
    Ok(EvalReport {
        map: map_sum / denom,
        cmc: cmc_hits.iter().map(|&h| h as f64 / denom).collect(),
        per_query_ap,
        evaluated_queries: evaluated,
    })
}

/// Stable text summary: mAP, selected CMC ranks, and the evaluated count.
pub fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("evaluated={}\n", report.evaluated_queries));
    out.push_str(&format!("map={:.6}\n", report.map));
    for k in [1usize, 5, 10, 20, 50] {
        if k <= report.cmc.len() {
            out.push_str(&format!("cmc_{}={:.6}\n", k, report.cmc[k - 1]));
        }
    }
    out
}

/// Per-query AP table, one `query_index,ap` line per query; excluded
/// queries print `excluded`.
pub fn per_query_csv(report: &EvalReport) -> String {
    let mut out = String::from("query_index,ap\n");
    for (i, ap) in report.per_query_ap.iter().enumerate() {
        match ap {
            Some(v) => out.push_str(&format!("{i},{v:.6}\n")),
            None => out.push_str(&format!("{i},excluded\n")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featstore::ManifestEntry;

    fn entry(id: &str, identity: i64, camera: i64) -> ManifestEntry {
        ManifestEntry {
            item_id: id.to_string(),
            identity,
            camera,
            tracklet: -1,
            frame: -1,
        }
    }

    fn manifest(specs: &[(i64, i64)]) -> GalleryManifest {
        GalleryManifest::new(
            specs
                .iter()
                .enumerate()
                .map(|(i, &(identity, camera))| entry(&format!("m{i}"), identity, camera))
                .collect(),
        )
        .unwrap()
    }

    fn dm(q: usize, g: usize, data: &[f64]) -> DistanceMatrix {
        DistanceMatrix::new(q, g, data.to_vec()).unwrap()
    }

    #[test]
    fn ap_hand_values() {
        // relevant at positions 1 and 3: (1/1 + 2/3) / 2
        let ap = average_precision(&[0, 1, 2], &[true, false, true]);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        // single relevant item ranked last of four
        let ap2 = average_precision(&[1, 2, 3, 0], &[true, false, false, false]);
        assert!((ap2 - 0.25).abs() < 1e-12);
        // perfect ranking
        let ap3 = average_precision(&[0, 1, 2], &[true, true, false]);
        assert!((ap3 - 1.0).abs() < 1e-12);
        // nothing relevant
        assert_eq!(average_precision(&[0, 1], &[false, false]), 0.0);
    }

    #[test]
    fn ap_truncation_uses_capped_denominator() {
        // three relevant overall, list capped to two, both hits
        let ap = average_precision(&[0, 1], &[true, true, true, false]);
        assert!((ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_basic_map_and_cmc() {
        // one query, identity 1; gallery: match at rank 2, another at rank 3
        let queries = manifest(&[(1, 0)]);
        let gallery = manifest(&[(2, 1), (1, 1), (1, 2)]);
        let d = dm(1, 3, &[0.1, 0.2, 0.3]);
        let protocol = EvalProtocol {
            cross_camera_filter: false,
            ..Default::default()
        };
        let r = evaluate(&d, &queries, &gallery, &protocol).unwrap();
        // AP = (1/2 + 2/3) / 2
        assert!((r.map - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.cmc[0], 0.0);
        assert_eq!(r.cmc[1], 1.0);
        assert_eq!(r.cmc[2], 1.0);
        assert_eq!(r.evaluated_queries, 1);
    }

    #[test]
    fn cross_camera_filter_drops_same_camera_matches() {
        let queries = manifest(&[(1, 0)]);
        // nearest gallery item matches but shares the camera
        let gallery = manifest(&[(1, 0), (1, 1), (2, 1)]);
        let d = dm(1, 3, &[0.1, 0.5, 0.3]);
        let filtered = evaluate(&d, &queries, &gallery, &EvalProtocol::default()).unwrap();
        // with item 0 removed the list is [2, 1]: AP = 1/2, first hit rank 2
        assert!((filtered.map - 0.5).abs() < 1e-12);
        assert_eq!(filtered.cmc[0], 0.0);
        assert_eq!(filtered.cmc[1], 1.0);

        let keep = EvalProtocol {
            cross_camera_filter: false,
            ..Default::default()
        };
        let unfiltered = evaluate(&d, &queries, &gallery, &keep).unwrap();
        assert!(unfiltered.map > filtered.map);
    }

    #[test]
    fn junk_identities_are_removed() {
        let queries = manifest(&[(1, 0)]);
        let gallery = manifest(&[(-1, 1), (1, 1)]);
        let d = dm(1, 2, &[0.1, 0.2]);
        let protocol = EvalProtocol {
            junk_ids: vec![-1],
            ..Default::default()
        };
        let r = evaluate(&d, &queries, &gallery, &protocol).unwrap();
        assert!((r.map - 1.0).abs() < 1e-12);
        assert_eq!(r.cmc[0], 1.0);
    }

    #[test]
    fn unmatched_queries_are_excluded_or_scored_zero() {
        let queries = manifest(&[(1, 0), (9, 0)]);
        let gallery = manifest(&[(1, 1), (2, 1)]);
        let d = dm(2, 2, &[0.1, 0.2, 0.1, 0.2]);
        let r = evaluate(&d, &queries, &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(r.evaluated_queries, 1);
        assert_eq!(r.per_query_ap, vec![Some(1.0), None]);
        assert!((r.map - 1.0).abs() < 1e-12);

        let zero = EvalProtocol {
            score_unmatched_as_zero: true,
            ..Default::default()
        };
        let rz = evaluate(&d, &queries, &gallery, &zero).unwrap();
        assert_eq!(rz.evaluated_queries, 2);
        assert!((rz.map - 0.5).abs() < 1e-12);
        assert!((rz.cmc[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_unmatched_is_an_error() {
        let queries = manifest(&[(7, 0)]);
        let gallery = manifest(&[(1, 1), (2, 1)]);
        let d = dm(1, 2, &[0.1, 0.2]);
        assert!(matches!(
            evaluate(&d, &queries, &gallery, &EvalProtocol::default()),
            Err(Error::NoEvaluableQueries)
        ));
    }

    #[test]
    fn truncation_caps_the_scored_list() {
        let queries = manifest(&[(1, 0)]);
        // matches at ranks 1 and 4; truncating at 2 hides the second
        let gallery = manifest(&[(1, 1), (2, 1), (3, 1), (1, 1)]);
        let d = dm(1, 4, &[0.1, 0.2, 0.3, 0.4]);
        let full = evaluate(&d, &queries, &gallery, &EvalProtocol::default()).unwrap();
        assert!((full.map - (1.0 + 0.5) / 2.0).abs() < 1e-12);
        let capped = EvalProtocol {
            truncate_at: Some(2),
            ..Default::default()
        };
        let r = evaluate(&d, &queries, &gallery, &capped).unwrap();
        // denominator min(2 relevant, 2) = 2, one hit at rank 1
        assert!((r.map - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_text_is_stable() {
        let queries = manifest(&[(1, 0)]);
        let gallery = manifest(&[(1, 1), (2, 1)]);
        let d = dm(1, 2, &[0.1, 0.2]);
        let r = evaluate(&d, &queries, &gallery, &EvalProtocol::default()).unwrap();
        let text = report_text(&r);
        assert!(text.contains("evaluated=1\n"));
        assert!(text.contains("map=1.000000\n"));
        assert!(text.contains("cmc_1=1.000000\n"));
        assert_eq!(text, report_text(&r));
        let csv = per_query_csv(&r);
        assert_eq!(csv, "query_index,ap\n0,1.000000\n");
    }

    #[test]
    fn cmc_is_monotone() {
        let queries = manifest(&[(1, 0), (2, 0)]);
        let gallery = manifest(&[(1, 1), (2, 1), (3, 1), (1, 1)]);
        let d = dm(2, 4, &[0.5, 0.1, 0.2, 0.9, 0.4, 0.3, 0.2, 0.1]);
        let r = evaluate(&d, &queries, &gallery, &EvalProtocol::default()).unwrap();
        for w in r.cmc.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert_eq!(r.cmc.len(), 4);
    }
}
