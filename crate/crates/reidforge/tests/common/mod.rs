//! Reference implementations the integration tests compare against.
//!
//! Both are deliberately naive transliterations of the published procedures —
//! plain sets and O(n^3) loops, no index tricks shared with the library code.

use std::collections::BTreeSet;

/// All-pairs matrix over queries-then-gallery, as plain nested vecs.
fn pooled(
    qg: &[Vec<f64>],
    qq: &[Vec<f64>],
    gg: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let q = qg.len();
    let g = if q > 0 { qg[0].len() } else { 0 };
    let n = q + g;
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..q {
        for j in 0..q {
            d[i][j] = qq[i][j];
        }
        for j in 0..g {
            d[i][q + j] = qg[i][j];
            d[q + j][i] = qg[i][j];
        }
    }
    for i in 0..g {
        for j in 0..g {
            d[q + i][q + j] = gg[i][j];
        }
    }
    d
}

/// Indices of the `k` nearest points to `p` (self included — d(p,p) = 0),
/// ties broken toward the lower index.
fn nearest(d: &[Vec<f64>], p: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[p][a].partial_cmp(&d[p][b]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mutual k-nearest set: j such that each of p, j lies among the other's
/// k+1 nearest (the +1 absorbs the self entry).
fn mutual(d: &[Vec<f64>], p: usize, k: usize) -> BTreeSet<usize> {
    nearest(d, p, k + 1)
        .into_iter()
        .filter(|&j| nearest(d, j, k + 1).contains(&p))
        .collect()
}

/// Direct-from-definition k-reciprocal re-ranking.
///
/// Reciprocal sets are expanded by the half-size reciprocal sets of their
/// members whenever two thirds of the candidate set already overlaps, soft
/// weights are exp(-d) normalized per row, each weight row is averaged over
/// its k2 nearest rows, and the Jaccard distance 1 - sum(min)/sum(max)
/// between query and gallery rows is blended with the original distance.
pub fn rerank_reference(
    qg: &[Vec<f64>],
    qq: &[Vec<f64>],
    gg: &[Vec<f64>],
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Vec<Vec<f64>> {
    let d = pooled(qg, qq, gg);
    let n = d.len();
    let q = qg.len();
    let g = n - q;
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;

    let base: Vec<BTreeSet<usize>> = (0..n).map(|p| mutual(&d, p, k1)).collect();
    let small: Vec<BTreeSet<usize>> = (0..n).map(|p| mutual(&d, p, half)).collect();

    let mut v = vec![vec![0.0; n]; n];
    for p in 0..n {
        let mut star = base[p].clone();
        for &cand in &base[p] {
            let overlap = small[cand].intersection(&base[p]).count();
            if 3 * overlap >= 2 * small[cand].len() {
                star.extend(small[cand].iter().copied());
            }
        }
        let total: f64 = star.iter().map(|&j| (-d[p][j]).exp()).sum();
        for &j in &star {
            v[p][j] = (-d[p][j]).exp() / total;
        }
    }

    // local expansion: average each row with its k2 nearest rows
    let mut ve = vec![vec![0.0; n]; n];
    for p in 0..n {
        let nbrs = nearest(&d, p, k2);
        for j in 0..n {
            ve[p][j] = nbrs.iter().map(|&r| v[r][j]).sum::<f64>() / nbrs.len() as f64;
        }
    }

    let mut out = vec![vec![0.0; g]; q];
    for i in 0..q {
        for j in 0..g {
            let mut min_sum = 0.0;
            let mut max_sum = 0.0;
            for c in 0..n {
                min_sum += ve[i][c].min(ve[q + j][c]);
                max_sum += ve[i][c].max(ve[q + j][c]);
            }
            let jaccard = 1.0 - min_sum / max_sum;
            out[i][j] = lambda * qg[i][j] + (1.0 - lambda) * jaccard;
        }
    }
    out
}

/// Naive retrieval scoring: per query, drop same-identity same-camera
/// gallery items when `filter` is set, sort the rest by (distance, index),
/// and accumulate standard average precision plus the first-hit rank.
/// Queries without a reachable match are skipped. Returns
/// `(map, cmc over gallery-length ranks, evaluated count)`.
pub fn eval_reference(
    dist: &[Vec<f64>],
    queries: &[(i64, i64)],
    gallery: &[(i64, i64)],
    filter: bool,
) -> (f64, Vec<f64>, usize) {
    let g_len = gallery.len();
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    let mut first_hits: Vec<usize> = Vec::new();

    for (qi, &(q_id, q_cam)) in queries.iter().enumerate() {
        let mut kept: Vec<usize> = (0..g_len)
            .filter(|&j| !(filter && gallery[j].0 == q_id && gallery[j].1 == q_cam))
            .collect();
        kept.sort_by(|&a, &b| {
            dist[qi][a]
                .partial_cmp(&dist[qi][b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let relevant: Vec<bool> = kept.iter().map(|&j| gallery[j].0 == q_id).collect();
        let total: usize = relevant.iter().filter(|&&r| r).count();
        if total == 0 {
            continue;
        }
        evaluated += 1;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (pos, &rel) in relevant.iter().enumerate() {
            if rel {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        ap_sum += ap / total as f64;
        first_hits.push(relevant.iter().position(|&r| r).unwrap());
    }

    let mut cmc = vec![0.0; g_len];
    for k in 0..g_len {
        let within = first_hits.iter().filter(|&&f| f <= k).count();
        cmc[k] = within as f64 / evaluated as f64;
    }
    (ap_sum / evaluated as f64, cmc, evaluated)
}
