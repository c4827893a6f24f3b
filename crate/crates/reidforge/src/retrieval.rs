//! Retrieval post-processing: pairwise distances, neighborhood-consensus
//! re-ranking, auxiliary-distance fusion, tracklet smoothing, ensembling,
//! and ranking.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::featstore::{self, FeatureMatrix, GalleryManifest};

/// Query-by-gallery distance matrix, row-major. Values must be finite;
/// fused matrices may legitimately go negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    queries: usize,
    gallery: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(queries: usize, gallery: usize, data: Vec<f64>) -> Result<Self> {
        if queries == 0 || gallery == 0 {
            return Err(Error::InvalidParam {
                name: "shape",
                msg: format!("need at least 1x1, got {queries}x{gallery}"),
            });
        }
        if data.len() != queries * gallery {
            return Err(Error::InvalidParam {
                name: "data",
                msg: format!("expected {} values, got {}", queries * gallery, data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            queries,
            gallery,
            data,
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn gallery(&self) -> usize {
        self.gallery
    }

    pub fn at(&self, q: usize, g: usize) -> f64 {
        self.data[q * self.gallery + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.gallery..(q + 1) * self.gallery]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Store a distance matrix in the same binary format as features.
pub fn write_distances<W: Write>(dist: &DistanceMatrix, sink: &mut W) -> Result<u64> {
    let m = FeatureMatrix::new(dist.queries, dist.gallery, dist.data.clone())?;
    featstore::write_features(&m, sink)
}

pub fn read_distances<R: Read>(source: &mut R) -> Result<DistanceMatrix> {
    let m = featstore::read_features(source)?;
    DistanceMatrix::new(m.rows(), m.dim(), m.data().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidParam {
                name: "metric",
                msg: format!("unknown metric \"{other}\""),
            }),
        }
    }
}

/// All-pairs distance between the rows of `a` (queries) and `b` (gallery).
///
/// Cosine distance is `1 - cos`, clamped at 0 against rounding, and rejects
/// zero-norm rows.
pub fn pairwise_distance(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    metric: Metric,
) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context: "pairwise dims",
            expected: (a.rows(), a.dim()),
            found: (b.rows(), b.dim()),
        });
    }
    let mut data = Vec::with_capacity(a.rows() * b.rows());
    match metric {
        Metric::Euclidean => {
            for i in 0..a.rows() {
                let ra = a.row(i);
                for j in 0..b.rows() {
                    let d: f64 = ra
                        .iter()
                        .zip(b.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    data.push(d.sqrt());
                }
            }
        }
        Metric::Cosine => {
            let norms = |m: &FeatureMatrix, side: &'static str| -> Result<Vec<f64>> {
                let _ = side;
                (0..m.rows())
                    .map(|r| {
                        let n = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            Err(Error::ZeroNormRow { row: r })
                        } else {
                            Ok(n)
                        }
                    })
                    .collect()
            };
            let na = norms(a, "a")?;
            let nb = norms(b, "b")?;
            for i in 0..a.rows() {
                let ra = a.row(i);
                for j in 0..b.rows() {
                    let dot: f64 = ra.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                    data.push((1.0 - dot / (na[i] * nb[j])).max(0.0));
                }
            }
        }
    }
    DistanceMatrix::new(a.rows(), b.rows(), data)
}

/// Subtract weighted auxiliary distances from the visual distance:
/// `fused = visual - lambda1 * first - lambda2 * second`.
pub fn fuse_distances(
    visual: &DistanceMatrix,
    first: &DistanceMatrix,
    second: &DistanceMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Result<DistanceMatrix> {
    for (name, aux) in [("first", first), ("second", second)] {
        if aux.queries != visual.queries || aux.gallery != visual.gallery {
            let _ = name;
            return Err(Error::ShapeMismatch {
                context: "fuse",
                expected: (visual.queries, visual.gallery),
                found: (aux.queries, aux.gallery),
            });
        }
    }
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !l.is_finite() || l < 0.0 {
            return Err(Error::InvalidParam {
                name: if name == "lambda1" { "lambda1" } else { "lambda2" },
                msg: format!("must be finite and >= 0, got {l}"),
            });
        }
    }
    let data = visual
        .data
        .iter()
        .zip(first.data.iter().zip(&second.data))
        .map(|(v, (o, c))| v - lambda1 * o - lambda2 * c)
        .collect();
    DistanceMatrix::new(visual.queries, visual.gallery, data)
}

/// Neighborhood-consensus re-ranking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    /// reciprocal neighborhood size
    pub k1: usize,
    /// local expansion size
    pub k2: usize,
    /// blend weight on the original distance
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

/// Re-rank with k-reciprocal neighborhood consensus.
///
/// Queries and gallery are pooled into one set of `n = Q + G` points with
/// the given pairwise distances. For each point, its k-reciprocal neighbor
/// set (mutual k-nearest, self included) is expanded with half-size
/// reciprocal sets that overlap it by at least two thirds, weighted with
/// `exp(-d)` and row-normalized, then smoothed by averaging over each
/// point's `k2` nearest rows. The output blends the original query-gallery
/// distance with the Jaccard distance between those weight rows:
/// `lambda * original + (1 - lambda) * jaccard`, so `lambda = 1` returns
/// the input unchanged.
pub fn k_reciprocal_rerank(
    dist_qg: &DistanceMatrix,
    dist_qq: &DistanceMatrix,
    dist_gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<DistanceMatrix> {
    let q = dist_qg.queries;
    let g = dist_qg.gallery;
    if dist_qq.queries != q || dist_qq.gallery != q {
        return Err(Error::ShapeMismatch {
            context: "rerank query-query",
            expected: (q, q),
            found: (dist_qq.queries, dist_qq.gallery),
        });
    }
    if dist_gg.queries != g || dist_gg.gallery != g {
        return Err(Error::ShapeMismatch {
            context: "rerank gallery-gallery",
            expected: (g, g),
            found: (dist_gg.queries, dist_gg.gallery),
        });
    }
    let n = q + g;
    if params.k1 == 0 || params.k1 >= n {
        return Err(Error::InvalidParam {
            name: "k1",
            msg: format!("must lie in [1, {}), got {}", n, params.k1),
        });
    }
    if params.k2 == 0 || params.k2 > params.k1 {
        return Err(Error::InvalidParam {
            name: "k2",
            msg: format!("must lie in [1, k1 = {}], got {}", params.k1, params.k2),
        });
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(Error::InvalidParam {
            name: "lambda",
            msg: format!("must lie in [0, 1], got {}", params.lambda),
        });
    }

    // pooled distance over queries then gallery
    let mut union = vec![0.0; n * n];
    for i in 0..q {
        for j in 0..q {
            union[i * n + j] = dist_qq.at(i, j);
        }
        for j in 0..g {
            union[i * n + (q + j)] = dist_qg.at(i, j);
            union[(q + j) * n + i] = dist_qg.at(i, j);
        }
    }
    for i in 0..g {
        for j in 0..g {
            union[(q + i) * n + (q + j)] = dist_gg.at(i, j);
        }
    }

    // ascending neighbor order per point, ties broken by index, plus the
    // inverse (rank position of each point in each ordering)
    let mut order = vec![0usize; n * n];
    let mut pos = vec![0usize; n * n];
    for p in 0..n {
        let row = &union[p * n..(p + 1) * n];
        let slots = &mut order[p * n..(p + 1) * n];
        for (i, s) in slots.iter_mut().enumerate() {
            *s = i;
        }
        slots.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
        for (r, &j) in slots.iter().enumerate() {
            pos[p * n + j] = r;
        }
    }

    // mutual k-nearest sets; the k+1 nearest include the point itself
    let reciprocal = |p: usize, k: usize| -> Vec<usize> {
        order[p * n..p * n + k + 1]
            .iter()
            .copied()
            .filter(|&j| pos[j * n + p] <= k)
            .collect()
    };
    let half = (params.k1 as f64 / 2.0).round_ties_even() as usize;
    let r_k1: Vec<Vec<usize>> = (0..n).map(|p| reciprocal(p, params.k1)).collect();
    let r_half: Vec<Vec<usize>> = (0..n).map(|p| reciprocal(p, half)).collect();

    // expanded sets -> exp(-d) weights, row-normalized
    let mut weights = vec![0.0; n * n];
    let mut in_base = vec![false; n];
    let mut in_star = vec![false; n];
    for p in 0..n {
        for &j in &r_k1[p] {
            in_base[j] = true;
            in_star[j] = true;
        }
        let mut star = r_k1[p].clone();
        for &cand in &r_k1[p] {
            let rh = &r_half[cand];
            let overlap = rh.iter().filter(|&&x| in_base[x]).count();
            if 3 * overlap >= 2 * rh.len() {
                for &x in rh {
                    if !in_star[x] {
                        in_star[x] = true;
                        star.push(x);
                    }
                }
            }
        }
        let mut total = 0.0;
        for &x in &star {
            let w = (-union[p * n + x]).exp();
            weights[p * n + x] = w;
            total += w;
        }
        for &x in &star {
            weights[p * n + x] /= total;
        }
        for &j in &r_k1[p] {
            in_base[j] = false;
        }
        for &x in &star {
            in_star[x] = false;
        }
    }

    // local expansion: average each point's weight row with its k2 nearest
    let mut expanded = vec![0.0; n * n];
    for p in 0..n {
        for &j in &order[p * n..p * n + params.k2] {
            let src = &weights[j * n..(j + 1) * n];
            let dst = &mut expanded[p * n..(p + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for d in &mut expanded[p * n..(p + 1) * n] {
            *d /= params.k2 as f64;
        }
    }

    // Jaccard distance between query and gallery weight rows
    let mut out = vec![0.0; q * g];
    for i in 0..q {
        let wi = &expanded[i * n..(i + 1) * n];
        for j in 0..g {
            let wj = &expanded[(q + j) * n..(q + j + 1) * n];
            let mut mins = 0.0;
            let mut maxs = 0.0;
            for (a, b) in wi.iter().zip(wj) {
                mins += a.min(*b);
                maxs += a.max(*b);
            }
            let jaccard = 1.0 - mins / maxs;
            out[i * g + j] = params.lambda * dist_qg.at(i, j) + (1.0 - params.lambda) * jaccard;
        }
    }
    DistanceMatrix::new(q, g, out)
}

/// Replace each tracklet member's feature with the mean over a frame-ordered
/// window centered on it.
///
/// Rows whose tracklet is -1 pass through untouched. Within a tracklet the
/// rows are ordered by frame (ties by row index); the window keeps its full
/// `min(window, tracklet_len)` size at the boundaries by shifting inward.
/// When the input rows are normalized, every averaged row is re-normalized;
/// an effective window of one copies rows bit-exactly.
pub fn tracklet_rerank(
    features: &FeatureMatrix,
    manifest: &GalleryManifest,
    window: usize,
) -> Result<FeatureMatrix> {
    if manifest.len() != features.rows() {
        return Err(Error::ShapeMismatch {
            context: "tracklet manifest",
            expected: (features.rows(), 1),
            found: (manifest.len(), 1),
        });
    }
    if window == 0 {
        return Err(Error::InvalidParam {
            name: "window",
            msg: "must be >= 1".into(),
        });
    }
    let dim = features.dim();
    let mut data = features.data().to_vec();

    let mut groups: std::collections::HashMap<i64, Vec<usize>> = std::collections::HashMap::new();
    for (i, e) in manifest.entries().iter().enumerate() {
        if e.tracklet != -1 {
            groups.entry(e.tracklet).or_default().push(i);
        }
    }
    for members in groups.values_mut() {
        members.sort_by_key(|&i| (manifest.entry(i).frame, i));
        let len = members.len();
        let size = window.min(len);
        if size == 1 {
            continue;
        }
        for (p, &row) in members.iter().enumerate() {
            let lo = (p as isize - ((size as isize - 1) / 2)).clamp(0, (len - size) as isize)
                as usize;
            let mut acc = vec![0.0; dim];
            for &src in &members[lo..lo + size] {
                for (a, v) in acc.iter_mut().zip(features.row(src)) {
                    *a += v;
                }
            }
            let inv = 1.0 / size as f64;
            if features.is_normalized() {
                let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt() * inv;
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow { row });
                }
                for (slot, a) in data[row * dim..(row + 1) * dim].iter_mut().zip(&acc) {
                    *slot = a * inv / norm;
                }
            } else {
                for (slot, a) in data[row * dim..(row + 1) * dim].iter_mut().zip(&acc) {
                    *slot = a * inv;
                }
            }
        }
    }
    if features.is_normalized() {
        FeatureMatrix::new_normalized(features.rows(), dim, data)
    } else {
        FeatureMatrix::new(features.rows(), dim, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleNorm {
    /// rescale each member to [0, 1] before averaging; a constant member
    /// collapses to all zeros
    MinMax,
    /// plain elementwise mean
    Raw,
}

impl std::str::FromStr for EnsembleNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(EnsembleNorm::MinMax),
            "raw" => Ok(EnsembleNorm::Raw),
            other => Err(Error::InvalidParam {
                name: "ensemble_norm",
                msg: format!("unknown normalization \"{other}\""),
            }),
        }
    }
}

/// Average several distance matrices of the same shape.
pub fn ensemble_distances(
    members: &[DistanceMatrix],
    norm: EnsembleNorm,
) -> Result<DistanceMatrix> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidParam {
            name: "members",
            msg: "need at least one matrix".into(),
        });
    };
    let (q, g) = (first.queries, first.gallery);
    for m in members {
        if m.queries != q || m.gallery != g {
            return Err(Error::ShapeMismatch {
                context: "ensemble",
                expected: (q, g),
                found: (m.queries, m.gallery),
            });
        }
    }
    let mut acc = vec![0.0; q * g];
    let inv = 1.0 / members.len() as f64;
    for m in members {
        match norm {
            EnsembleNorm::Raw => {
                for (a, v) in acc.iter_mut().zip(&m.data) {
                    *a += v * inv;
                }
            }
            EnsembleNorm::MinMax => {
                let lo = m.data.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = m.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    let scale = 1.0 / (hi - lo);
                    for (a, v) in acc.iter_mut().zip(&m.data) {
                        *a += (v - lo) * scale * inv;
                    }
                }
                // constant member contributes zero everywhere
            }
        }
    }
    DistanceMatrix::new(q, g, acc)
}

/// Gallery orderings, one ascending-distance index list per query.
pub type RankedList = Vec<Vec<usize>>;

/// Sort gallery indices per query by ascending distance, ties broken by
/// lower index.
pub fn rank(dist: &DistanceMatrix) -> RankedList {
    (0..dist.queries)
        .map(|i| {
            let row = dist.row(i);
            let mut idx: Vec<usize> = (0..dist.gallery).collect();
            idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
            idx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featstore::ManifestEntry;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(rows: usize, dim: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, dim, data.to_vec()).unwrap()
    }

    fn dm(q: usize, g: usize, data: &[f64]) -> DistanceMatrix {
        DistanceMatrix::new(q, g, data.to_vec()).unwrap()
    }

    fn random_dm(q: usize, g: usize, rng: &mut ChaCha8Rng) -> DistanceMatrix {
        let data: Vec<f64> = (0..q * g).map(|_| rng.random_range(0.0..4.0)).collect();
        dm(q, g, &data)
    }

    /// symmetric zero-diagonal square matrix, the shape self-distances have
    fn random_self_dm(nn: usize, rng: &mut ChaCha8Rng) -> DistanceMatrix {
        let mut data = vec![0.0; nn * nn];
        for i in 0..nn {
            for j in (i + 1)..nn {
                let d = rng.random_range(0.1..4.0);
                data[i * nn + j] = d;
                data[j * nn + i] = d;
            }
        }
        dm(nn, nn, &data)
    }

    #[test]
    fn euclidean_hand_values() {
        let a = features(1, 2, &[0.0, 0.0]);
        let b = features(2, 2, &[3.0, 4.0, 1.0, 0.0]);
        let d = pairwise_distance(&a, &b, Metric::Euclidean).unwrap();
        assert!((d.at(0, 0) - 5.0).abs() < 1e-12);
        assert!((d.at(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_values_and_clamp() {
        let a = features(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let b = features(2, 2, &[0.0, 3.0, 5.0, 0.0]);
        let d = pairwise_distance(&a, &b, Metric::Cosine).unwrap();
        assert!((d.at(0, 0) - 1.0).abs() < 1e-12); // orthogonal
        assert_eq!(d.at(0, 1), 0.0); // parallel, clamped at exactly 0
        assert!(d.data().iter().all(|&v| v >= 0.0));

        let z = features(1, 2, &[0.0, 0.0]);
        assert!(matches!(
            pairwise_distance(&z, &b, Metric::Cosine),
            Err(Error::ZeroNormRow { row: 0 })
        ));
    }

    #[test]
    fn fuse_subtracts_weighted_auxiliaries() {
        let v = dm(1, 2, &[1.0, 2.0]);
        let o = dm(1, 2, &[0.5, 1.0]);
        let c = dm(1, 2, &[2.0, 0.0]);
        let f = fuse_distances(&v, &o, &c, 0.1, 0.2).unwrap();
        assert!((f.at(0, 0) - (1.0 - 0.05 - 0.4)).abs() < 1e-12);
        assert!((f.at(0, 1) - (2.0 - 0.1)).abs() < 1e-12);

        let bad = dm(2, 2, &[0.0; 4]);
        assert!(fuse_distances(&v, &bad, &c, 0.1, 0.1).is_err());
        assert!(fuse_distances(&v, &o, &c, -0.1, 0.1).is_err());
    }

    #[test]
    fn rank_breaks_ties_by_lower_index() {
        let d = dm(1, 4, &[0.7, 0.3, 0.3, 0.1]);
        let r = rank(&d);
        assert_eq!(r[0], vec![3, 1, 2, 0]);
    }

    #[test]
    fn rerank_lambda_one_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let qg = random_dm(4, 7, &mut rng);
        let qq = random_self_dm(4, &mut rng);
        let gg = random_self_dm(7, &mut rng);
        let p = RerankParams {
            k1: 5,
            k2: 2,
            lambda: 1.0,
        };
        let out = k_reciprocal_rerank(&qg, &qq, &gg, &p).unwrap();
        assert_eq!(out.data(), qg.data());
    }

    #[test]
    fn rerank_is_deterministic_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qg = random_dm(3, 5, &mut rng);
        let qq = random_self_dm(3, &mut rng);
        let gg = random_self_dm(5, &mut rng);
        let p = RerankParams {
            k1: 3,
            k2: 2,
            lambda: 0.3,
        };
        let a = k_reciprocal_rerank(&qg, &qq, &gg, &p).unwrap();
        let b = k_reciprocal_rerank(&qg, &qq, &gg, &p).unwrap();
        assert_eq!(a, b);

        let too_big = RerankParams {
            k1: 8,
            k2: 2,
            lambda: 0.3,
        };
        assert!(k_reciprocal_rerank(&qg, &qq, &gg, &too_big).is_err());
        let wrong_qq = random_self_dm(4, &mut rng);
        assert!(k_reciprocal_rerank(&qg, &wrong_qq, &gg, &p).is_err());
    }

    #[test]
    fn rerank_pulls_consensus_match_forward() {
        // 1-d layout: the query at 0 has a lone distractor at -0.25 and a
        // tight cluster at 0.3 / 0.35 / 0.4; two pads sit far away. the
        // distractor is nearest in raw distance, but the cluster shares the
        // query's reciprocal neighborhood, so consensus demotes the loner.
        let query = features(1, 1, &[0.0]);
        let gallery = features(6, 1, &[-0.25, 0.3, 0.35, 0.4, 10.0, 10.1]);
        let qg = pairwise_distance(&query, &gallery, Metric::Euclidean).unwrap();
        let qq = pairwise_distance(&query, &query, Metric::Euclidean).unwrap();
        let gg = pairwise_distance(&gallery, &gallery, Metric::Euclidean).unwrap();
        let p = RerankParams {
            k1: 3,
            k2: 1,
            lambda: 0.0,
        };
        let out = k_reciprocal_rerank(&qg, &qq, &gg, &p).unwrap();
        // before: the distractor wins on raw distance
        assert!(qg.at(0, 0) < qg.at(0, 1));
        // after: every cluster member beats the distractor
        assert!(out.at(0, 1) < out.at(0, 0));
        assert!(out.at(0, 2) < out.at(0, 0));
        assert!(out.at(0, 3) < out.at(0, 0));
    }

    fn entry(id: &str, tracklet: i64, frame: i64) -> ManifestEntry {
        ManifestEntry {
            item_id: id.to_string(),
            identity: 1,
            camera: 0,
            tracklet,
            frame,
        }
    }

    #[test]
    fn tracklet_window_covering_whole_group_means_everything() {
        let feats = features(3, 2, &[0.0, 0.0, 3.0, 0.0, 0.0, 6.0]);
        let manifest = GalleryManifest::new(vec![
            entry("a", 5, 0),
            entry("b", 5, 1),
            entry("c", 5, 2),
        ])
        .unwrap();
        let out = tracklet_rerank(&feats, &manifest, 3).unwrap();
        for r in 0..3 {
            assert!((out.at(r, 0) - 1.0).abs() < 1e-12);
            assert!((out.at(r, 1) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tracklet_window_shifts_at_boundaries() {
        // frames 0..5, window 3: row 0 averages rows 0..3, row 4 rows 2..5
        let feats = features(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let manifest = GalleryManifest::new(
            (0..5)
                .map(|i| entry(&format!("t{i}"), 9, i as i64))
                .collect(),
        )
        .unwrap();
        let out = tracklet_rerank(&feats, &manifest, 3).unwrap();
        assert!((out.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((out.at(1, 0) - 1.0).abs() < 1e-12);
        assert!((out.at(2, 0) - 2.0).abs() < 1e-12);
        assert!((out.at(3, 0) - 3.0).abs() < 1e-12);
        assert!((out.at(4, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tracklet_window_one_and_loose_rows_copy_exactly() {
        let feats = features(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let manifest = GalleryManifest::new(vec![
            entry("a", 4, 0),
            entry("b", 4, 1),
            entry("c", -1, -1),
        ])
        .unwrap();
        let w1 = tracklet_rerank(&feats, &manifest, 1).unwrap();
        assert_eq!(w1.data(), feats.data());
        let w3 = tracklet_rerank(&feats, &manifest, 3).unwrap();
        // loose row untouched even with a bigger window
        assert_eq!(w3.row(2), feats.row(2));
        assert!((w3.at(0, 0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tracklet_keeps_rows_normalized() {
        let raw = features(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let unit = crate::featstore::l2_normalize_rows(&raw).unwrap();
        let manifest =
            GalleryManifest::new(vec![entry("a", 2, 0), entry("b", 2, 1)]).unwrap();
        let out = tracklet_rerank(&unit, &manifest, 2).unwrap();
        assert!(out.is_normalized());
        for r in 0..2 {
            let n: f64 = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_minmax_and_raw() {
        let a = dm(1, 3, &[0.0, 1.0, 2.0]);
        let b = dm(1, 3, &[10.0, 10.0, 10.0]); // constant -> zeros under minmax
        let mm = ensemble_distances(&[a.clone(), b.clone()], EnsembleNorm::MinMax).unwrap();
        assert!((mm.at(0, 0) - 0.0).abs() < 1e-12);
        assert!((mm.at(0, 1) - 0.25).abs() < 1e-12);
        assert!((mm.at(0, 2) - 0.5).abs() < 1e-12);
        let raw = ensemble_distances(&[a, b], EnsembleNorm::Raw).unwrap();
        assert!((raw.at(0, 0) - 5.0).abs() < 1e-12);
        assert!(ensemble_distances(&[], EnsembleNorm::Raw).is_err());
    }

    #[test]
    fn distance_io_round_trips() {
        let d = dm(2, 3, &[0.5, 1.5, 2.5, 3.5, -0.5, 0.0]);
        let mut buf = Vec::new();
        write_distances(&d, &mut buf).unwrap();
        let back = read_distances(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn rerank_identity_blend_is_exact(seed in 0u64..300, q in 2usize..5, g in 3usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qg = random_dm(q, g, &mut rng);
            let qq = random_self_dm(q, &mut rng);
            let gg = random_self_dm(g, &mut rng);
            let p = RerankParams { k1: 2, k2: 2, lambda: 1.0 };
            let out = k_reciprocal_rerank(&qg, &qq, &gg, &p).unwrap();
            prop_assert_eq!(out.data(), qg.data());
        }

        #[test]
        fn ensemble_is_order_invariant(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_dm(3, 4, &mut rng);
            let b = random_dm(3, 4, &mut rng);
            let c = random_dm(3, 4, &mut rng);
            for norm in [EnsembleNorm::MinMax, EnsembleNorm::Raw] {
                let fwd = ensemble_distances(&[a.clone(), b.clone(), c.clone()], norm).unwrap();
                let rev = ensemble_distances(&[c.clone(), a.clone(), b.clone()], norm).unwrap();
                for (x, y) in fwd.data().iter().zip(rev.data()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn euclidean_is_symmetric_and_triangle(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = features(4, 3, &data);
            let d = pairwise_distance(&m, &m, Metric::Euclidean).unwrap();
            for i in 0..4 {
                prop_assert!(d.at(i, i).abs() < 1e-12);
                for j in 0..4 {
                    prop_assert!((d.at(i, j) - d.at(j, i)).abs() < 1e-12);
                    for k in 0..4 {
                        prop_assert!(d.at(i, j) <= d.at(i, k) + d.at(k, j) + 1e-9);
                    }
                }
            }
        }
    }
}
