//! Training losses with analytic gradients: label-smoothed cross-entropy on
//! logits, supervised contrastive loss, and batch-hard triplet loss on
//! embeddings. All reductions are batch means; gradients are exact for the
//! returned value.

use crate::error::{Error, Result};
use crate::featstore::FeatureMatrix;

/// A scalar loss plus its gradient with respect to the input matrix.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: FeatureMatrix,
}

/// Smoothed one-hot targets: the true class gets `1 - epsilon * (n-1) / n`,
/// every other class gets `epsilon / n`.
pub fn label_smooth_targets(
    labels: &[usize],
    classes: usize,
    epsilon: f64,
) -> Result<FeatureMatrix> {
    if classes < 2 {
        return Err(Error::InvalidParam {
            name: "classes",
            msg: format!("need at least 2, got {classes}"),
        });
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParam {
            name: "epsilon",
            msg: format!("must lie in [0, 1), got {epsilon}"),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidParam {
            name: "labels",
            msg: "empty batch".into(),
        });
    }
    let n = classes as f64;
    let off = epsilon / n;
    let on = 1.0 - epsilon * (n - 1.0) / n;
    let mut data = vec![off; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::IndexOutOfRange {
                context: "label",
                index: y,
                limit: classes,
            });
        }
        data[i * classes + y] = on;
    }
    FeatureMatrix::new(labels.len(), classes, data)
}

/// Cross-entropy between softmaxed logits and smoothed targets, averaged
/// over the batch. Gradient with respect to logits is
/// `(softmax - targets) / batch`.
pub fn id_loss(logits: &FeatureMatrix, labels: &[usize], epsilon: f64) -> Result<LossOutput> {
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            context: "id_loss labels",
            expected: (logits.rows(), 1),
            found: (labels.len(), 1),
        });
    }
    let classes = logits.dim();
    let targets = label_smooth_targets(labels, classes, epsilon)?;
    let batch = logits.rows() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.rows() * classes];
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        for c in 0..classes {
            let logp = row[c] - max - log_denom;
            let p = logp.exp();
            let q = targets.at(i, c);
            value -= q * logp;
            grad[i * classes + c] = (p - q) / batch;
        }
    }
    Ok(LossOutput {
        value: value / batch,
        grad: FeatureMatrix::new(logits.rows(), classes, grad)?,
    })
}

/// Supervised contrastive loss.
///
/// For each anchor with at least one same-label partner, the loss is the
/// mean over its positives of `-ln( exp(z_i . z_p / tau) /
/// sum_{a != i} exp(z_i . z_a / tau) )`; the batch value averages over
/// contributing anchors only. Anchors without positives are skipped; a
/// batch with no positive pair anywhere is an error.
///
/// The gradient is exact for whatever embeddings are passed in; callers
/// that want the cosine-similarity reading should L2-normalize rows first.
pub fn supcon_loss(
    embeddings: &FeatureMatrix,
    labels: &[i64],
    temperature: f64,
) -> Result<LossOutput> {
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch {
            context: "supcon labels",
            expected: (embeddings.rows(), 1),
            found: (labels.len(), 1),
        });
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidParam {
            name: "temperature",
            msg: format!("must be > 0, got {temperature}"),
        });
    }
    let b = embeddings.rows();
    if b < 2 {
        return Err(Error::NoPositivePairs);
    }
    let dim = embeddings.dim();
    let inv_t = 1.0 / temperature;

    // pairwise scaled dot products
    let mut sim = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let dot: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(a, c)| a * c)
                .sum();
            sim[i * b + j] = dot * inv_t;
            sim[j * b + i] = dot * inv_t;
        }
    }

    let mut value = 0.0;
    let mut contributors = 0usize;
    let mut grad = vec![0.0; b * dim];
    // per-anchor softmax weights, reused buffer
    let mut soft = vec![0.0; b];
    for i in 0..b {
        let positives: Vec<usize> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        contributors += 1;
        let p_count = positives.len() as f64;

        let max = (0..b)
            .filter(|&j| j != i)
            .map(|j| sim[i * b + j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..b {
            if j == i {
                soft[j] = 0.0;
                continue;
            }
            soft[j] = (sim[i * b + j] - max).exp();
            denom += soft[j];
        }
        let log_denom = denom.ln();
        for j in 0..b {
            if j != i {
                soft[j] /= denom;
            }
        }
        for &p in &positives {
            value -= (sim[i * b + p] - max - log_denom) / p_count;
        }

        // d loss_i / d z_i = (1/tau) [ sum_a s_a z_a - mean_p z_p ]
        // d loss_i / d z_k = (1/tau) [ s_k - [k in P]/|P| ] z_i
        for j in 0..b {
            if j == i {
                continue;
            }
            let mut coeff = soft[j];
            if labels[j] == labels[i] {
                coeff -= 1.0 / p_count;
            }
            let scaled = coeff * inv_t;
            for k in 0..dim {
                grad[i * dim + k] += scaled * embeddings.at(j, k);
                grad[j * dim + k] += scaled * embeddings.at(i, k);
            }
        }
    }
    if contributors == 0 {
        return Err(Error::NoPositivePairs);
    }
    let scale = 1.0 / contributors as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(LossOutput {
        value: value * scale,
        grad: FeatureMatrix::new(b, dim, grad)?,
    })
}

/// Batch-hard triplet loss with Euclidean distances.
///
/// Each anchor with at least one positive and one negative contributes
/// `max(0, margin + hardest_positive_dist - hardest_negative_dist)`;
/// the value averages over those anchors. Ties pick the lowest index.
/// A batch with no valid anchor is an error.
pub fn triplet_loss(embeddings: &FeatureMatrix, labels: &[i64], margin: f64) -> Result<LossOutput> {
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch {
            context: "triplet labels",
            expected: (embeddings.rows(), 1),
            found: (labels.len(), 1),
        });
    }
    if margin < 0.0 || !margin.is_finite() {
        return Err(Error::InvalidParam {
            name: "margin",
            msg: format!("must be >= 0, got {margin}"),
        });
    }
    let b = embeddings.rows();
    let dim = embeddings.dim();
    let dist = |i: usize, j: usize| -> f64 {
        embeddings
            .row(i)
            .iter()
            .zip(embeddings.row(j))
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt()
    };

    struct Active {
        anchor: usize,
        pos: usize,
        neg: usize,
        d_pos: f64,
        d_neg: f64,
    }
    let mut valid = 0usize;
    let mut active: Vec<Active> = Vec::new();
    let mut value = 0.0;
    for i in 0..b {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..b {
            if j == i {
                continue;
            }
            let d = dist(i, j);
            if labels[j] == labels[i] {
                if hardest_pos.map_or(true, |(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.map_or(true, |(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        let (Some((p, d_pos)), Some((n, d_neg))) = (hardest_pos, hardest_neg) else {
            continue;
        };
        valid += 1;
        let hinge = margin + d_pos - d_neg;
        if hinge > 0.0 {
            value += hinge;
            active.push(Active {
                anchor: i,
                pos: p,
                neg: n,
                d_pos,
                d_neg,
            });
        }
    }
    if valid == 0 {
        return Err(Error::NoValidTriplet);
    }
    let scale = 1.0 / valid as f64;
    let mut grad = vec![0.0; b * dim];
    for t in &active {
        // d||z_i - z_j|| / dz_i = (z_i - z_j) / d, zero at d = 0
        if t.d_pos > 0.0 {
            for k in 0..dim {
                let u = (embeddings.at(t.anchor, k) - embeddings.at(t.pos, k)) / t.d_pos * scale;
                grad[t.anchor * dim + k] += u;
                grad[t.pos * dim + k] -= u;
            }
        }
        if t.d_neg > 0.0 {
            for k in 0..dim {
                let u = (embeddings.at(t.anchor, k) - embeddings.at(t.neg, k)) / t.d_neg * scale;
                grad[t.anchor * dim + k] -= u;
                grad[t.neg * dim + k] += u;
            }
        }
    }
    Ok(LossOutput {
        value: value * scale,
        grad: FeatureMatrix::new(b, dim, grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn matrix(rows: usize, dim: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, dim, data.to_vec()).unwrap()
    }

    fn gaussian(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        matrix(rows, dim, &data)
    }

    #[test]
    fn smoothing_splits_mass_as_expected() {
        let t = label_smooth_targets(&[3], 10, 0.1).unwrap();
        assert!((t.at(0, 3) - 0.91).abs() < 1e-12);
        for c in 0..10 {
            if c != 3 {
                assert!((t.at(0, c) - 0.01).abs() < 1e-12);
            }
        }
        let total: f64 = t.row(0).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_validates_inputs() {
        assert!(label_smooth_targets(&[0], 1, 0.1).is_err());
        assert!(label_smooth_targets(&[0], 3, 1.0).is_err());
        assert!(label_smooth_targets(&[3], 3, 0.1).is_err());
        assert!(label_smooth_targets(&[], 3, 0.1).is_err());
    }

    #[test]
    fn uniform_logits_cost_ln_classes() {
        // with equal logits the softmax is uniform, so the cross entropy is
        // ln(n) for any target distribution summing to one
        let logits = matrix(1, 2, &[0.7, 0.7]);
        let out = id_loss(&logits, &[0], 0.1).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);

        let logits4 = matrix(2, 4, &[1.0; 8]);
        let out4 = id_loss(&logits4, &[2, 0], 0.0).unwrap();
        assert!((out4.value - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn id_loss_gradient_matches_finite_differences() {
        let logits = gaussian(4, 6, 21);
        let labels = [1usize, 5, 0, 3];
        let out = id_loss(&logits, &labels, 0.1).unwrap();
        let numeric = gradcheck::central_diff(logits.data(), 1e-5, |flat| {
            id_loss(&matrix(4, 6, flat), &labels, 0.1).unwrap().value
        });
        let err = gradcheck::max_relative_error(out.grad.data(), &numeric);
        assert!(err < 1e-7, "error {err}");
    }

    #[test]
    fn supcon_two_identical_labels_is_zero() {
        // single positive == whole denominator, so each term is ln(1) = 0
        let z = matrix(2, 3, &[0.6, 0.8, 0.0, 0.0, 1.0, 0.0]);
        let out = supcon_loss(&z, &[7, 7], 0.1).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn supcon_requires_a_positive_pair() {
        let z = gaussian(3, 4, 2);
        assert!(matches!(
            supcon_loss(&z, &[0, 1, 2], 0.1),
            Err(Error::NoPositivePairs)
        ));
    }

    #[test]
    fn supcon_skips_anchors_without_positives() {
        // label 9 appears once: anchors 0 and 1 contribute, anchor 2 skipped
        let z = gaussian(3, 4, 5);
        let full = supcon_loss(&z, &[1, 1, 9], 0.2).unwrap();
        assert!(full.value.is_finite());
        // the lone row still receives gradient as a negative for others
        let lone = full.grad.row(2);
        assert!(lone.iter().any(|g| g.abs() > 0.0));
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let z = gaussian(5, 4, 33);
        let labels = [0i64, 1, 0, 1, 2];
        let out = supcon_loss(&z, &labels, 0.15).unwrap();
        let numeric = gradcheck::central_diff(z.data(), 1e-5, |flat| {
            supcon_loss(&matrix(5, 4, flat), &labels, 0.15).unwrap().value
        });
        let err = gradcheck::max_relative_error(out.grad.data(), &numeric);
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn triplet_hand_worked_value() {
        // 1-d layout: anchor 0.0, positive 1.0, negative 0.5
        // both labeled anchors see d_pos 1.0, d_neg 0.5:
        // 0.3 + 1.0 - 0.5 = 0.8 each, mean 0.8
        let z = matrix(3, 1, &[0.0, 1.0, 0.5]);
        let out = triplet_loss(&z, &[0, 0, 1], 0.3).unwrap();
        assert!((out.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn triplet_satisfied_batch_costs_zero() {
        // positive pair close together, negative far away
        let z = matrix(3, 1, &[0.0, 0.1, 5.0]);
        let out = triplet_loss(&z, &[0, 0, 1], 0.3).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn triplet_requires_valid_anchor() {
        let z = gaussian(3, 2, 8);
        assert!(matches!(
            triplet_loss(&z, &[0, 1, 2], 0.3),
            Err(Error::NoValidTriplet)
        ));
        assert!(matches!(
            triplet_loss(&z, &[4, 4, 4], 0.3),
            Err(Error::NoValidTriplet)
        ));
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let z = gaussian(6, 3, 44);
        let labels = [0i64, 0, 1, 1, 2, 2];
        let out = triplet_loss(&z, &labels, 0.5).unwrap();
        assert!(out.value > 0.0, "need an active hinge for this check");
        let numeric = gradcheck::central_diff(z.data(), 1e-5, |flat| {
            triplet_loss(&matrix(6, 3, flat), &labels, 0.5).unwrap().value
        });
        let err = gradcheck::max_relative_error(out.grad.data(), &numeric);
        assert!(err < 1e-6, "error {err}");
    }
}
