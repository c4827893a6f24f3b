//! Training loop: PK batch sampling, the combined ID + metric objective
//! with adaptive weighting, and plain SGD on the attention head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featstore::{l2_normalize_rows, FeatureMatrix};
use crate::losses::{id_loss, supcon_loss, triplet_loss};
use crate::malw::{malw_init, malw_step, MalwConfig, MalwUpdate};
use crate::reidnet::{
    init_head, mixstyle, multihead_backward, multihead_forward, sample_mix_lambda, HeadDims,
    HeadParams, MixStyleConfig,
};

use super::synthetic::LabeledSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricLossKind {
    SupCon,
    Triplet,
}

impl std::str::FromStr for MetricLossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supcon" => Ok(MetricLossKind::SupCon),
            "triplet" => Ok(MetricLossKind::Triplet),
            other => Err(Error::InvalidParam {
                name: "loss",
                msg: format!("unknown metric loss \"{other}\""),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// identities per batch (P)
    pub ids_per_batch: usize,
    /// instances per identity (K)
    pub instances_per_id: usize,
    pub lr: f64,
    pub heads: usize,
    pub head_dim: usize,
    pub metric_loss: MetricLossKind,
    /// contrastive temperature
    pub temperature: f64,
    /// triplet margin
    pub margin: f64,
    /// label smoothing strength
    pub smoothing: f64,
    /// None = fixed 1:1 weighting
    pub malw: Option<MalwConfig>,
    /// None = no statistics mixing
    pub mixstyle: Option<MixStyleConfig>,
    /// chance per step of applying mixing when configured
    pub mixstyle_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            ids_per_batch: 8,
            instances_per_id: 4,
            lr: 0.05,
            heads: 4,
            head_dim: 16,
            metric_loss: MetricLossKind::SupCon,
            temperature: 0.1,
            margin: 0.3,
            smoothing: 0.1,
            malw: None,
            mixstyle: None,
            mixstyle_prob: 0.5,
            seed: 0,
        }
    }
}

/// Trained parameters plus the per-step loss record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub id_losses: Vec<f64>,
    pub metric_losses: Vec<f64>,
    pub malw_updates: Vec<MalwUpdate>,
}

/// Sample a PK batch: `ids_per_batch` distinct labels, `instances_per_id`
/// rows each. Labels with too few rows are padded by sampling with
/// replacement. Returns row indices.
pub fn pk_sample<R: Rng + ?Sized>(
    labels: &[i64],
    ids_per_batch: usize,
    instances_per_id: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if ids_per_batch == 0 || instances_per_id == 0 {
        return Err(Error::InvalidParam {
            name: "batch",
            msg: "ids_per_batch and instances_per_id must be >= 1".into(),
        });
    }
    let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < ids_per_batch {
        return Err(Error::InvalidParam {
            name: "ids_per_batch",
            msg: format!(
                "asked for {} identities but only {} are present",
                ids_per_batch,
                groups.len()
            ),
        });
    }
    let keys: Vec<&Vec<usize>> = groups.values().collect();
    let chosen = rand::seq::index::sample(rng, keys.len(), ids_per_batch);
    let mut batch = Vec::with_capacity(ids_per_batch * instances_per_id);
    for gi in chosen {
        let rows = keys[gi];
        if rows.len() >= instances_per_id {
            for ri in rand::seq::index::sample(rng, rows.len(), instances_per_id) {
                batch.push(rows[ri]);
            }
        } else {
            for _ in 0..instances_per_id {
                batch.push(rows[rng.random_range(0..rows.len())]);
            }
        }
    }
    Ok(batch)
}

/// Gradient of the L2 row normalization `z = e / |e|`: project the incoming
/// gradient onto the tangent plane and rescale by the original norm.
fn normalize_backward(embeddings: &FeatureMatrix, normalized: &FeatureMatrix, grad_z: &FeatureMatrix) -> Result<FeatureMatrix> {
    let dim = embeddings.dim();
    let mut out = Vec::with_capacity(embeddings.rows() * dim);
    for i in 0..embeddings.rows() {
        let norm = embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let z = normalized.row(i);
        let g = grad_z.row(i);
        let dot: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
        for k in 0..dim {
            out.push((g[k] - dot * z[k]) / norm);
        }
    }
    FeatureMatrix::new(embeddings.rows(), dim, out)
}

/// Fit the attention head on labeled features with SGD.
///
/// Each step draws a PK batch, optionally mixes batch statistics with a
/// shuffled partner, runs the head, and descends on
/// `lambda_id * id_loss + lambda_metric * metric_loss`, where the metric
/// loss sees L2-normalized embeddings. The weights follow the adaptive
/// schedule when `malw` is set and stay at 1:1 otherwise. Fully
/// deterministic for a given config.
pub fn train_head(data: &LabeledSet, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.epochs == 0 {
        return Err(Error::InvalidParam {
            name: "epochs",
            msg: "must be >= 1".into(),
        });
    }
    if config.ids_per_batch < 2 || config.instances_per_id < 2 {
        return Err(Error::InvalidParam {
            name: "batch",
            msg: "need at least 2 identities and 2 instances per identity".into(),
        });
    }
    if config.lr <= 0.0 || !config.lr.is_finite() {
        return Err(Error::InvalidParam {
            name: "lr",
            msg: format!("must be > 0, got {}", config.lr),
        });
    }
    if !(0.0..=1.0).contains(&config.mixstyle_prob) {
        return Err(Error::InvalidParam {
            name: "mixstyle_prob",
            msg: format!("must lie in [0, 1], got {}", config.mixstyle_prob),
        });
    }

    let labels = data.manifest.identities();
    // class index per row, classes sorted by identity label
    let mut classes: Vec<i64> = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let class_of = |label: i64| classes.binary_search(&label).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = HeadDims {
        input_dim: data.features.dim(),
        head_dim: config.head_dim,
        heads: config.heads,
        classes: classes.len(),
    };
    let mut params = init_head(dims, &mut rng)?;
    let mut malw = config.malw.map(malw_init).transpose()?;

    let batch_size = config.ids_per_batch * config.instances_per_id;
    let steps_per_epoch = (data.features.rows() / batch_size).max(1);
    let total_steps = config.epochs * steps_per_epoch;

    let mut id_losses = Vec::with_capacity(total_steps);
    let mut metric_losses = Vec::with_capacity(total_steps);
    let mut malw_updates = Vec::new();

    for step in 0..total_steps {
        let batch_rows = pk_sample(
            &labels,
            config.ids_per_batch,
            config.instances_per_id,
            &mut rng,
        )?;
        let mut x = data.features.select_rows(&batch_rows)?;
        let batch_labels: Vec<i64> = batch_rows.iter().map(|&i| labels[i]).collect();
        let batch_classes: Vec<usize> = batch_labels.iter().map(|&l| class_of(l)).collect();

        if let Some(ms) = &config.mixstyle {
            if rng.random::<f64>() < config.mixstyle_prob {
                let lambda = sample_mix_lambda(ms.alpha, &mut rng)?;
                let mut perm: Vec<usize> = (0..x.rows()).collect();
                use rand::seq::SliceRandom;
                perm.shuffle(&mut rng);
                let partner = x.select_rows(&perm)?;
                x = mixstyle(&x, &partner, lambda, ms.epsilon)?;
            }
        }

        let cache = multihead_forward(&params, &x)?;
        let id = id_loss(cache.logits(), &batch_classes, config.smoothing)?;
        let z = l2_normalize_rows(cache.embeddings())?;
        let metric = match config.metric_loss {
            MetricLossKind::SupCon => supcon_loss(&z, &batch_labels, config.temperature)?,
            MetricLossKind::Triplet => triplet_loss(&z, &batch_labels, config.margin)?,
        };
        if !id.value.is_finite() || !metric.value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        id_losses.push(id.value);
        metric_losses.push(metric.value);

        let (w_id, w_metric) = match &mut malw {
            Some(state) => {
                let w = malw_step(state, id.value, metric.value)?;
                if let Some(u) = w.update {
                    malw_updates.push(u);
                }
                (w.lambda_id, w.lambda_metric)
            }
            None => (1.0, 1.0),
        };

        let grad_e_metric = normalize_backward(cache.embeddings(), &z, &metric.grad)?;
        let grad_embedding = FeatureMatrix::new(
            grad_e_metric.rows(),
            grad_e_metric.dim(),
            grad_e_metric.data().iter().map(|g| g * w_metric).collect(),
        )?;
        let grad_logits = FeatureMatrix::new(
            id.grad.rows(),
            id.grad.dim(),
            id.grad.data().iter().map(|g| g * w_id).collect(),
        )?;
        let (grads, _) =
            multihead_backward(&params, &cache, Some(&grad_embedding), Some(&grad_logits))?;
        let flat = params.flat_mut();
        for (p, g) in flat.iter_mut().zip(grads.flat()) {
            *p -= config.lr * g;
        }
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
    }

    Ok(TrainOutcome {
        params,
        id_losses,
        metric_losses,
        malw_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::malw::MalwMode;
    use crate::reidnet::embed;
    use crate::retrieval::{pairwise_distance, Metric};

    fn toy_spec() -> SyntheticSpec {
        SyntheticSpec {
            identities: 6,
            samples_per_identity: 8,
            dim: 12,
            noise: 0.15,
            shift_scale: 1.0,
            shift_offset: 0.0,
        }
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            ids_per_batch: 3,
            instances_per_id: 3,
            lr: 0.1,
            heads: 2,
            head_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn pk_sampling_shapes_and_determinism() {
        let labels = vec![0i64, 0, 0, 1, 1, 2, 2, 2, 2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = pk_sample(&labels, 3, 2, &mut rng).unwrap();
        assert_eq!(batch.len(), 6);
        let mut seen = std::collections::BTreeSet::new();
        for chunk in batch.chunks(2) {
            assert_eq!(labels[chunk[0]], labels[chunk[1]]);
            seen.insert(labels[chunk[0]]);
        }
        assert_eq!(seen.len(), 3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(batch, pk_sample(&labels, 3, 2, &mut rng2).unwrap());
    }

    #[test]
    fn pk_sampling_pads_small_identities() {
        let labels = vec![0i64, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = pk_sample(&labels, 2, 3, &mut rng).unwrap();
        assert_eq!(batch.len(), 6);
        assert!(pk_sample(&labels, 3, 2, &mut rng).is_err());
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        use crate::gradcheck;
        let e = FeatureMatrix::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.5]).unwrap();
        let gz = FeatureMatrix::new(2, 3, vec![0.3, 0.7, -0.2, 1.0, -0.4, 0.6]).unwrap();
        let z = l2_normalize_rows(&e).unwrap();
        let analytic = normalize_backward(&e, &z, &gz).unwrap();
        let numeric = gradcheck::central_diff(e.data(), 1e-6, |flat| {
            let m = FeatureMatrix::new(2, 3, flat.to_vec()).unwrap();
            let zn = l2_normalize_rows(&m).unwrap();
            zn.data().iter().zip(gz.data()).map(|(a, b)| a * b).sum()
        });
        let err = gradcheck::max_relative_error(analytic.data(), &numeric);
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = generate_synthetic(&toy_spec(), &mut rng).unwrap();
        let a = train_head(&data, &toy_config()).unwrap();
        let b = train_head(&data, &toy_config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.id_losses, b.id_losses);
    }

    #[test]
    fn training_reduces_losses_and_separates_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = generate_synthetic(&toy_spec(), &mut rng).unwrap();
        let out = train_head(&data, &toy_config()).unwrap();
        let head = |v: &[f64]| v[..5].iter().sum::<f64>() / 5.0;
        let tail = |v: &[f64]| v[v.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(
            tail(&out.id_losses) < head(&out.id_losses),
            "id loss did not drop: {} -> {}",
            head(&out.id_losses),
            tail(&out.id_losses)
        );

        // same-identity embedding distances should undercut cross-identity
        let z = embed(&out.params, &data.features).unwrap();
        let d = pairwise_distance(&z, &z, Metric::Euclidean).unwrap();
        let labels = data.manifest.identities();
        let (mut same, mut diff, mut ns, mut nd) = (0.0, 0.0, 0usize, 0usize);
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    same += d.at(i, j);
                    ns += 1;
                } else {
                    diff += d.at(i, j);
                    nd += 1;
                }
            }
        }
        assert!(same / (ns as f64) < diff / (nd as f64));
    }

    #[test]
    fn training_with_all_options_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = generate_synthetic(&toy_spec(), &mut rng).unwrap();
        let config = TrainConfig {
            metric_loss: MetricLossKind::Triplet,
            malw: Some(MalwConfig {
                interval: 5,
                alpha: 0.6,
                mode: MalwMode::Literal,
            }),
            mixstyle: Some(MixStyleConfig::default()),
            mixstyle_prob: 0.5,
            ..toy_config()
        };
        let out = train_head(&data, &config).unwrap();
        assert!(!out.malw_updates.is_empty());
        assert!(out.malw_updates.iter().all(|u| u.lambda_metric == 1.0));
    }

    #[test]
    fn config_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = generate_synthetic(&toy_spec(), &mut rng).unwrap();
        for bad in [
            TrainConfig {
                epochs: 0,
                ..toy_config()
            },
            TrainConfig {
                ids_per_batch: 1,
                ..toy_config()
            },
            TrainConfig {
                instances_per_id: 1,
                ..toy_config()
            },
            TrainConfig {
                lr: 0.0,
                ..toy_config()
            },
            TrainConfig {
                mixstyle_prob: 1.5,
                ..toy_config()
            },
        ] {
            assert!(train_head(&data, &bad).is_err());
        }
    }
}
