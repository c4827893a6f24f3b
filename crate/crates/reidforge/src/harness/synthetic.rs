//! Synthetic vehicle datasets: identity clusters on the unit sphere with a
//! per-camera affine domain shift, plus the fixed benchmark splits the
//! integration tests and examples share.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::featstore::{FeatureMatrix, GalleryManifest, ManifestEntry};

/// Generation parameters. Camera 1 rows are transformed with
/// `x -> shift_scale * x + shift_offset` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    /// per-coordinate noise std around the identity centroid
    pub noise: f64,
    pub shift_scale: f64,
    pub shift_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 50,
            samples_per_identity: 10,
            dim: 32,
            noise: 0.12,
            shift_scale: 3.0,
            shift_offset: 2.0,
        }
    }
}

/// Features paired with their metadata.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: FeatureMatrix,
    pub manifest: GalleryManifest,
}

/// Draw an identity-clustered dataset.
///
/// Each identity gets a unit-norm Gaussian centroid; samples add isotropic
/// noise. The second half of every identity's samples is pushed through the
/// camera-1 domain shift; the first half stays on camera 0. Tracklets and
/// frames are left unset.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<LabeledSet> {
    if spec.identities == 0 || spec.samples_per_identity == 0 || spec.dim == 0 {
        return Err(Error::InvalidParam {
            name: "spec",
            msg: "identities, samples_per_identity, and dim must all be >= 1".into(),
        });
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::InvalidParam {
            name: "noise",
            msg: format!("must be finite and >= 0, got {}", spec.noise),
        });
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows = spec.identities * spec.samples_per_identity;
    let mut data = Vec::with_capacity(rows * spec.dim);
    let mut entries = Vec::with_capacity(rows);
    let cam1_from = spec.samples_per_identity.div_ceil(2);

    for identity in 0..spec.identities {
        let mut centroid: Vec<f64> = (0..spec.dim).map(|_| normal.sample(rng)).collect();
        let norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut centroid {
                *c /= norm;
            }
        }
        for sample in 0..spec.samples_per_identity {
            let camera = if sample >= cam1_from { 1 } else { 0 };
            for &c in &centroid {
                let mut v = c + spec.noise * normal.sample(rng);
                if camera == 1 {
                    v = spec.shift_scale * v + spec.shift_offset;
                }
                data.push(v);
            }
            entries.push(ManifestEntry {
                item_id: format!("i{identity}_s{sample}"),
                identity: identity as i64,
                camera,
                tracklet: -1,
                frame: -1,
            });
        }
    }
    Ok(LabeledSet {
        features: FeatureMatrix::new(rows, spec.dim, data)?,
        manifest: GalleryManifest::new(entries)?,
    })
}

/// Split a labeled set into query and gallery sides, taking
/// `queries_per_identity` rows per identity (alternating cameras so both
/// domains appear on the query side) and leaving the rest in the gallery.
pub fn split_query_gallery(
    data: &LabeledSet,
    queries_per_identity: usize,
) -> Result<(LabeledSet, LabeledSet)> {
    if queries_per_identity == 0 {
        return Err(Error::InvalidParam {
            name: "queries_per_identity",
            msg: "must be >= 1".into(),
        });
    }
    use std::collections::BTreeMap;
    let mut by_identity: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in data.manifest.entries().iter().enumerate() {
        by_identity.entry(e.identity).or_default().push(i);
    }
    let mut query_rows = Vec::new();
    let mut gallery_rows = Vec::new();
    for rows in by_identity.values() {
        if rows.len() <= queries_per_identity {
            return Err(Error::InvalidParam {
                name: "queries_per_identity",
                msg: format!(
                    "identity with {} samples cannot spare {} queries",
                    rows.len(),
                    queries_per_identity
                ),
            });
        }
        // alternate cameras: first row of camera 0, first of camera 1, ...
        let mut cam0: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| data.manifest.entry(i).camera == 0)
            .collect();
        let mut cam1: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| data.manifest.entry(i).camera != 0)
            .collect();
        cam0.reverse();
        cam1.reverse();
        let mut picked = Vec::with_capacity(queries_per_identity);
        let mut take_cam0 = true;
        while picked.len() < queries_per_identity {
            let pool = if take_cam0 { &mut cam0 } else { &mut cam1 };
            if let Some(row) = pool.pop() {
                picked.push(row);
            } else if let Some(row) = if take_cam0 { cam1.pop() } else { cam0.pop() } {
                picked.push(row);
            }
            take_cam0 = !take_cam0;
        }
        picked.sort_unstable();
        for &r in rows {
            if picked.contains(&r) {
                query_rows.push(r);
            } else {
                gallery_rows.push(r);
            }
        }
    }
    let query = LabeledSet {
        features: data.features.select_rows(&query_rows)?,
        manifest: data.manifest.select(&query_rows)?,
    };
    let gallery = LabeledSet {
        features: data.features.select_rows(&gallery_rows)?,
        manifest: data.manifest.select(&gallery_rows)?,
    };
    Ok((query, gallery))
}

/// Blow each gallery row up into a short tracklet of noisy copies.
///
/// Row `i` becomes `copies` rows sharing tracklet id `i` with frames
/// `0..copies`, same identity and camera, each perturbed with fresh noise.
pub fn expand_tracklets<R: Rng + ?Sized>(
    data: &LabeledSet,
    copies: usize,
    noise: f64,
    rng: &mut R,
) -> Result<LabeledSet> {
    if copies == 0 {
        return Err(Error::InvalidParam {
            name: "copies",
            msg: "must be >= 1".into(),
        });
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dim = data.features.dim();
    let mut feats = Vec::with_capacity(data.features.rows() * copies * dim);
    let mut entries = Vec::with_capacity(data.features.rows() * copies);
    for (i, e) in data.manifest.entries().iter().enumerate() {
        for frame in 0..copies {
            for &v in data.features.row(i) {
                feats.push(v + noise * normal.sample(rng));
            }
            entries.push(ManifestEntry {
                item_id: format!("{}_f{frame}", e.item_id),
                identity: e.identity,
                camera: e.camera,
                tracklet: i as i64,
                frame: frame as i64,
            });
        }
    }
    Ok(LabeledSet {
        features: FeatureMatrix::new(data.features.rows() * copies, dim, feats)?,
        manifest: GalleryManifest::new(entries)?,
    })
}

/// The fixed benchmark the integration tests and examples run against:
/// 50 identities of 10 samples in 32 dimensions under a strong camera-1
/// affine shift (scale 3, offset 2), 40 identities for training, the other
/// 10 split into 2 queries + 8 gallery rows each.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: LabeledSet,
    pub query: LabeledSet,
    pub gallery: LabeledSet,
}

pub fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        identities: 50,
        samples_per_identity: 10,
        dim: 32,
        noise: 0.12,
        shift_scale: 3.0,
        shift_offset: 2.0,
    }
}

pub fn standard_benchmark(seed: u64) -> Result<Benchmark> {
    let spec = benchmark_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = generate_synthetic(&spec, &mut rng)?;
    let train_ids = 40i64;
    let mut train_rows = Vec::new();
    let mut eval_rows = Vec::new();
    for (i, e) in all.manifest.entries().iter().enumerate() {
        if e.identity < train_ids {
            train_rows.push(i);
        } else {
            eval_rows.push(i);
        }
    }
    let train = LabeledSet {
        features: all.features.select_rows(&train_rows)?,
        manifest: all.manifest.select(&train_rows)?,
    };
    let eval = LabeledSet {
        features: all.features.select_rows(&eval_rows)?,
        manifest: all.manifest.select(&eval_rows)?,
    };
    let (query, gallery) = split_query_gallery(&eval, 2)?;
    Ok(Benchmark {
        train,
        query,
        gallery,
    })
}
