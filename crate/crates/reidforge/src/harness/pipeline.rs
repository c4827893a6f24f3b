//! Config-driven retrieval pipeline: load or generate data, transform
//! features, build distances, post-process them, and evaluate, writing every
//! intermediate artifact to the output directory.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::{evaluate, per_query_csv, report_text, EvalProtocol, EvalReport};
use crate::featstore::{
    l2_normalize_rows, read_features, read_manifest, write_features, write_manifest,
    FeatureMatrix, GalleryManifest,
};
use crate::reidnet::{embed, HeadParams};
use crate::retrieval::{
    ensemble_distances, fuse_distances, k_reciprocal_rerank, pairwise_distance, read_distances,
    tracklet_rerank, write_distances, DistanceMatrix, EnsembleNorm, Metric, RerankParams,
};

use super::config::ConfigMap;
use super::synthetic::{generate_synthetic, split_query_gallery, LabeledSet, SyntheticSpec};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "REIDFORGE_SEED";

#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: Option<EvalReport>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageKind {
    Embed,
    Tracklet,
    Dist,
    Fuse,
    Rerank,
    Ensemble,
    Eval,
}

impl StageKind {
    fn name(self) -> &'static str {
        match self {
            StageKind::Embed => "embed",
            StageKind::Tracklet => "tracklet",
            StageKind::Dist => "dist",
            StageKind::Fuse => "fuse",
            StageKind::Rerank => "rerank",
            StageKind::Ensemble => "ensemble",
            StageKind::Eval => "eval",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "embed" => Ok(StageKind::Embed),
            "tracklet" => Ok(StageKind::Tracklet),
            "dist" => Ok(StageKind::Dist),
            "fuse" => Ok(StageKind::Fuse),
            "rerank" => Ok(StageKind::Rerank),
            "ensemble" => Ok(StageKind::Ensemble),
            "eval" => Ok(StageKind::Eval),
            other => Err(Error::InvalidParam {
                name: "stages",
                msg: format!("unknown stage \"{other}\""),
            }),
        }
    }

    fn is_feature(self) -> bool {
        matches!(self, StageKind::Embed | StageKind::Tracklet)
    }

    fn is_matrix(self) -> bool {
        matches!(self, StageKind::Fuse | StageKind::Rerank | StageKind::Ensemble)
    }
}

/// Check stage ordering: feature transforms first, then `dist`, then matrix
/// transforms, with `eval` last; anything downstream of distances requires
/// the `dist` stage.
fn validate_stages(stages: &[StageKind]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::InvalidParam {
            name: "stages",
            msg: "need at least one stage".into(),
        });
    }
    for (i, s) in stages.iter().enumerate() {
        if stages[..i].contains(s) {
            return Err(Error::InvalidParam {
                name: "stages",
                msg: format!("stage \"{}\" listed twice", s.name()),
            });
        }
    }
    let dist_at = stages.iter().position(|s| *s == StageKind::Dist);
    for (i, s) in stages.iter().enumerate() {
        let after_dist = dist_at.map(|d| i > d);
        if s.is_feature() && after_dist == Some(true) {
            return Err(Error::InvalidParam {
                name: "stages",
                msg: format!("feature stage \"{}\" must come before dist", s.name()),
            }
            .in_stage(s.name()));
        }
        if (s.is_matrix() || *s == StageKind::Eval) && after_dist != Some(true) {
            return Err(Error::InvalidParam {
                name: "stages",
                msg: format!("stage \"{}\" needs a dist stage earlier in the list", s.name()),
            }
            .in_stage(s.name()));
        }
        if *s == StageKind::Eval && i + 1 != stages.len() {
            return Err(Error::InvalidParam {
                name: "stages",
                msg: "eval must be the final stage".into(),
            }
            .in_stage("eval"));
        }
    }
    Ok(())
}

fn load_features(path: &str) -> Result<FeatureMatrix> {
    let file = fs::File::open(path)?;
    read_features(&mut BufReader::new(file))
}

fn load_manifest(path: &str) -> Result<GalleryManifest> {
    let file = fs::File::open(path)?;
    read_manifest(BufReader::new(file))
}

fn save_features(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_features(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn save_manifest(m: &GalleryManifest, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_manifest(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn save_distances(d: &DistanceMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_distances(d, &mut w)?;
    w.flush()?;
    Ok(())
}

fn resolve_seed(config: &ConfigMap) -> Result<u64> {
    if let Ok(raw) = std::env::var(SEED_ENV) {
        return raw.parse::<u64>().map_err(|_| Error::InvalidParam {
            name: "REIDFORGE_SEED",
            msg: format!("cannot parse \"{raw}\" as a seed"),
        });
    }
    Ok(config.get_u64("pipeline", "seed")?.unwrap_or(0))
}

fn load_inputs(config: &ConfigMap, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if config.has_section("data") {
        let query = LabeledSet {
            features: load_features(config.require("data", "query_features")?)?,
            manifest: load_manifest(config.require("data", "query_manifest")?)?,
        };
        let gallery = LabeledSet {
            features: load_features(config.require("data", "gallery_features")?)?,
            manifest: load_manifest(config.require("data", "gallery_manifest")?)?,
        };
        return Ok((query, gallery));
    }
    if config.has_section("synthetic") {
        let defaults = SyntheticSpec::default();
        let spec = SyntheticSpec {
            identities: config
                .get_usize("synthetic", "identities")?
                .unwrap_or(defaults.identities),
            samples_per_identity: config
                .get_usize("synthetic", "samples_per_identity")?
                .unwrap_or(defaults.samples_per_identity),
            dim: config.get_usize("synthetic", "dim")?.unwrap_or(defaults.dim),
            noise: config.get_f64("synthetic", "noise")?.unwrap_or(defaults.noise),
            shift_scale: config
                .get_f64("synthetic", "shift_scale")?
                .unwrap_or(defaults.shift_scale),
            shift_offset: config
                .get_f64("synthetic", "shift_offset")?
                .unwrap_or(defaults.shift_offset),
        };
        let per_id = config
            .get_usize("synthetic", "queries_per_identity")?
            .unwrap_or(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = generate_synthetic(&spec, &mut rng)?;
        return split_query_gallery(&all, per_id);
    }
    Err(Error::InvalidParam {
        name: "config",
        msg: "need a [data] or [synthetic] section".into(),
    })
}

fn eval_protocol(config: &ConfigMap) -> Result<EvalProtocol> {
    let defaults = EvalProtocol::default();
    let junk_ids = match config.get("eval", "junk_ids") {
        None => Vec::new(),
        Some(raw) => raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<i64>().map_err(|_| Error::InvalidParam {
                    name: "junk_ids",
                    msg: format!("cannot parse \"{s}\""),
                })
            })
            .collect::<Result<Vec<i64>>>()?,
    };
    Ok(EvalProtocol {
        cross_camera_filter: config
            .get_bool("eval", "cross_camera_filter")?
            .unwrap_or(defaults.cross_camera_filter),
        junk_ids,
        truncate_at: config.get_usize("eval", "truncate_at")?,
        score_unmatched_as_zero: config
            .get_bool("eval", "score_unmatched_as_zero")?
            .unwrap_or(defaults.score_unmatched_as_zero),
        max_rank: config
            .get_usize("eval", "max_rank")?
            .unwrap_or(defaults.max_rank),
    })
}

/// Run the configured stage chain. Artifacts land in `[pipeline] output_dir`
/// (or the override); the function returns the evaluation report when an
/// eval stage ran. Deterministic: the same config, inputs, and seed produce
/// byte-identical artifacts.
pub fn run_pipeline(config: &ConfigMap, output_override: Option<&Path>) -> Result<PipelineOutcome> {
    let stages: Vec<StageKind> = config
        .require("pipeline", "stages")?
        .split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(StageKind::parse)
        .collect::<Result<Vec<_>>>()?;
    validate_stages(&stages)?;

    let output_dir: PathBuf = match output_override {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(config.require("pipeline", "output_dir")?),
    };
    fs::create_dir_all(&output_dir)?;

    let seed = resolve_seed(config)?;
    let (mut query, mut gallery) = load_inputs(config, seed)?;

    let metric: Metric = match config.get("dist", "metric") {
        Some(raw) => raw.parse()?,
        None => Metric::Euclidean,
    };
    let normalize = config.get_bool("dist", "normalize")?.unwrap_or(true);

    let mut artifacts = Vec::new();
    let mut current: Option<DistanceMatrix> = None;
    let mut report = None;

    for stage in &stages {
        match stage {
            StageKind::Embed => {
                let path = config.require("embed", "params").map_err(|e| e.in_stage("embed"))?;
                let file = fs::File::open(path).map_err(|e| Error::from(e).in_stage("embed"))?;
                let params = HeadParams::load(&mut BufReader::new(file))
                    .map_err(|e| e.in_stage("embed"))?;
                query.features = embed(&params, &query.features).map_err(|e| e.in_stage("embed"))?;
                gallery.features =
                    embed(&params, &gallery.features).map_err(|e| e.in_stage("embed"))?;
            }
            StageKind::Tracklet => {
                let window = config
                    .get_usize("tracklet", "window")
                    .map_err(|e| e.in_stage("tracklet"))?
                    .unwrap_or(3);
                gallery.features = tracklet_rerank(&gallery.features, &gallery.manifest, window)
                    .map_err(|e| e.in_stage("tracklet"))?;
            }
            StageKind::Dist => {
                if normalize {
                    query.features =
                        l2_normalize_rows(&query.features).map_err(|e| e.in_stage("dist"))?;
                    gallery.features =
                        l2_normalize_rows(&gallery.features).map_err(|e| e.in_stage("dist"))?;
                }
                // write out exactly the features the distances were built on
                let d = pairwise_distance(&query.features, &gallery.features, metric)
                    .map_err(|e| e.in_stage("dist"))?;
                for (name, m) in [
                    ("query.feat", &query.features),
                    ("gallery.feat", &gallery.features),
                ] {
                    let p = output_dir.join(name);
                    save_features(m, &p).map_err(|e| e.in_stage("dist"))?;
                    artifacts.push(p);
                }
                for (name, m) in [
                    ("query.manifest", &query.manifest),
                    ("gallery.manifest", &gallery.manifest),
                ] {
                    let p = output_dir.join(name);
                    save_manifest(m, &p).map_err(|e| e.in_stage("dist"))?;
                    artifacts.push(p);
                }
                let p = output_dir.join("dist.feat");
                save_distances(&d, &p).map_err(|e| e.in_stage("dist"))?;
                artifacts.push(p);
                current = Some(d);
            }
            StageKind::Fuse => {
                let run = || -> Result<DistanceMatrix> {
                    let first = read_distances(&mut BufReader::new(fs::File::open(
                        config.require("fuse", "orientation")?,
                    )?))?;
                    let second = read_distances(&mut BufReader::new(fs::File::open(
                        config.require("fuse", "camera")?,
                    )?))?;
                    let l1 = config.get_f64("fuse", "lambda1")?.unwrap_or(0.1);
                    let l2 = config.get_f64("fuse", "lambda2")?.unwrap_or(0.1);
                    fuse_distances(current.as_ref().unwrap(), &first, &second, l1, l2)
                };
                let d = run().map_err(|e| e.in_stage("fuse"))?;
                let p = output_dir.join("fused.feat");
                save_distances(&d, &p).map_err(|e| e.in_stage("fuse"))?;
                artifacts.push(p);
                current = Some(d);
            }
            StageKind::Rerank => {
                let run = || -> Result<DistanceMatrix> {
                    let defaults = RerankParams::default();
                    let params = RerankParams {
                        k1: config.get_usize("rerank", "k1")?.unwrap_or(defaults.k1),
                        k2: config.get_usize("rerank", "k2")?.unwrap_or(defaults.k2),
                        lambda: config
                            .get_f64("rerank", "lambda_jaccard")?
                            .unwrap_or(defaults.lambda),
                    };
                    let qq = pairwise_distance(&query.features, &query.features, metric)?;
                    let gg = pairwise_distance(&gallery.features, &gallery.features, metric)?;
                    k_reciprocal_rerank(current.as_ref().unwrap(), &qq, &gg, &params)
                };
                let d = run().map_err(|e| e.in_stage("rerank"))?;
                let p = output_dir.join("reranked.feat");
                save_distances(&d, &p).map_err(|e| e.in_stage("rerank"))?;
                artifacts.push(p);
                current = Some(d);
            }
            StageKind::Ensemble => {
                let run = || -> Result<DistanceMatrix> {
                    let norm: EnsembleNorm = match config.get("ensemble", "norm") {
                        Some(raw) => raw.parse()?,
                        None => EnsembleNorm::MinMax,
                    };
                    let mut members = vec![current.clone().unwrap()];
                    if let Some(list) = config.get("ensemble", "members") {
                        for path in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                            members.push(read_distances(&mut BufReader::new(fs::File::open(
                                path,
                            )?))?);
                        }
                    }
                    ensemble_distances(&members, norm)
                };
                let d = run().map_err(|e| e.in_stage("ensemble"))?;
                let p = output_dir.join("ensemble.feat");
                save_distances(&d, &p).map_err(|e| e.in_stage("ensemble"))?;
                artifacts.push(p);
                current = Some(d);
            }
            StageKind::Eval => {
                let protocol = eval_protocol(config).map_err(|e| e.in_stage("eval"))?;
                let r = evaluate(
                    current.as_ref().unwrap(),
                    &query.manifest,
                    &gallery.manifest,
                    &protocol,
                )
                .map_err(|e| e.in_stage("eval"))?;
                let p = output_dir.join("report.txt");
                fs::write(&p, report_text(&r)).map_err(|e| Error::from(e).in_stage("eval"))?;
                artifacts.push(p);
                let p = output_dir.join("per_query_ap.csv");
                fs::write(&p, per_query_csv(&r)).map_err(|e| Error::from(e).in_stage("eval"))?;
                artifacts.push(p);
                report = Some(r);
            }
        }
    }

    Ok(PipelineOutcome { report, artifacts })
}
