//! Command-line front end over the library: one subcommand per pipeline
//! capability plus a config-driven end-to-end runner.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reidforge::error::Result;
use reidforge::evalkit::{evaluate, per_query_csv, report_text, EvalProtocol};
use reidforge::featstore::{
    l2_normalize_rows, read_features, read_manifest, write_features, write_manifest,
    FeatureMatrix, GalleryManifest,
};
use reidforge::harness::{
    generate_synthetic, parse_config, run_pipeline, split_query_gallery, train_head,
    MetricLossKind, SyntheticSpec, TrainConfig,
};
use reidforge::malw::{updates_to_csv, MalwConfig, MalwMode};
use reidforge::reidnet::{embed, HeadParams, MixStyleConfig};
use reidforge::retrieval::{
    ensemble_distances, fuse_distances, k_reciprocal_rerank, pairwise_distance, read_distances,
    tracklet_rerank, write_distances, DistanceMatrix, EnsembleNorm, Metric, RerankParams,
};

#[derive(Parser)]
#[command(name = "reidforge", about = "Vehicle re-identification toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and split it into query/gallery files
    Gen {
        /// output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        identities: usize,
        #[arg(long, default_value_t = 10)]
        samples_per_identity: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.12)]
        noise: f64,
        #[arg(long, default_value_t = 3.0)]
        shift_scale: f64,
        #[arg(long, default_value_t = 2.0)]
        shift_offset: f64,
        #[arg(long, default_value_t = 2)]
        queries_per_id: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the attention head on labeled features
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// where to store the trained parameters
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        ids_per_batch: usize,
        #[arg(long, default_value_t = 4)]
        instances_per_id: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 16)]
        head_dim: usize,
        /// metric loss: supcon or triplet
        #[arg(long, default_value = "supcon")]
        loss: String,
        #[arg(long, default_value_t = 0.1)]
        temperature: f64,
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// adaptive weighting: off, literal, or ema
        #[arg(long, default_value = "off")]
        malw: String,
        #[arg(long, default_value_t = 500)]
        malw_interval: usize,
        #[arg(long, default_value_t = 0.9)]
        malw_alpha: f64,
        /// write weight-update history here
        #[arg(long)]
        malw_csv: Option<PathBuf>,
        /// enable batch statistics mixing
        #[arg(long, default_value_t = false)]
        mixstyle: bool,
        #[arg(long, default_value_t = 0.1)]
        mixstyle_alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        mixstyle_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply a trained head to features, writing normalized embeddings
    Embed {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise query-gallery distances
    Dist {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// euclidean or cosine
        #[arg(long, default_value = "euclidean")]
        metric: String,
        /// L2-normalize rows before measuring
        #[arg(long, default_value_t = false)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subtract weighted auxiliary distances from a visual distance
    Fuse {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        orientation: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda2: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-reciprocal neighborhood re-ranking
    Rerank {
        /// query-gallery distances
        #[arg(long)]
        dist: PathBuf,
        /// query-query distances
        #[arg(long)]
        qq: PathBuf,
        /// gallery-gallery distances
        #[arg(long)]
        gg: PathBuf,
        #[arg(long, default_value_t = 20)]
        k1: usize,
        #[arg(long, default_value_t = 6)]
        k2: usize,
        #[arg(long, default_value_t = 0.3)]
        lambda_jaccard: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth gallery features along tracklets
    Tracklet {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 3)]
        tracklet_window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average several distance matrices
    Ensemble {
        /// minmax or raw
        #[arg(long, default_value = "minmax")]
        ensemble_norm: String,
        #[arg(long)]
        out: PathBuf,
        /// member distance files
        #[arg(required = true)]
        members: Vec<PathBuf>,
    },
    /// Score a distance matrix and print the report
    Eval {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        query_manifest: PathBuf,
        #[arg(long)]
        gallery_manifest: PathBuf,
        #[arg(long, default_value_t = true)]
        cross_camera_filter: bool,
        #[arg(long, default_value_t = 50)]
        max_rank: usize,
        /// cap ranked lists (mAP@T)
        #[arg(long)]
        truncate: Option<usize>,
        /// write the per-query AP table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a config-driven stage chain
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// overrides [pipeline] output_dir
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn load_features(path: &Path) -> Result<FeatureMatrix> {
    read_features(&mut BufReader::new(fs::File::open(path)?))
}

fn load_manifest(path: &Path) -> Result<GalleryManifest> {
    read_manifest(BufReader::new(fs::File::open(path)?))
}

fn load_distances(path: &Path) -> Result<DistanceMatrix> {
    read_distances(&mut BufReader::new(fs::File::open(path)?))
}

fn save_features(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_features(m, &mut w)?;
    Ok(w.flush()?)
}

fn save_manifest(m: &GalleryManifest, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_manifest(m, &mut w)?;
    Ok(w.flush()?)
}

fn save_distances(d: &DistanceMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_distances(d, &mut w)?;
    Ok(w.flush()?)
}

fn run(cli: Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::Gen { .. } => "gen",
        Command::Train { .. } => "train",
        Command::Embed { .. } => "embed",
        Command::Dist { .. } => "dist",
        Command::Fuse { .. } => "fuse",
        Command::Rerank { .. } => "rerank",
        Command::Tracklet { .. } => "tracklet",
        Command::Ensemble { .. } => "ensemble",
        Command::Eval { .. } => "eval",
        // pipeline errors arrive already tagged with the failing stage
        Command::Pipeline { .. } => "",
    };
    dispatch(cli).map_err(|e| if stage.is_empty() { e } else { e.in_stage(stage) })
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            out,
            identities,
            samples_per_identity,
            dim,
            noise,
            shift_scale,
            shift_offset,
            queries_per_id,
            seed,
        } => {
            use rand::SeedableRng;
            let spec = SyntheticSpec {
                identities,
                samples_per_identity,
                dim,
                noise,
                shift_scale,
                shift_offset,
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let all = generate_synthetic(&spec, &mut rng)?;
            let (query, gallery) = split_query_gallery(&all, queries_per_id)?;
            fs::create_dir_all(&out)?;
            save_features(&all.features, &out.join("full.feat"))?;
            save_manifest(&all.manifest, &out.join("full.manifest"))?;
            save_features(&query.features, &out.join("query.feat"))?;
            save_manifest(&query.manifest, &out.join("query.manifest"))?;
            save_features(&gallery.features, &out.join("gallery.feat"))?;
            save_manifest(&gallery.manifest, &out.join("gallery.manifest"))?;
            println!(
                "wrote {} rows ({} query, {} gallery) to {}",
                all.features.rows(),
                query.features.rows(),
                gallery.features.rows(),
                out.display()
            );
        }
        Command::Train {
            features,
            manifest,
            out,
            epochs,
            ids_per_batch,
            instances_per_id,
            lr,
            heads,
            head_dim,
            loss,
            temperature,
            margin,
            smoothing,
            malw,
            malw_interval,
            malw_alpha,
            malw_csv,
            mixstyle,
            mixstyle_alpha,
            mixstyle_prob,
            seed,
        } => {
            let data = reidforge::harness::LabeledSet {
                features: load_features(&features)?,
                manifest: load_manifest(&manifest)?,
            };
            let malw_config = match malw.as_str() {
                "off" => None,
                "literal" => Some(MalwConfig {
                    interval: malw_interval,
                    alpha: malw_alpha,
                    mode: MalwMode::Literal,
                }),
                "ema" => Some(MalwConfig {
                    interval: malw_interval,
                    alpha: malw_alpha,
                    mode: MalwMode::Ema,
                }),
                other => {
                    return Err(reidforge::Error::InvalidParam {
                        name: "malw",
                        msg: format!("expected off, literal, or ema, got \"{other}\""),
                    })
                }
            };
            let config = TrainConfig {
                epochs,
                ids_per_batch,
                instances_per_id,
                lr,
                heads,
                head_dim,
                metric_loss: loss.parse::<MetricLossKind>()?,
                temperature,
                margin,
                smoothing,
                malw: malw_config,
                mixstyle: mixstyle.then_some(MixStyleConfig {
                    alpha: mixstyle_alpha,
                    ..Default::default()
                }),
                mixstyle_prob,
                seed,
            };
            let outcome = train_head(&data, &config)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            outcome.params.save(&mut w)?;
            w.flush()?;
            if let Some(csv) = malw_csv {
                fs::write(csv, updates_to_csv(&outcome.malw_updates))?;
            }
            let last = outcome.id_losses.len().saturating_sub(1);
            println!(
                "trained {} steps, final id loss {:.4}, final metric loss {:.4}, params -> {}",
                outcome.id_losses.len(),
                outcome.id_losses.get(last).copied().unwrap_or(f64::NAN),
                outcome.metric_losses.get(last).copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Embed {
            features,
            params,
            out,
        } => {
            let x = load_features(&features)?;
            let p = HeadParams::load(&mut BufReader::new(fs::File::open(&params)?))?;
            let z = embed(&p, &x)?;
            save_features(&z, &out)?;
            println!("embedded {} rows -> {}", z.rows(), out.display());
        }
        Command::Dist {
            query,
            gallery,
            metric,
            normalize,
            out,
        } => {
            let mut q = load_features(&query)?;
            let mut g = load_features(&gallery)?;
            if normalize {
                q = l2_normalize_rows(&q)?;
                g = l2_normalize_rows(&g)?;
            }
            let d = pairwise_distance(&q, &g, metric.parse::<Metric>()?)?;
            save_distances(&d, &out)?;
            println!("{}x{} distances -> {}", d.queries(), d.gallery(), out.display());
        }
        Command::Fuse {
            dist,
            orientation,
            camera,
            lambda1,
            lambda2,
            out,
        } => {
            let d = load_distances(&dist)?;
            let o = load_distances(&orientation)?;
            let c = load_distances(&camera)?;
            let fused = fuse_distances(&d, &o, &c, lambda1, lambda2)?;
            save_distances(&fused, &out)?;
            println!("fused -> {}", out.display());
        }
        Command::Rerank {
            dist,
            qq,
            gg,
            k1,
            k2,
            lambda_jaccard,
            out,
        } => {
            let d = load_distances(&dist)?;
            let qq = load_distances(&qq)?;
            let gg = load_distances(&gg)?;
            let params = RerankParams {
                k1,
                k2,
                lambda: lambda_jaccard,
            };
            let r = k_reciprocal_rerank(&d, &qq, &gg, &params)?;
            save_distances(&r, &out)?;
            println!("reranked -> {}", out.display());
        }
        Command::Tracklet {
            features,
            manifest,
            tracklet_window,
            out,
        } => {
            let f = load_features(&features)?;
            let m = load_manifest(&manifest)?;
            let smoothed = tracklet_rerank(&f, &m, tracklet_window)?;
            save_features(&smoothed, &out)?;
            println!("smoothed {} rows -> {}", smoothed.rows(), out.display());
        }
        Command::Ensemble {
            ensemble_norm,
            out,
            members,
        } => {
            let mats = members
                .iter()
                .map(|p| load_distances(p))
                .collect::<Result<Vec<_>>>()?;
            let combined = ensemble_distances(&mats, ensemble_norm.parse::<EnsembleNorm>()?)?;
            save_distances(&combined, &out)?;
            println!("ensembled {} members -> {}", mats.len(), out.display());
        }
        Command::Eval {
            dist,
            query_manifest,
            gallery_manifest,
            cross_camera_filter,
            max_rank,
            truncate,
            csv,
        } => {
            let d = load_distances(&dist)?;
            let q = load_manifest(&query_manifest)?;
            let g = load_manifest(&gallery_manifest)?;
            let protocol = EvalProtocol {
                cross_camera_filter,
                truncate_at: truncate,
                max_rank,
                ..Default::default()
            };
            let report = evaluate(&d, &q, &g, &protocol)?;
            print!("{}", report_text(&report));
            if let Some(path) = csv {
                fs::write(path, per_query_csv(&report))?;
            }
        }
        Command::Pipeline { config, output_dir } => {
            let text = fs::read_to_string(&config)?;
            let map = parse_config(&text)?;
            let outcome = run_pipeline(&map, output_dir.as_deref())?;
            for artifact in &outcome.artifacts {
                println!("wrote {}", artifact.display());
            }
            if let Some(report) = &outcome.report {
                print!("{}", report_text(report));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
