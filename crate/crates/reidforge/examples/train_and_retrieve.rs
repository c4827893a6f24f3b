//! End-to-end run on the synthetic benchmark: train the attention head with
//! combined identity + contrastive losses under the adaptive weight
//! schedule, embed held-out queries and gallery, then compare plain
//! retrieval with k-reciprocal re-ranking.

use reidforge::evalkit::{evaluate, EvalProtocol};
use reidforge::harness::{standard_benchmark, train_head, MetricLossKind, TrainConfig};
use reidforge::malw::{MalwConfig, MalwMode};
use reidforge::reidnet::embed;
use reidforge::retrieval::{k_reciprocal_rerank, pairwise_distance, Metric, RerankParams};

fn main() {
    let bench = standard_benchmark(0).unwrap();
    println!(
        "benchmark: {} train rows, {} queries, {} gallery rows, {} dims",
        bench.train.features.rows(),
        bench.query.features.rows(),
        bench.gallery.features.rows(),
        bench.train.features.dim()
    );

    let config = TrainConfig {
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
        malw: Some(MalwConfig {
            interval: 20,
            alpha: 0.6,
            mode: MalwMode::Ema,
        }),
        mixstyle: None,
        mixstyle_prob: 0.5,
        seed: 0,
    };
    let outcome = train_head(&bench.train, &config).unwrap();
    println!(
        "trained {} steps: id loss {:.3} -> {:.3}, metric loss {:.3} -> {:.3}, {} weight updates (final lambda_id {:.3})",
        outcome.id_losses.len(),
        outcome.id_losses.first().unwrap(),
        outcome.id_losses.last().unwrap(),
        outcome.metric_losses.first().unwrap(),
        outcome.metric_losses.last().unwrap(),
        outcome.malw_updates.len(),
        outcome.malw_updates.last().map_or(1.0, |u| u.lambda_id),
    );

    let qe = embed(&outcome.params, &bench.query.features).unwrap();
    let ge = embed(&outcome.params, &bench.gallery.features).unwrap();
    let dist = pairwise_distance(&qe, &ge, Metric::Euclidean).unwrap();

    let protocol = EvalProtocol::default();
    let plain = evaluate(&dist, &bench.query.manifest, &bench.gallery.manifest, &protocol).unwrap();

    let qq = pairwise_distance(&qe, &qe, Metric::Euclidean).unwrap();
    let gg = pairwise_distance(&ge, &ge, Metric::Euclidean).unwrap();
    let reranked = k_reciprocal_rerank(&dist, &qq, &gg, &RerankParams::default()).unwrap();
    let better = evaluate(&reranked, &bench.query.manifest, &bench.gallery.manifest, &protocol).unwrap();

    println!("\n                 mAP      rank-1");
    println!("plain          {:.4}    {:.4}", plain.map, plain.cmc[0]);
    println!("re-ranked      {:.4}    {:.4}", better.map, better.cmc[0]);
}
