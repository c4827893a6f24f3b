//! Feed two synthetic loss streams through the adaptive loss-weight schedule
//! and print how the identity-loss weight reacts to their volatility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reidforge::malw::{malw_init, malw_step, malw_trajectory, updates_to_csv, MalwConfig, MalwMode};

fn main() {
    let config = MalwConfig {
        interval: 50,
        alpha: 0.9,
        mode: MalwMode::Literal,
    };

    // noisy identity loss vs a calm metric loss: the schedule should shrink
    // the identity weight because its std dominates inside each window
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = malw_init(config).unwrap();
    for step in 0..400usize {
        let raw_id = 2.0 + rng.random_range(-1.0..1.0);
        let raw_metric = 1.5 + rng.random_range(-0.05..0.05);
        let weighted_id = raw_id * state.lambda_id();
        let weights = malw_step(&mut state, weighted_id, raw_metric).unwrap();
        if let Some(u) = weights.update {
            println!(
                "{:4}   (window {:2})  id_std = {:.3}  metric_std = {:.3}  ->  lambda_id = {:.4}",
                step, u.update_index, u.id_std, u.metric_std, u.lambda_id
            );
        }
    }
    println!("final weights: lambda_id = {:.4}, lambda_metric = {:.4} (metric side is pinned to 1)", state.lambda_id(), state.lambda_metric());

    // when the identity loss is the quieter stream the weight must hold at 1
    let steady_id: Vec<f64> = (0..200).map(|i| 1.0 + 0.001 * ((i % 2) as f64)).collect();
    let wild_metric: Vec<f64> = (0..200).map(|i| 1.0 + 0.8 * ((i % 3) as f64)).collect();
    let updates = malw_trajectory(config, &steady_id, &wild_metric).unwrap();
    let held = updates.iter().all(|u| u.lambda_id == 1.0);
    println!("\nquiet identity stream: {} updates, weight held at 1.0: {held}", updates.len());

    print!("\nupdate log as CSV:\n{}", updates_to_csv(&updates[..3.min(updates.len())]));
}
