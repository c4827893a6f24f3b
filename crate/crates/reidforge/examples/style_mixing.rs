//! Blend channel statistics between two batches and watch the means and
//! standard deviations interpolate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reidforge::featstore::FeatureMatrix;
use reidforge::reidnet::{channel_stats, mixstyle, sample_mix_lambda};

fn gaussian_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, mu: f64, sigma: f64) -> FeatureMatrix {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(mu, sigma).unwrap();
    let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
    FeatureMatrix::new(rows, dim, data).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = gaussian_batch(&mut rng, 64, 4, 0.0, 1.0);
    let partner = gaussian_batch(&mut rng, 64, 4, 5.0, 3.0);

    println!("batch   mu[0] = {:+.3}  sigma[0] = {:.3}", channel_stats(&batch).mu[0], channel_stats(&batch).sigma[0]);
    println!("partner mu[0] = {:+.3}  sigma[0] = {:.3}", channel_stats(&partner).mu[0], channel_stats(&partner).sigma[0]);

    for lambda in [1.0, 0.75, 0.5, 0.25, 0.0] {
        let mixed = mixstyle(&batch, &partner, lambda, 0.0).unwrap();
        let stats = channel_stats(&mixed);
        println!("lambda = {lambda:.2}  ->  mu[0] = {:+.3}  sigma[0] = {:.3}", stats.mu[0], stats.sigma[0]);
    }

    // lambda = 1 keeps the batch untouched
    let same = mixstyle(&batch, &partner, 1.0, 0.0).unwrap();
    let drift = batch
        .data()
        .iter()
        .zip(same.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("identity drift at lambda = 1: {drift:.2e}");

    // in training the coefficient is drawn from Beta(alpha, alpha), which for
    // small alpha concentrates near 0 and 1 (mostly keep or mostly swap)
    let draws: Vec<f64> = (0..8).map(|_| sample_mix_lambda(0.1, &mut rng).unwrap()).collect();
    println!("Beta(0.1, 0.1) draws: {:?}", draws.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
}
