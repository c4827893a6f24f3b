//! Run the multi-head attention embedding head forward and backward, then
//! confirm the analytic parameter gradient against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reidforge::featstore::FeatureMatrix;
use reidforge::gradcheck::{central_diff, max_relative_error};
use reidforge::reidnet::{init_head, multihead_backward, multihead_forward, HeadDims, HeadParams};

fn main() {
    let dims = HeadDims {
        input_dim: 8,
        head_dim: 4,
        heads: 3,
        classes: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = init_head(dims, &mut rng).unwrap();
    let x = FeatureMatrix::new(
        6,
        dims.input_dim,
        (0..6 * dims.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let cache = multihead_forward(&params, &x).unwrap();
    println!(
        "forward: {} inputs -> embeddings {}x{}, logits {}x{}",
        x.rows(),
        cache.embeddings().rows(),
        cache.embeddings().dim(),
        cache.logits().rows(),
        cache.logits().dim()
    );
    let attn: Vec<f64> = (0..dims.heads).map(|h| cache.attention(0, h)).collect();
    println!(
        "attention weights for sample 0: {:?} (sum = {:.6})",
        attn.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        attn.iter().sum::<f64>()
    );

    // scalar objective: dot the outputs against fixed coefficient matrices so
    // the backward pass gets dense upstream gradients
    let g_emb = FeatureMatrix::new(
        x.rows(),
        dims.head_dim,
        (0..x.rows() * dims.head_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let g_log = FeatureMatrix::new(
        x.rows(),
        dims.classes,
        (0..x.rows() * dims.classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let (grads, grad_input) = multihead_backward(&params, &cache, Some(&g_emb), Some(&g_log)).unwrap();

    let objective = |flat: &[f64]| {
        let p = HeadParams::from_flat(dims, flat.to_vec()).unwrap();
        let c = multihead_forward(&p, &x).unwrap();
        let mut total = 0.0;
        for (a, b) in c.embeddings().data().iter().zip(g_emb.data()) {
            total += a * b;
        }
        for (a, b) in c.logits().data().iter().zip(g_log.data()) {
            total += a * b;
        }
        total
    };
    let numeric = central_diff(params.flat(), 1e-5, objective);
    let err = max_relative_error(grads.flat(), &numeric);
    println!("parameter gradient: {} entries, max relative error vs finite differences = {err:.2e}", numeric.len());

    let input_objective = |flat: &[f64]| {
        let xs = FeatureMatrix::new(x.rows(), dims.input_dim, flat.to_vec()).unwrap();
        let c = multihead_forward(&params, &xs).unwrap();
        let mut total = 0.0;
        for (a, b) in c.embeddings().data().iter().zip(g_emb.data()) {
            total += a * b;
        }
        for (a, b) in c.logits().data().iter().zip(g_log.data()) {
            total += a * b;
        }
        total
    };
    let numeric_input = central_diff(x.data(), 1e-5, input_objective);
    let err_input = max_relative_error(grad_input.data(), &numeric_input);
    println!("input gradient: max relative error = {err_input:.2e}");
    assert!(err < 1e-6 && err_input < 1e-6);
}
