//! Embedding model pieces: batch feature-statistics mixing and a multi-head
//! attention head with hand-derived gradients.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{Error, Result};
use crate::featstore::{self, FeatureMatrix};

// ── Feature-statistics mixing ──────────────────────────────────────────────

/// Per-channel first and second moments of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Column-wise mean and population standard deviation.
pub fn channel_stats(batch: &FeatureMatrix) -> ChannelStats {
    let rows = batch.rows() as f64;
    let dim = batch.dim();
    let mut mu = vec![0.0; dim];
    for r in 0..batch.rows() {
        for (c, v) in batch.row(r).iter().enumerate() {
            mu[c] += v;
        }
    }
    for m in &mut mu {
        *m /= rows;
    }
    let mut var = vec![0.0; dim];
    for r in 0..batch.rows() {
        for (c, v) in batch.row(r).iter().enumerate() {
            let d = v - mu[c];
            var[c] += d * d;
        }
    }
    let sigma = var.iter().map(|v| (v / rows).sqrt()).collect();
    ChannelStats { mu, sigma }
}

/// Settings for [`mixstyle`]: the Beta(alpha, alpha) shape used for the mix
/// coefficient and the epsilon added to the normalizing std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixStyleConfig {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for MixStyleConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 1e-6,
        }
    }
}

/// Draw the mix coefficient lambda ~ Beta(alpha, alpha).
pub fn sample_mix_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidParam {
        name: "alpha",
        msg: e.to_string(),
    })?;
    Ok(beta.sample(rng))
}

/// Blend the channel statistics of `batch` toward those of `partner`.
///
/// Each row is standardized against its own batch statistics and re-scaled
/// with the convex combination `lambda * stats(batch) +
/// (1 - lambda) * stats(partner)`:
///
/// ```text
/// out = sigma_mix * (x - mu(x)) / (sigma(x) + epsilon) + mu_mix
/// ```
///
/// With `lambda = 1` and `epsilon = 0` this is the identity on channels with
/// nonzero variance; a zero-variance channel then divides 0 by 0 and the
/// result is rejected as non-finite.
pub fn mixstyle(
    batch: &FeatureMatrix,
    partner: &FeatureMatrix,
    lambda: f64,
    epsilon: f64,
) -> Result<FeatureMatrix> {
    if batch.rows() != partner.rows() || batch.dim() != partner.dim() {
        return Err(Error::ShapeMismatch {
            context: "mixstyle",
            expected: (batch.rows(), batch.dim()),
            found: (partner.rows(), partner.dim()),
        });
    }
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::InvalidParam {
            name: "lambda",
            msg: format!("must lie in [0, 1], got {lambda}"),
        });
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidParam {
            name: "epsilon",
            msg: format!("must be >= 0, got {epsilon}"),
        });
    }
    let own = channel_stats(batch);
    let other = channel_stats(partner);
    let dim = batch.dim();
    let mut mu_mix = vec![0.0; dim];
    let mut sigma_mix = vec![0.0; dim];
    for c in 0..dim {
        mu_mix[c] = lambda * own.mu[c] + (1.0 - lambda) * other.mu[c];
        sigma_mix[c] = lambda * own.sigma[c] + (1.0 - lambda) * other.sigma[c];
    }
    let mut data = Vec::with_capacity(batch.rows() * dim);
    for r in 0..batch.rows() {
        for (c, v) in batch.row(r).iter().enumerate() {
            data.push(sigma_mix[c] * (v - own.mu[c]) / (own.sigma[c] + epsilon) + mu_mix[c]);
        }
    }
    FeatureMatrix::new(batch.rows(), dim, data)
}

// ── Multi-head attention head ──────────────────────────────────────────────

/// Shape of the head: `heads` parallel projections from `input_dim` down to
/// `head_dim`, attention-pooled, then classified into `classes` logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadDims {
    pub input_dim: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub classes: usize,
}

impl HeadDims {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("head_dim", self.head_dim),
            ("heads", self.heads),
            ("classes", self.classes),
        ] {
            if v == 0 {
                return Err(Error::InvalidParam {
                    name,
                    msg: "must be >= 1".into(),
                });
            }
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        let (d, dd, h, n) = (self.input_dim, self.head_dim, self.heads, self.classes);
        h * dd * d   // projection weights
            + h * dd // projection biases
            + h * dd // attention vectors
            + h      // attention biases
            + n * dd // classifier weights
            + n      // classifier biases
    }
}

/// All head parameters in one flat buffer, layout
/// `[proj_w | proj_b | attn_w | attn_b | cls_w | cls_b]`.
///
/// Gradients use the same type and layout, which keeps the SGD update and
/// finite-difference checks a plain loop over one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    dims: HeadDims,
    flat: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type HeadGradients = HeadParams;

impl HeadParams {
    pub fn zeros(dims: HeadDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            flat: vec![0.0; dims.param_count()],
            dims,
        })
    }

    pub fn from_flat(dims: HeadDims, flat: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if flat.len() != dims.param_count() {
            return Err(Error::InvalidParam {
                name: "flat",
                msg: format!("expected {} values, got {}", dims.param_count(), flat.len()),
            });
        }
        if let Some(index) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, flat })
    }

    pub fn dims(&self) -> HeadDims {
        self.dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    fn offsets(&self) -> [usize; 6] {
        let HeadDims {
            input_dim: d,
            head_dim: dd,
            heads: h,
            classes: n,
        } = self.dims;
        let proj_w = 0;
        let proj_b = proj_w + h * dd * d;
        let attn_w = proj_b + h * dd;
        let attn_b = attn_w + h * dd;
        let cls_w = attn_b + h;
        let cls_b = cls_w + n * dd;
        [proj_w, proj_b, attn_w, attn_b, cls_w, cls_b]
    }

    /// head `h` projection weights, `head_dim x input_dim` row-major
    pub fn proj_w(&self, h: usize) -> &[f64] {
        let [o, ..] = self.offsets();
        let len = self.dims.head_dim * self.dims.input_dim;
        &self.flat[o + h * len..o + (h + 1) * len]
    }

    pub fn proj_b(&self, h: usize) -> &[f64] {
        let [_, o, ..] = self.offsets();
        let len = self.dims.head_dim;
        &self.flat[o + h * len..o + (h + 1) * len]
    }

    pub fn attn_w(&self, h: usize) -> &[f64] {
        let [_, _, o, ..] = self.offsets();
        let len = self.dims.head_dim;
        &self.flat[o + h * len..o + (h + 1) * len]
    }

    pub fn attn_b(&self, h: usize) -> f64 {
        let [_, _, _, o, ..] = self.offsets();
        self.flat[o + h]
    }

    /// classifier weights, `classes x head_dim` row-major
    pub fn cls_w(&self) -> &[f64] {
        let [_, _, _, _, o, end] = self.offsets();
        &self.flat[o..end]
    }

    pub fn cls_b(&self) -> &[f64] {
        let [_, _, _, _, _, o] = self.offsets();
        &self.flat[o..]
    }

    fn fingerprint(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for v in &self.flat {
            acc = acc.rotate_left(7) ^ v.to_bits();
        }
        acc ^= (self.dims.input_dim as u64) << 48;
        acc ^= (self.dims.head_dim as u64) << 32;
        acc ^= (self.dims.heads as u64) << 16;
        acc ^= self.dims.classes as u64;
        acc
    }

    /// Serialize as a named-block container of per-tensor matrices.
    pub fn save<W: Write>(&self, sink: &mut W) -> Result<u64> {
        let HeadDims {
            input_dim: d,
            head_dim: dd,
            heads: h,
            classes: n,
        } = self.dims;
        let mut owned: Vec<(String, FeatureMatrix)> = Vec::new();
        for head in 0..h {
            owned.push((
                format!("head{head}.w"),
                FeatureMatrix::new(dd, d, self.proj_w(head).to_vec())?,
            ));
            owned.push((
                format!("head{head}.b"),
                FeatureMatrix::new(1, dd, self.proj_b(head).to_vec())?,
            ));
            owned.push((
                format!("attn{head}.w"),
                FeatureMatrix::new(1, dd, self.attn_w(head).to_vec())?,
            ));
            owned.push((
                format!("attn{head}.b"),
                FeatureMatrix::new(1, 1, vec![self.attn_b(head)])?,
            ));
        }
        owned.push((
            "classifier.w".to_string(),
            FeatureMatrix::new(n, dd, self.cls_w().to_vec())?,
        ));
        owned.push((
            "classifier.b".to_string(),
            FeatureMatrix::new(1, n, self.cls_b().to_vec())?,
        ));
        let borrowed: Vec<(&str, &FeatureMatrix)> =
            owned.iter().map(|(name, m)| (name.as_str(), m)).collect();
        featstore::write_named_blocks(&borrowed, sink)
    }

    /// Parse a container written by [`HeadParams::save`], rebuilding the
    /// dims from tensor shapes and checking consistency.
    pub fn load<R: Read>(source: &mut R) -> Result<Self> {
        let blocks = featstore::read_named_blocks(source)?;
        let lookup = |name: &str| -> Result<&FeatureMatrix> {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::InvalidHeader {
                    msg: format!("missing tensor {name}"),
                })
        };
        let heads = blocks
            .iter()
            .filter(|(n, _)| n.starts_with("head") && n.ends_with(".w"))
            .count();
        if heads == 0 {
            return Err(Error::InvalidHeader {
                msg: "no projection tensors".into(),
            });
        }
        let first = lookup("head0.w")?;
        let cls = lookup("classifier.w")?;
        let dims = HeadDims {
            input_dim: first.dim(),
            head_dim: first.rows(),
            heads,
            classes: cls.rows(),
        };
        let mut params = Self::zeros(dims)?;
        let expect = |m: &FeatureMatrix, rows: usize, cols: usize, name: &str| -> Result<()> {
            if m.rows() != rows || m.dim() != cols {
                return Err(Error::ShapeMismatch {
                    context: "head tensor",
                    expected: (rows, cols),
                    found: (m.rows(), m.dim()),
                });
            }
            let _ = name;
            Ok(())
        };
        let [proj_w, proj_b, attn_w, attn_b, cls_w, cls_b] = params.offsets();
        for h in 0..heads {
            let w = lookup(&format!("head{h}.w"))?;
            expect(w, dims.head_dim, dims.input_dim, "head.w")?;
            let len = dims.head_dim * dims.input_dim;
            params.flat[proj_w + h * len..proj_w + (h + 1) * len].copy_from_slice(w.data());

            let b = lookup(&format!("head{h}.b"))?;
            expect(b, 1, dims.head_dim, "head.b")?;
            params.flat[proj_b + h * dims.head_dim..proj_b + (h + 1) * dims.head_dim]
                .copy_from_slice(b.data());

            let aw = lookup(&format!("attn{h}.w"))?;
            expect(aw, 1, dims.head_dim, "attn.w")?;
            params.flat[attn_w + h * dims.head_dim..attn_w + (h + 1) * dims.head_dim]
                .copy_from_slice(aw.data());

            let ab = lookup(&format!("attn{h}.b"))?;
            expect(ab, 1, 1, "attn.b")?;
            params.flat[attn_b + h] = ab.at(0, 0);
        }
        expect(cls, dims.classes, dims.head_dim, "classifier.w")?;
        params.flat[cls_w..cls_w + dims.classes * dims.head_dim].copy_from_slice(cls.data());
        let cb = lookup("classifier.b")?;
        expect(cb, 1, dims.classes, "classifier.b")?;
        params.flat[cls_b..cls_b + dims.classes].copy_from_slice(cb.data());
        Ok(params)
    }
}

/// Seeded initialization: zero biases, weights ~ Normal(0, 1/sqrt(fan_in))
/// where fan_in is the tensor's input width.
pub fn init_head<R: Rng + ?Sized>(dims: HeadDims, rng: &mut R) -> Result<HeadParams> {
    let mut params = HeadParams::zeros(dims)?;
    let proj = Normal::new(0.0, 1.0 / (dims.input_dim as f64).sqrt()).unwrap();
    let inner = Normal::new(0.0, 1.0 / (dims.head_dim as f64).sqrt()).unwrap();
    let [proj_w, _, attn_w, _, cls_w, cls_b] = params.offsets();
    let proj_w_end = proj_w + dims.heads * dims.head_dim * dims.input_dim;
    for v in &mut params.flat_mut()[proj_w..proj_w_end] {
        *v = proj.sample(rng);
    }
    let attn_w_end = attn_w + dims.heads * dims.head_dim;
    for v in &mut params.flat_mut()[attn_w..attn_w_end] {
        *v = inner.sample(rng);
    }
    for v in &mut params.flat_mut()[cls_w..cls_b] {
        *v = inner.sample(rng);
    }
    Ok(params)
}

/// Intermediate activations from [`multihead_forward`], retained for the
/// backward pass. Tied to the exact parameter values that produced it.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: HeadDims,
    batch: usize,
    input: FeatureMatrix,
    /// batch x heads x head_dim
    projections: Vec<f64>,
    /// batch x heads, post-softmax
    attention: Vec<f64>,
    embeddings: FeatureMatrix,
    logits: FeatureMatrix,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &FeatureMatrix {
        &self.embeddings
    }

    pub fn logits(&self) -> &FeatureMatrix {
        &self.logits
    }

    /// Attention weight on head `h` for batch row `i`.
    pub fn attention(&self, i: usize, h: usize) -> f64 {
        self.attention[i * self.dims.heads + h]
    }

    fn projection(&self, i: usize, h: usize) -> &[f64] {
        let dd = self.dims.head_dim;
        let base = (i * self.dims.heads + h) * dd;
        &self.projections[base..base + dd]
    }
}

/// Run the head on a batch: per-head affine projections, a scalar attention
/// score per head, softmax over heads, attention-weighted sum of the
/// projections as the embedding, and classifier logits on top.
pub fn multihead_forward(params: &HeadParams, input: &FeatureMatrix) -> Result<ForwardCache> {
    let dims = params.dims();
    if input.dim() != dims.input_dim {
        return Err(Error::ShapeMismatch {
            context: "multihead input",
            expected: (input.rows(), dims.input_dim),
            found: (input.rows(), input.dim()),
        });
    }
    let batch = input.rows();
    let (dd, nheads, classes) = (dims.head_dim, dims.heads, dims.classes);
    let mut projections = vec![0.0; batch * nheads * dd];
    let mut attention = vec![0.0; batch * nheads];
    let mut emb = vec![0.0; batch * dd];
    let mut logits = vec![0.0; batch * classes];

    for i in 0..batch {
        let x = input.row(i);
        let mut scores = vec![0.0; nheads];
        for h in 0..nheads {
            let w = params.proj_w(h);
            let b = params.proj_b(h);
            let v = params.attn_w(h);
            let base = (i * nheads + h) * dd;
            let mut score = params.attn_b(h);
            for k in 0..dd {
                let mut acc = b[k];
                let wrow = &w[k * dims.input_dim..(k + 1) * dims.input_dim];
                for (wv, xv) in wrow.iter().zip(x) {
                    acc += wv * xv;
                }
                projections[base + k] = acc;
                score += v[k] * acc;
            }
            scores[h] = score;
        }
        // max-subtracted softmax over heads
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for h in 0..nheads {
            let e = (scores[h] - max).exp();
            attention[i * nheads + h] = e;
            denom += e;
        }
        for h in 0..nheads {
            attention[i * nheads + h] /= denom;
        }
        for h in 0..nheads {
            let a = attention[i * nheads + h];
            let base = (i * nheads + h) * dd;
            for k in 0..dd {
                emb[i * dd + k] += a * projections[base + k];
            }
        }
        let cw = params.cls_w();
        let cb = params.cls_b();
        for n in 0..classes {
            let mut acc = cb[n];
            for k in 0..dd {
                acc += cw[n * dd + k] * emb[i * dd + k];
            }
            logits[i * classes + n] = acc;
        }
    }

    Ok(ForwardCache {
        dims,
        batch,
        input: input.clone(),
        projections,
        attention,
        embeddings: FeatureMatrix::new(batch, dd, emb)?,
        logits: FeatureMatrix::new(batch, classes, logits)?,
        fingerprint: params.fingerprint(),
    })
}

/// Forward pass returning L2-normalized embeddings, the representation the
/// retrieval side consumes.
pub fn embed(params: &HeadParams, input: &FeatureMatrix) -> Result<FeatureMatrix> {
    let cache = multihead_forward(params, input)?;
    featstore::l2_normalize_rows(cache.embeddings())
}

/// Backpropagate loss gradients through the head.
///
/// `grad_embedding` (batch x head_dim) and `grad_logits` (batch x classes)
/// are each optional; a missing one contributes zero. Returns parameter
/// gradients in the [`HeadParams`] layout plus the gradient with respect to
/// the input batch. Rejects a cache built from different parameter values.
pub fn multihead_backward(
    params: &HeadParams,
    cache: &ForwardCache,
    grad_embedding: Option<&FeatureMatrix>,
    grad_logits: Option<&FeatureMatrix>,
) -> Result<(HeadGradients, FeatureMatrix)> {
    let dims = params.dims();
    if cache.dims != dims || cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    let batch = cache.batch;
    let (d, dd, nheads, classes) = (dims.input_dim, dims.head_dim, dims.heads, dims.classes);
    if let Some(g) = grad_embedding {
        if g.rows() != batch || g.dim() != dd {
            return Err(Error::ShapeMismatch {
                context: "grad_embedding",
                expected: (batch, dd),
                found: (g.rows(), g.dim()),
            });
        }
    }
    if let Some(g) = grad_logits {
        if g.rows() != batch || g.dim() != classes {
            return Err(Error::ShapeMismatch {
                context: "grad_logits",
                expected: (batch, classes),
                found: (g.rows(), g.dim()),
            });
        }
    }

    let mut grads = HeadParams::zeros(dims)?;
    let [proj_w_off, proj_b_off, attn_w_off, attn_b_off, cls_w_off, cls_b_off] = grads.offsets();
    let mut grad_input = vec![0.0; batch * d];
    let cls_w = params.cls_w().to_vec();

    for i in 0..batch {
        // embedding gradient = direct part + classifier part
        let mut grad_e = vec![0.0; dd];
        if let Some(g) = grad_embedding {
            grad_e.copy_from_slice(g.row(i));
        }
        if let Some(g) = grad_logits {
            let gl = g.row(i);
            for n in 0..classes {
                let gn = gl[n];
                // classifier parameter gradients
                grads.flat[cls_b_off + n] += gn;
                for k in 0..dd {
                    grads.flat[cls_w_off + n * dd + k] += gn * cache.embeddings.at(i, k);
                    grad_e[k] += gn * cls_w[n * dd + k];
                }
            }
        }

        // attention softmax backward
        let mut grad_a = vec![0.0; nheads];
        for h in 0..nheads {
            let p = cache.projection(i, h);
            grad_a[h] = grad_e.iter().zip(p).map(|(g, p)| g * p).sum();
        }
        let dot: f64 = (0..nheads).map(|h| cache.attention(i, h) * grad_a[h]).sum();
        let grad_s: Vec<f64> = (0..nheads)
            .map(|h| cache.attention(i, h) * (grad_a[h] - dot))
            .collect();

        let x = cache.input.row(i);
        for h in 0..nheads {
            let a = cache.attention(i, h);
            let p = cache.projection(i, h);
            let v = params.attn_w(h);
            // attention parameter gradients
            grads.flat[attn_b_off + h] += grad_s[h];
            for k in 0..dd {
                grads.flat[attn_w_off + h * dd + k] += grad_s[h] * p[k];
            }
            // projection gradient: pooled part + score part
            for k in 0..dd {
                let gp = a * grad_e[k] + grad_s[h] * v[k];
                grads.flat[proj_b_off + h * dd + k] += gp;
                let wrow_off = proj_w_off + h * dd * d + k * d;
                let wrow = &params.proj_w(h)[k * d..(k + 1) * d];
                for c in 0..d {
                    grads.flat[wrow_off + c] += gp * x[c];
                    grad_input[i * d + c] += gp * wrow[c];
                }
            }
        }
    }

    let grad_input = FeatureMatrix::new(batch, d, grad_input)?;
    Ok((grads, grad_input))
}
