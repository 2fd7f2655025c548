//! Stage-batched forward/backward over a batch of (original, augmented)
//! pairs, and the consistency + entropy loss.
//!
//! Convolution stages run per image (parallel over contiguous chunks);
//! fully connected stages run as one GEMM over the whole batch. Gradients
//! accumulate per chunk and merge in chunk order, so results are
//! deterministic for a fixed worker count.

use rayon::prelude::*;

use super::layers::{
    conv_backward, conv_forward, maxpool2_backward, maxpool2_forward, neg_entropy, relu, softmax,
};
use super::{ArchDescriptor, ModelParams, ParamBlocks};
use crate::error::{AtlasError, Result};
use crate::linalg::dgemm_acc;

/// Per-image activations kept for the backward pass.
///
/// `layer_inputs[0]` is the image tensor; `layer_inputs[i]` for i ≥ 1 is the
/// input to conv i (the post-ReLU, post-pool output of conv i−1); the last
/// entry is the flattened input to the FC stack. ReLU masks are recovered
/// from these (a post-ReLU value is positive iff the unit was active), so no
/// separate masks are stored. Buffers are reused across batches.
#[derive(Default)]
pub struct ConvCache {
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pool argmax per conv layer; empty for layers without a pool.
    pub pool_idx: Vec<Vec<u8>>,
}

/// Reusable large scratch buffers for one worker.
#[derive(Default)]
pub struct ConvWorkspace {
    im2col: Vec<f64>,
    conv_out: Vec<f64>,
    d_cols: Vec<f64>,
    d_a: Vec<f64>,
    d_b: Vec<f64>,
}

fn fill(dst: &mut Vec<f64>, src: &[f64]) {
    dst.clear();
    dst.extend_from_slice(src);
}

/// Run the convolutional stack on one image tensor; the flatten row ends up
/// as the last cache entry.
pub fn conv_stage_forward(
    params: &ModelParams,
    input: &[f64],
    cache: &mut ConvCache,
    ws: &mut ConvWorkspace,
) {
    let d = &params.descriptor;
    let n_layers = d.convs.len();
    cache.layer_inputs.resize_with(n_layers + 1, Vec::new);
    cache.pool_idx.resize_with(n_layers, Vec::new);
    fill(&mut cache.layer_inputs[0], input);

    let (mut h, mut w) = (d.input.1, d.input.2);
    for (layer, conv) in d.convs.iter().enumerate() {
        let (inputs, outputs) = cache.layer_inputs.split_at_mut(layer + 1);
        let cur = &inputs[layer];
        let (oh, ow) = conv_forward(
            cur,
            h,
            w,
            conv,
            params.conv_weights(layer),
            params.conv_bias(layer),
            &mut ws.im2col,
            &mut ws.conv_out,
        );
        if d.pool_after[layer] {
            let (ph, pw) = maxpool2_forward(
                &ws.conv_out,
                conv.out_ch,
                oh,
                ow,
                &mut outputs[0],
                &mut cache.pool_idx[layer],
            );
            h = ph;
            w = pw;
        } else {
            cache.pool_idx[layer].clear();
            fill(&mut outputs[0], &ws.conv_out);
            h = oh;
            w = ow;
        }
    }
}

/// Backward through the convolutional stack for one image.
///
/// `d_flat` is the gradient at the flatten row. The input gradient of the
/// first conv is never materialized (nothing upstream needs it).
pub fn conv_stage_backward(
    params: &ModelParams,
    cache: &ConvCache,
    d_flat: &[f64],
    grads: &mut ParamBlocks,
    ws: &mut ConvWorkspace,
) {
    let d = &params.descriptor;
    let trace = d.trace();
    fill(&mut ws.d_a, d_flat);

    for layer in (0..d.convs.len()).rev() {
        let conv = &d.convs[layer];
        let (_, in_h, in_w) = trace[layer];
        let out_h = conv.out_size(in_h);
        let out_w = conv.out_size(in_w);
        let post = &cache.layer_inputs[layer + 1];

        // ReLU mask at the post-activation values, then undo the pool.
        for (g, &v) in ws.d_a.iter_mut().zip(post.iter()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        if d.pool_after[layer] {
            ws.d_b.resize(conv.out_ch * out_h * out_w, 0.0);
            maxpool2_backward(
                &ws.d_a,
                &cache.pool_idx[layer],
                conv.out_ch,
                out_h,
                out_w,
                &mut ws.d_b,
            );
            std::mem::swap(&mut ws.d_a, &mut ws.d_b);
        }

        let (wb, bb) = conv_block_indices(d, layer);
        let needs_input_grad = layer > 0;
        if needs_input_grad {
            ws.d_b.resize(trace[layer].0 * in_h * in_w, 0.0);
        }
        {
            let (head, tail) = grads.blocks.split_at_mut(bb);
            conv_backward(
                &cache.layer_inputs[layer],
                in_h,
                in_w,
                conv,
                params.conv_weights(layer),
                &ws.d_a,
                &mut head[wb],
                &mut tail[0],
                &mut ws.im2col,
                &mut ws.d_cols,
                needs_input_grad.then_some(ws.d_b.as_mut_slice()),
            );
        }
        if needs_input_grad {
            std::mem::swap(&mut ws.d_a, &mut ws.d_b);
        }
    }
}

fn conv_block_indices(_d: &ArchDescriptor, layer: usize) -> (usize, usize) {
    (2 * layer, 2 * layer + 1)
}

fn fc_block_indices(d: &ArchDescriptor, layer: usize) -> (usize, usize) {
    let base = 2 * d.convs.len();
    (base + 2 * layer, base + 2 * layer + 1)
}

/// A batch of (original, augmented) image tensors.
pub struct PairBatch {
    pub originals: Vec<Vec<f64>>,
    pub augmented: Vec<Vec<f64>>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }
}

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDiagnostics {
    /// Σ over pairs of the Euclidean embedding distance.
    pub consistency: f64,
    /// λ·Σ_c Φ′_c ln Φ′_c (≤ 0, floored at −λ·ln n).
    pub entropy_term: f64,
}

impl LossDiagnostics {
    pub fn total(&self) -> f64 {
        self.consistency + self.entropy_term
    }
}

struct FcForward {
    /// Post-activation matrix per FC layer (last = pre-softmax embeddings).
    activations: Vec<Vec<f64>>,
}

fn fc_stage_forward(params: &ModelParams, flat: &[f64], n_rows: usize) -> FcForward {
    let d = &params.descriptor;
    let fc_dims = d.fc_dims();
    let mut activations = Vec::with_capacity(fc_dims.len());
    let mut cur: &[f64] = flat;
    let mut cur_width = d.flatten_len();
    for (layer, &(fan_in, fan_out)) in fc_dims.iter().enumerate() {
        debug_assert_eq!(cur_width, fan_in);
        let bias = params.fc_bias(layer);
        let mut z = vec![0.0; n_rows * fan_out];
        for row in 0..n_rows {
            z[row * fan_out..(row + 1) * fan_out].copy_from_slice(bias);
        }
        dgemm_acc(
            false,
            true,
            n_rows,
            fan_out,
            fan_in,
            1.0,
            cur,
            params.fc_weights(layer),
            1.0,
            &mut z,
        );
        if layer + 1 < fc_dims.len() {
            relu(&mut z);
        }
        activations.push(z);
        cur_width = fan_out;
        cur = activations.last().unwrap();
    }
    FcForward { activations }
}

/// Loss over embeddings plus its gradient dL/dE.
///
/// Rows 0..P of `embeddings` are the originals, rows P..2P the augmented
/// copies. The consistency term couples pair rows; the entropy term runs
/// over the originals only.
fn loss_and_embedding_grad(
    embeddings: &[f64],
    n_pairs: usize,
    dim: usize,
    lambda: f64,
) -> (LossDiagnostics, Vec<f64>) {
    let mut d_e = vec![0.0; embeddings.len()];
    let mut consistency = 0.0;
    for i in 0..n_pairs {
        let a = &embeddings[i * dim..(i + 1) * dim];
        let b = &embeddings[(n_pairs + i) * dim..(n_pairs + i + 1) * dim];
        let dist: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        consistency += dist;
        if dist > 0.0 {
            for c in 0..dim {
                let g = (a[c] - b[c]) / dist;
                d_e[i * dim + c] += g;
                d_e[(n_pairs + i) * dim + c] -= g;
            }
        }
    }

    // Φ′ = batch mean over originals of softmax(embedding).
    let mut softmaxes = Vec::with_capacity(n_pairs);
    let mut phi = vec![0.0; dim];
    for i in 0..n_pairs {
        let s = softmax(&embeddings[i * dim..(i + 1) * dim]);
        for (acc, &v) in phi.iter_mut().zip(&s) {
            *acc += v / n_pairs as f64;
        }
        softmaxes.push(s);
    }
    let entropy_term = lambda * neg_entropy(&phi);

    if lambda != 0.0 {
        // d(Σ φ ln φ)/dE_i = softmaxᵀ-Jacobian applied to (ln φ + 1)/P.
        let g: Vec<f64> = phi
            .iter()
            .map(|&p| lambda * (p.ln() + 1.0) / n_pairs as f64)
            .collect();
        for i in 0..n_pairs {
            let s = &softmaxes[i];
            let dot: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
            for c in 0..dim {
                d_e[i * dim + c] += s[c] * (g[c] - dot);
            }
        }
    }

    (
        LossDiagnostics {
            consistency,
            entropy_term,
        },
        d_e,
    )
}

/// Reusable batch-level buffers: per-image caches, the flatten matrix, and
/// one conv workspace per worker chunk.
#[derive(Default)]
pub struct BatchWorkspace {
    caches: Vec<ConvCache>,
    flat: Vec<f64>,
    chunk_ws: Vec<ConvWorkspace>,
}

/// Forward-only batch loss (Eq.-style consistency + entropy objective).
pub fn batch_loss(params: &ModelParams, batch: &PairBatch, lambda: f64) -> Result<LossDiagnostics> {
    let mut ws = BatchWorkspace::default();
    let (diag, _) = run_batch(params, batch, lambda, 1, false, &mut ws)?;
    Ok(diag)
}

/// Loss and exact reverse-mode gradients for every parameter block.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &PairBatch,
    lambda: f64,
    workers: usize,
) -> Result<(LossDiagnostics, ParamBlocks)> {
    let mut ws = BatchWorkspace::default();
    batch_gradients_ws(params, batch, lambda, workers, &mut ws)
}

/// Gradient computation with caller-owned reusable buffers (training loop).
pub fn batch_gradients_ws(
    params: &ModelParams,
    batch: &PairBatch,
    lambda: f64,
    workers: usize,
    ws: &mut BatchWorkspace,
) -> Result<(LossDiagnostics, ParamBlocks)> {
    let (diag, grads) = run_batch(params, batch, lambda, workers, true, ws)?;
    let grads = grads.expect("gradients requested");
    if !grads.all_finite() {
        let layer = first_non_finite_block(&params.descriptor, &grads);
        return Err(AtlasError::NonFiniteGradient { layer });
    }
    Ok((diag, grads))
}

fn first_non_finite_block(d: &ArchDescriptor, grads: &ParamBlocks) -> String {
    for (idx, block) in grads.blocks.iter().enumerate() {
        if block.iter().any(|v| !v.is_finite()) {
            return block_name(d, idx);
        }
    }
    "unknown".to_string()
}

/// Human-readable name of a parameter block.
pub fn block_name(d: &ArchDescriptor, idx: usize) -> String {
    let n_conv_blocks = 2 * d.convs.len();
    if idx < n_conv_blocks {
        let layer = idx / 2;
        if idx % 2 == 0 {
            format!("conv{layer}.weight")
        } else {
            format!("conv{layer}.bias")
        }
    } else {
        let layer = (idx - n_conv_blocks) / 2;
        if (idx - n_conv_blocks) % 2 == 0 {
            format!("fc{layer}.weight")
        } else {
            format!("fc{layer}.bias")
        }
    }
}

fn run_batch(
    params: &ModelParams,
    batch: &PairBatch,
    lambda: f64,
    workers: usize,
    compute_grads: bool,
    ws: &mut BatchWorkspace,
) -> Result<(LossDiagnostics, Option<ParamBlocks>)> {
    if batch.is_empty() {
        return Err(AtlasError::Model("empty batch".to_string()));
    }
    if batch.originals.len() != batch.augmented.len() {
        return Err(AtlasError::Model(
            "originals and augmented counts differ".to_string(),
        ));
    }
    let d = &params.descriptor;
    let n_pairs = batch.len();
    let n_img = 2 * n_pairs;
    let flat_len = d.flatten_len();
    let dim = d.embedding_dim;

    let images: Vec<&[f64]> = batch
        .originals
        .iter()
        .map(|t| t.as_slice())
        .chain(batch.augmented.iter().map(|t| t.as_slice()))
        .collect();

    // Conv stage, chunked over images. Caches and workspaces persist across
    // batches; the flatten matrix is sliced per chunk so workers write
    // disjoint regions.
    let workers = workers.max(1);
    let chunk_size = n_img.div_ceil(workers);
    ws.caches.resize_with(n_img.max(ws.caches.len()), ConvCache::default);
    let n_chunks = n_img.div_ceil(chunk_size);
    ws.chunk_ws
        .resize_with(n_chunks.max(ws.chunk_ws.len()), ConvWorkspace::default);
    ws.flat.resize(n_img * flat_len, 0.0);

    {
        let cache_slots = &mut ws.caches[..n_img];
        let flat = &mut ws.flat[..n_img * flat_len];
        images
            .par_chunks(chunk_size)
            .zip(cache_slots.par_chunks_mut(chunk_size))
            .zip(flat.par_chunks_mut(chunk_size * flat_len))
            .zip(ws.chunk_ws[..n_chunks].par_iter_mut())
            .for_each(|(((imgs, caches), flat_rows), conv_ws)| {
                for (j, &img) in imgs.iter().enumerate() {
                    conv_stage_forward(params, img, &mut caches[j], conv_ws);
                    flat_rows[j * flat_len..(j + 1) * flat_len]
                        .copy_from_slice(caches[j].layer_inputs.last().unwrap());
                }
            });
    }
    let flat_matrix = &ws.flat[..n_img * flat_len];

    // FC stage over the whole batch.
    let fc = fc_stage_forward(params, flat_matrix, n_img);
    let embeddings = fc.activations.last().unwrap();
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(AtlasError::NonFinite {
            context: "embedding forward pass".to_string(),
        });
    }

    let (diag, d_e) = loss_and_embedding_grad(embeddings, n_pairs, dim, lambda);
    if !compute_grads {
        return Ok((diag, None));
    }

    // FC backward over the batch.
    let mut grads = ParamBlocks::zeros_like(d);
    let fc_dims = d.fc_dims();
    let mut d_z = d_e;
    for layer in (0..fc_dims.len()).rev() {
        let (fan_in, fan_out) = fc_dims[layer];
        let prev: &[f64] = if layer == 0 {
            &flat_matrix
        } else {
            &fc.activations[layer - 1]
        };
        let (wb, bb) = fc_block_indices(d, layer);
        dgemm_acc(
            true,
            false,
            fan_out,
            fan_in,
            n_img,
            1.0,
            &d_z,
            prev,
            1.0,
            &mut grads.blocks[wb],
        );
        for row in 0..n_img {
            for c in 0..fan_out {
                grads.blocks[bb][c] += d_z[row * fan_out + c];
            }
        }
        // Gradient for the previous activation.
        let mut d_prev = vec![0.0; n_img * fan_in];
        dgemm_acc(
            false,
            false,
            n_img,
            fan_in,
            fan_out,
            1.0,
            &d_z,
            params.fc_weights(layer),
            0.0,
            &mut d_prev,
        );
        if layer > 0 {
            for (g, &v) in d_prev.iter_mut().zip(prev.iter()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        d_z = d_prev;
    }
    let d_flat = d_z; // n_img × flat_len

    // Conv backward, chunked; per-chunk accumulators merged in order.
    let chunk_grads: Vec<ParamBlocks> = caches
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut local = ParamBlocks::zeros_like(d);
            for (j, cache) in chunk.iter().enumerate() {
                let img_idx = chunk_idx * chunk_size + j;
                let row = &d_flat[img_idx * flat_len..(img_idx + 1) * flat_len];
                conv_stage_backward(params, cache, row, &mut local);
            }
            local
        })
        .collect();
    for chunk in chunk_grads {
        grads.add_assign(&chunk);
    }

    Ok((diag, Some(grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, ArchDescriptor, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(d: &ArchDescriptor, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..d.input.0 * d.input.1 * d.input.2)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect()
    }

    fn small_batch(d: &ArchDescriptor, n_pairs: usize, seed: u64) -> PairBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairBatch {
            originals: (0..n_pairs).map(|_| random_tensor(d, &mut rng)).collect(),
            augmented: (0..n_pairs).map(|_| random_tensor(d, &mut rng)).collect(),
        }
    }

    #[test]
    fn batched_fc_matches_single_image_forward() {
        let d = ArchDescriptor::reduced(4);
        let params = ModelParams::init(d.clone(), 3).unwrap();
        let batch = small_batch(&d, 3, 11);
        let (_, _) = run_batch(&params, &batch, 1.0, 2, false).unwrap();
        // The batched embeddings must equal the per-image forward exactly.
        let images: Vec<&Vec<f64>> = batch
            .originals
            .iter()
            .chain(batch.augmented.iter())
            .collect();
        let flat: Vec<f64> = images
            .iter()
            .flat_map(|img| {
                let mut c = ConvCache::default();
                conv_stage_forward(&params, img, &mut c)
            })
            .collect();
        let fc = fc_stage_forward(&params, &flat, images.len());
        let emb = fc.activations.last().unwrap();
        for (i, img) in images.iter().enumerate() {
            let single = forward(&params, img).unwrap();
            for c in 0..4 {
                assert!(
                    (single[c] - emb[i * 4 + c]).abs() < 1e-12,
                    "image {i} component {c}"
                );
            }
        }
    }

    #[test]
    fn identity_pairs_have_zero_consistency() {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::init(d.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let originals: Vec<Vec<f64>> = (0..4).map(|_| random_tensor(&d, &mut rng)).collect();
        let batch = PairBatch {
            augmented: originals.clone(),
            originals,
        };
        let diag = batch_loss(&params, &batch, 1.0).unwrap();
        assert_eq!(diag.consistency, 0.0);
        // Entropy floor: λ(−ln n) ≤ term ≤ 0.
        assert!(diag.entropy_term >= -(3.0_f64.ln()) - 1e-12);
        assert!(diag.entropy_term <= 0.0);
    }

    #[test]
    fn loss_floor_holds_on_random_batches() {
        let d = ArchDescriptor::reduced(5);
        let params = ModelParams::init(d.clone(), 2).unwrap();
        for seed in 0..20 {
            let batch = small_batch(&d, 3, seed);
            let lambda = 0.5 + (seed % 3) as f64;
            let diag = batch_loss(&params, &batch, lambda).unwrap();
            assert!(
                diag.total() >= lambda * -(5.0_f64.ln()) - 1e-10,
                "total {} below floor",
                diag.total()
            );
        }
    }

    #[test]
    fn duplicating_pairs_doubles_consistency_gradient() {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::init(d.clone(), 9).unwrap();
        let batch = small_batch(&d, 2, 77);
        let doubled = PairBatch {
            originals: [batch.originals.clone(), batch.originals.clone()].concat(),
            augmented: [batch.augmented.clone(), batch.augmented.clone()].concat(),
        };
        // λ = 0 isolates the consistency term (the entropy term is not
        // homogeneous in batch size).
        let (diag1, g1) = batch_gradients(&params, &batch, 0.0, 1).unwrap();
        let (diag2, g2) = batch_gradients(&params, &doubled, 0.0, 1).unwrap();
        assert!((diag2.consistency - 2.0 * diag1.consistency).abs() < 1e-9);
        for (a, b) in g1.blocks.iter().zip(&g2.blocks) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradients_deterministic_across_worker_counts_with_fixed_chunks() {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::init(d.clone(), 4).unwrap();
        let batch = small_batch(&d, 4, 8);
        let (_, g1) = batch_gradients(&params, &batch, 1.0, 1).unwrap();
        let (_, g1b) = batch_gradients(&params, &batch, 1.0, 1).unwrap();
        assert_eq!(g1, g1b);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::zeros(d).unwrap();
        let batch = PairBatch {
            originals: vec![],
            augmented: vec![],
        };
        assert!(batch_loss(&params, &batch, 1.0).is_err());
    }

    #[test]
    fn entropy_gradient_matches_finite_differences_at_embedding_level() {
        // Check d(Σ φ ln φ)/dE directly against central differences.
        let n_pairs = 3;
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let embeddings: Vec<f64> = (0..2 * n_pairs * dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let lambda = 0.7;
        let (_, grad) = loss_and_embedding_grad(&embeddings, n_pairs, dim, lambda);
        let h = 1e-6;
        for idx in 0..embeddings.len() {
            let mut plus = embeddings.clone();
            plus[idx] += h;
            let mut minus = embeddings.clone();
            minus[idx] -= h;
            let (dp, _) = loss_and_embedding_grad(&plus, n_pairs, dim, lambda);
            let (dm, _) = loss_and_embedding_grad(&minus, n_pairs, dim, lambda);
            let fd = (dp.total() - dm.total()) / (2.0 * h);
            assert!(
                (fd - grad[idx]).abs() < 1e-6,
                "component {idx}: fd {fd} vs analytic {}",
                grad[idx]
            );
        }
    }
}
