//! The embedding network: architecture descriptor, parameters, forward pass,
//! loss and gradients, Adam, and the training loop.

pub mod adam;
pub mod batch;
pub mod layers;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};
pub use layers::{neg_entropy, relu, softmax, ConvSpec};

/// Architecture descriptor: conv stack (ReLU after each, optional 2×2 pool),
/// then fully connected layers with ReLU between, ending at `embedding_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Input shape (channels, height, width).
    pub input: (usize, usize, usize),
    pub convs: Vec<ConvSpec>,
    /// One flag per conv: apply a 2×2 stride-2 max pool after its ReLU.
    pub pool_after: Vec<bool>,
    /// Hidden widths of the fully connected stack.
    pub fc_hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl ArchDescriptor {
    /// The production architecture for 3×150×150 images:
    /// conv(3→16, k5 s1) → pool → conv(16→32, k5 s1) → pool →
    /// conv(32→64, k2 s2 p1) → FC(20736→128) → FC(128→n).
    pub fn standard(embedding_dim: usize) -> Self {
        ArchDescriptor {
            input: (3, 150, 150),
            convs: vec![
                ConvSpec {
                    in_ch: 3,
                    out_ch: 16,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                ConvSpec {
                    in_ch: 16,
                    out_ch: 32,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                ConvSpec {
                    in_ch: 32,
                    out_ch: 64,
                    kernel: 2,
                    stride: 2,
                    padding: 1,
                },
            ],
            pool_after: vec![true, true, false],
            fc_hidden: vec![128],
            embedding_dim,
        }
    }

    /// Small descriptor for gradient checks: same topology on 3×20×20 input
    /// with narrow channels.
    pub fn reduced(embedding_dim: usize) -> Self {
        ArchDescriptor {
            input: (3, 20, 20),
            convs: vec![
                ConvSpec {
                    in_ch: 3,
                    out_ch: 4,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                ConvSpec {
                    in_ch: 4,
                    out_ch: 6,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                ConvSpec {
                    in_ch: 6,
                    out_ch: 8,
                    kernel: 2,
                    stride: 2,
                    padding: 1,
                },
            ],
            pool_after: vec![true, true, false],
            fc_hidden: vec![16],
            embedding_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(AtlasError::Model(format!(
                "embedding_dim must be ≥ 2, got {}",
                self.embedding_dim
            )));
        }
        if self.convs.len() != self.pool_after.len() {
            return Err(AtlasError::Model(
                "pool_after length must match conv count".to_string(),
            ));
        }
        let mut ch = self.input.0;
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.in_ch != ch {
                return Err(AtlasError::Model(format!(
                    "conv {i} expects {} input channels, previous layer provides {ch}",
                    conv.in_ch
                )));
            }
            ch = conv.out_ch;
        }
        Ok(())
    }

    /// Spatial sizes after each conv (+pool): [(ch, h, w), ...], starting
    /// with the input shape.
    pub fn trace(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![self.input];
        let (mut h, mut w) = (self.input.1, self.input.2);
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            h = conv.out_size(h);
            w = conv.out_size(w);
            if pool {
                h /= 2;
                w /= 2;
            }
            shapes.push((conv.out_ch, h, w));
        }
        shapes
    }

    pub fn flatten_len(&self) -> usize {
        let (c, h, w) = *self.trace().last().unwrap();
        c * h * w
    }

    /// FC layer dimensions: (in, out) per layer including the output layer.
    pub fn fc_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut cur = self.flatten_len();
        for &hidden in &self.fc_hidden {
            dims.push((cur, hidden));
            cur = hidden;
        }
        dims.push((cur, self.embedding_dim));
        dims
    }

    /// Parameter block sizes in declared order:
    /// conv₀ W, conv₀ b, conv₁ W, conv₁ b, …, fc₀ W, fc₀ b, ….
    pub fn block_shapes(&self) -> Vec<usize> {
        let mut shapes = Vec::new();
        for conv in &self.convs {
            shapes.push(conv.weight_len());
            shapes.push(conv.out_ch);
        }
        for (fan_in, fan_out) in self.fc_dims() {
            shapes.push(fan_in * fan_out);
            shapes.push(fan_out);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.block_shapes().iter().sum()
    }
}

/// A set of tensors with the block structure of the model parameters.
/// Gradients and Adam moments share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlocks {
    pub blocks: Vec<Vec<f64>>,
}

impl ParamBlocks {
    pub fn zeros_like(descriptor: &ArchDescriptor) -> Self {
        ParamBlocks {
            blocks: descriptor
                .block_shapes()
                .iter()
                .map(|&len| vec![0.0; len])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamBlocks) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks.iter_mut() {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flat_map(|b| b.iter().copied())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }
}

/// Trainable parameters θ: conv kernels and FC weights/biases, stored as
/// flat blocks in descriptor order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub descriptor: ArchDescriptor,
    pub blocks: ParamBlocks,
}

impl ModelParams {
    /// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
    pub fn init(descriptor: ArchDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        for conv in &descriptor.convs {
            let fan_in = conv.in_ch * conv.kernel * conv.kernel;
            let fan_out = conv.out_ch * conv.kernel * conv.kernel;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            blocks.push(
                (0..conv.weight_len())
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            );
            blocks.push(vec![0.0; conv.out_ch]);
        }
        for (fan_in, fan_out) in descriptor.fc_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            blocks.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            );
            blocks.push(vec![0.0; fan_out]);
        }
        Ok(ModelParams {
            descriptor,
            blocks: ParamBlocks { blocks },
        })
    }

    /// All-zero parameters (used by tests).
    pub fn zeros(descriptor: ArchDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let blocks = ParamBlocks::zeros_like(&descriptor);
        Ok(ModelParams { descriptor, blocks })
    }

    pub fn conv_weights(&self, layer: usize) -> &[f64] {
        &self.blocks.blocks[2 * layer]
    }

    pub fn conv_bias(&self, layer: usize) -> &[f64] {
        &self.blocks.blocks[2 * layer + 1]
    }

    pub fn fc_weights(&self, layer: usize) -> &[f64] {
        &self.blocks.blocks[2 * self.descriptor.convs.len() + 2 * layer]
    }

    pub fn fc_bias(&self, layer: usize) -> &[f64] {
        &self.blocks.blocks[2 * self.descriptor.convs.len() + 2 * layer + 1]
    }
}

/// Embedding of one image, pre-softmax, tagged with its manifest id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub id: String,
}

/// Convert an RGB8 image to the (C, H, W) f64 tensor in [0, 1].
pub fn image_to_tensor(img: &image::RgbImage) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let mut out = vec![0.0; 3 * (w * h) as usize];
    let plane = (w * h) as usize;
    for (y, row) in img.rows().enumerate() {
        for (x, px) in row.enumerate() {
            let base = y * w as usize + x;
            out[base] = px.0[0] as f64 / 255.0;
            out[plane + base] = px.0[1] as f64 / 255.0;
            out[2 * plane + base] = px.0[2] as f64 / 255.0;
        }
    }
    out
}

/// Forward pass of a single image tensor (C·H·W, row-major planes).
///
/// Returns the pre-softmax embedding. The batched training path in
/// [`batch`] produces identical values; this entry point exists for
/// one-off embedding and tests.
pub fn forward(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    let d = &params.descriptor;
    let expected = d.input.0 * d.input.1 * d.input.2;
    if input.len() != expected {
        return Err(AtlasError::Model(format!(
            "input length {} does not match descriptor ({} = {:?})",
            input.len(),
            expected,
            d.input
        )));
    }
    let mut cache = batch::ConvCache::default();
    let flat = batch::conv_stage_forward(params, input, &mut cache);
    // FC stack on a single row.
    let mut cur = flat;
    let fc_dims = d.fc_dims();
    for (layer, &(fan_in, fan_out)) in fc_dims.iter().enumerate() {
        let w = params.fc_weights(layer);
        let b = params.fc_bias(layer);
        let mut next = b.to_vec();
        crate::linalg::dgemm_acc(false, true, 1, fan_out, fan_in, 1.0, &cur, w, 1.0, &mut next);
        if layer + 1 < fc_dims.len() {
            relu(&mut next);
        }
        cur = next;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_descriptor_spatial_trace() {
        let d = ArchDescriptor::standard(5);
        d.validate().unwrap();
        // 150 → conv5 → 146 → pool → 73 → conv5 → 69 → pool → 34 → conv2s2p1 → 18
        assert_eq!(
            d.trace(),
            vec![(3, 150, 150), (16, 73, 73), (32, 34, 34), (64, 18, 18)]
        );
        assert_eq!(d.flatten_len(), 64 * 18 * 18);
        assert_eq!(d.flatten_len(), 20736);
        assert_eq!(d.fc_dims(), vec![(20736, 128), (128, 5)]);
    }

    #[test]
    fn reduced_descriptor_is_consistent() {
        let d = ArchDescriptor::reduced(3);
        d.validate().unwrap();
        // 20 → conv5 → 16 → pool → 8 → conv5 → 4 → pool → 2 → conv2s2p1 → 2
        assert_eq!(d.trace().last().unwrap(), &(8, 2, 2));
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let d = ArchDescriptor::reduced(3);
        let params = ModelParams::zeros(d.clone()).unwrap();
        let input = vec![0.7; d.input.0 * d.input.1 * d.input.2];
        let e = forward(&params, &input).unwrap();
        assert_eq!(e, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let d = ArchDescriptor::reduced(4);
        let params = ModelParams::init(d.clone(), 7).unwrap();
        let input: Vec<f64> = (0..d.input.0 * d.input.1 * d.input.2)
            .map(|i| (i % 255) as f64 / 255.0)
            .collect();
        let a = forward(&params, &input).unwrap();
        let b = forward(&params, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_seed_reproducible_and_bounded() {
        let d = ArchDescriptor::reduced(3);
        let a = ModelParams::init(d.clone(), 5).unwrap();
        let b = ModelParams::init(d.clone(), 5).unwrap();
        assert_eq!(a.blocks, b.blocks);
        let c = ModelParams::init(d.clone(), 6).unwrap();
        assert_ne!(a.blocks, c.blocks);
        // Weight bounds per block.
        let fan = 3 * 25 + 4 * 25;
        let bound = (6.0 / fan as f64).sqrt();
        for &v in &a.blocks.blocks[0] {
            assert!(v.abs() <= bound);
        }
        // Biases start at zero.
        assert!(a.blocks.blocks[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_tensor_layout_is_chw() {
        let mut img = image::RgbImage::new(2, 2);
        img.put_pixel(1, 0, image::Rgb([255, 0, 0]));
        let t = image_to_tensor(&img);
        assert_eq!(t.len(), 12);
        assert_eq!(t[1], 1.0); // red plane, row 0, col 1
        assert_eq!(t[5], 0.0); // green plane
    }
}
