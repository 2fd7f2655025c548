//! Training loop, checkpointing, and dataset embedding.

use std::fs;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::batch::{batch_gradients, PairBatch};
use super::{forward, image_to_tensor, ArchDescriptor, EmbeddingVector, ModelParams, ParamBlocks};
use crate::augment::{augment_image, AugmentationSpec};
use crate::dataset::DatasetManifest;
use crate::error::{AtlasError, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub adam: AdamConfig,
    /// Entropy-regularization weight λ.
    pub entropy_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub augmentation: AugmentationSpec,
    /// Gradient-accumulation chunk count. 1 reproduces bit-identical runs.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 5,
            adam: AdamConfig::default(),
            entropy_weight: 1.0,
            batch_size: 256,
            epochs: 30,
            rng_seed: 0,
            augmentation: AugmentationSpec::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(AtlasError::Model(
                "batch_size must be ≥ 2 (pairs + batch-mean entropy)".to_string(),
            ));
        }
        if self.adam.learning_rate <= 0.0 {
            return Err(AtlasError::Model("learning rate must be > 0".to_string()));
        }
        if self.entropy_weight < 0.0 {
            return Err(AtlasError::Model("entropy weight must be ≥ 0".to_string()));
        }
        self.augmentation.validate()
    }
}

/// Per-epoch loss summary (means over batches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub consistency_term: f64,
    pub entropy_term: f64,
}

pub fn write_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,mean_loss,consistency_term,entropy_term\n");
    for h in history {
        out.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            h.epoch, h.mean_loss, h.consistency_term, h.entropy_term
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochStats>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(AtlasError::ManifestParse {
                line: idx + 1,
                reason: "expected 4 fields".to_string(),
            });
        }
        out.push(EpochStats {
            epoch: parts[0].parse().map_err(|_| AtlasError::ManifestParse {
                line: idx + 1,
                reason: "bad epoch".to_string(),
            })?,
            mean_loss: parts[1].parse().unwrap_or(f64::NAN),
            consistency_term: parts[2].parse().unwrap_or(f64::NAN),
            entropy_term: parts[3].parse().unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

/// Deterministic seed mixing (splitmix64 finalizer over the inputs).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(a.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(b.wrapping_mul(0x94d049bb133111eb));
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    z
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    descriptor: ArchDescriptor,
    embedding_dim: usize,
    config_hash: String,
    epochs_done: usize,
    adam: AdamConfig,
    step: u64,
    block_lengths: Vec<usize>,
}

/// Write params + optimizer state: JSON header line, then the parameter,
/// first-moment, and second-moment blocks as little-endian f64 runs in
/// descriptor order.
pub fn save_checkpoint(
    params: &ModelParams,
    state: &AdamState,
    adam: &AdamConfig,
    epochs_done: usize,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        descriptor: params.descriptor.clone(),
        embedding_dim: params.descriptor.embedding_dim,
        config_hash: config_hash.to_string(),
        epochs_done,
        adam: *adam,
        step: state.step,
        block_lengths: params.descriptor.block_shapes(),
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| AtlasError::Model(format!("checkpoint header: {e}")))?
        .into_bytes();
    bytes.push(b'\n');
    for set in [&params.blocks, &state.m, &state.v] {
        for block in &set.blocks {
            for v in block {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    // Write-then-rename keeps the previous checkpoint intact on failure.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub params: ModelParams,
    pub state: AdamState,
    pub adam: AdamConfig,
    pub epochs_done: usize,
    pub config_hash: String,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| AtlasError::Model("checkpoint missing header".to_string()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| AtlasError::Model(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(AtlasError::Model(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let expected: usize = header.block_lengths.iter().sum::<usize>() * 3 * 8;
    let payload = &bytes[newline + 1..];
    if payload.len() != expected {
        return Err(AtlasError::Model(format!(
            "checkpoint payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut offset = 0;
    let mut read_set = |lengths: &[usize]| -> ParamBlocks {
        let blocks = lengths
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| {
                        let mut buf = [0u8; 8];
                        buf.copy_from_slice(&payload[offset..offset + 8]);
                        offset += 8;
                        f64::from_le_bytes(buf)
                    })
                    .collect()
            })
            .collect();
        ParamBlocks { blocks }
    };
    let params_blocks = read_set(&header.block_lengths);
    let m = read_set(&header.block_lengths);
    let v = read_set(&header.block_lengths);
    Ok(LoadedCheckpoint {
        params: ModelParams {
            descriptor: header.descriptor,
            blocks: params_blocks,
        },
        state: AdamState {
            m,
            v,
            step: header.step,
        },
        adam: header.adam,
        epochs_done: header.epochs_done,
        config_hash: header.config_hash,
    })
}

/// Decoded image set used by training and embedding.
pub struct ImageStore {
    pub images: Vec<image::RgbImage>,
    pub ids: Vec<String>,
}

impl ImageStore {
    /// Decode every manifest row's image, relative to the manifest directory.
    pub fn load(manifest: &DatasetManifest, manifest_dir: &Path) -> Result<Self> {
        let loaded: Vec<std::result::Result<image::RgbImage, String>> = manifest
            .rows
            .par_iter()
            .map(|row| {
                let path = manifest_dir.join(&row.image_path);
                image::open(&path)
                    .map(|i| i.to_rgb8())
                    .map_err(|_| path.display().to_string())
            })
            .collect();
        let mut images = Vec::with_capacity(loaded.len());
        let mut missing = Vec::new();
        for item in loaded {
            match item {
                Ok(img) => images.push(img),
                Err(path) => missing.push(path),
            }
        }
        if !missing.is_empty() {
            return Err(AtlasError::Dataset(format!(
                "missing or unreadable image files: {}",
                missing.join(", ")
            )));
        }
        Ok(ImageStore {
            images,
            ids: manifest.rows.iter().map(|r| r.key.id.clone()).collect(),
        })
    }
}

/// Train the embedding network on the given manifest rows.
///
/// Every epoch shuffles the rows, draws a fresh augmentation per image, and
/// applies one Adam step per mini-batch. A checkpoint and history CSV are
/// written after every epoch when `checkpoint_dir` is given, and training
/// resumes from a matching checkpoint. Single-worker runs are bit-exact
/// reproducible for a fixed seed.
pub fn train(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    config: &TrainConfig,
    descriptor: ArchDescriptor,
    checkpoint_dir: Option<&Path>,
    config_hash: &str,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    config.validate()?;
    descriptor.validate()?;
    if manifest.is_empty() {
        return Err(AtlasError::Model("manifest is empty".to_string()));
    }
    let store = ImageStore::load(manifest, manifest_dir)?;

    let checkpoint_path = checkpoint_dir.map(|d| d.join("checkpoint.bin"));
    let history_path = checkpoint_dir.map(|d| d.join("history.csv"));

    let mut params;
    let mut state;
    let mut history: Vec<EpochStats>;
    let mut start_epoch = 0;
    match checkpoint_path.as_ref().filter(|p| p.exists()) {
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            if loaded.config_hash != config_hash {
                return Err(AtlasError::HashMismatch {
                    artifact: path.display().to_string(),
                    found: loaded.config_hash,
                    expected: config_hash.to_string(),
                });
            }
            if loaded.params.descriptor != descriptor {
                return Err(AtlasError::Model(
                    "checkpoint architecture differs from requested descriptor".to_string(),
                ));
            }
            start_epoch = loaded.epochs_done;
            params = loaded.params;
            state = loaded.state;
            history = history_path
                .as_ref()
                .filter(|p| p.exists())
                .map(|p| read_history(p))
                .transpose()?
                .unwrap_or_default();
            history.truncate(start_epoch);
        }
        None => {
            params = ModelParams::init(descriptor, derive_seed(config.rng_seed, 0x1717, 0))?;
            state = AdamState::new(&params.descriptor);
            history = Vec::new();
        }
    }

    let n = store.images.len();
    for epoch in start_epoch..config.epochs {
        let order = shuffled_indices(n, derive_seed(config.rng_seed, 0x5u64, epoch as u64));
        let mut batch_stats = Vec::new();
        for batch_indices in order.chunks(config.batch_size) {
            if batch_indices.len() < 2 {
                continue;
            }
            let tensors: Vec<(Vec<f64>, Vec<f64>)> = batch_indices
                .par_iter()
                .map(|&idx| {
                    let img = &store.images[idx];
                    let draw = derive_seed(config.rng_seed, epoch as u64, idx as u64);
                    let augmented = augment_image(img, &config.augmentation, draw);
                    (image_to_tensor(img), image_to_tensor(&augmented))
                })
                .collect();
            let mut batch = PairBatch {
                originals: Vec::with_capacity(tensors.len()),
                augmented: Vec::with_capacity(tensors.len()),
            };
            for (orig, aug) in tensors {
                batch.originals.push(orig);
                batch.augmented.push(aug);
            }
            let (diag, grads) =
                batch_gradients(&params, &batch, config.entropy_weight, config.workers)?;
            if !diag.total().is_finite() {
                return Err(AtlasError::Model(format!(
                    "non-finite loss at epoch {epoch}; last checkpoint retained"
                )));
            }
            adam_step(&mut params, &grads, &mut state, &config.adam);
            batch_stats.push(diag);
        }
        let count = batch_stats.len().max(1) as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: batch_stats.iter().map(|d| d.total()).sum::<f64>() / count,
            consistency_term: batch_stats.iter().map(|d| d.consistency).sum::<f64>() / count,
            entropy_term: batch_stats.iter().map(|d| d.entropy_term).sum::<f64>() / count,
        };
        history.push(stats);
        if let Some(path) = &checkpoint_path {
            save_checkpoint(&params, &state, &config.adam, epoch + 1, config_hash, path)?;
        }
        if let Some(path) = &history_path {
            write_history(&history, path)?;
        }
    }

    Ok((params, history))
}

/// Embed every manifest row's original image.
pub fn embed_dataset(
    params: &ModelParams,
    manifest: &DatasetManifest,
    manifest_dir: &Path,
) -> Result<Vec<EmbeddingVector>> {
    let store = ImageStore::load(manifest, manifest_dir)?;
    let embeddings: Result<Vec<EmbeddingVector>> = store
        .images
        .par_iter()
        .zip(&store.ids)
        .map(|(img, id)| {
            let tensor = image_to_tensor(img);
            Ok(EmbeddingVector {
                values: forward(params, &tensor)?,
                id: id.clone(),
            })
        })
        .collect();
    embeddings
}

/// Embedding table CSV: `id,e0,e1,…`.
pub fn write_embeddings(embeddings: &[EmbeddingVector], path: &Path) -> Result<()> {
    let dim = embeddings.first().map(|e| e.values.len()).unwrap_or(0);
    let mut out = String::from("id");
    for c in 0..dim {
        out.push_str(&format!(",e{c}"));
    }
    out.push('\n');
    for e in embeddings {
        out.push_str(&e.id);
        for v in &e.values {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingVector>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or(AtlasError::ManifestParse {
                line: idx + 1,
                reason: "missing id".to_string(),
            })?
            .to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        out.push(EmbeddingVector {
            values: values.map_err(|_| AtlasError::ManifestParse {
                line: idx + 1,
                reason: "bad embedding value".to_string(),
            })?,
            id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ManifestRow, ParameterKey};
    use crate::floquet::PhaseLabel;
    use crate::render::Space;

    fn synthetic_dataset(dir: &Path, count: usize) -> DatasetManifest {
        fs::create_dir_all(dir.join("images")).unwrap();
        let rows = (0..count)
            .map(|i| {
                let img = image::RgbImage::from_fn(20, 20, |x, y| {
                    image::Rgb([
                        ((x * (i as u32 + 1) + y) % 255) as u8,
                        ((y * 3 + i as u32) % 255) as u8,
                        ((x + y + i as u32 * 7) % 255) as u8,
                    ])
                });
                let rel = format!("images/s{i}.png");
                img.save(dir.join(&rel)).unwrap();
                ManifestRow {
                    key: ParameterKey {
                        id: format!("s{i}"),
                        l_min: 0,
                        l_max: 0,
                        k_min: 0,
                        k_max: 0,
                        omega: 1.0,
                        f: 0.0,
                        f_st: 0.0,
                        re_e: 0.0,
                        im_e: 0.0,
                        t_phase: PhaseLabel::T0,
                        space: if i % 2 == 0 { Space::CS } else { Space::PS },
                    },
                    image_path: rel,
                    config_hash: "testhash".to_string(),
                }
            })
            .collect();
        DatasetManifest { rows }
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            embedding_dim: 3,
            batch_size: 4,
            epochs,
            rng_seed: 9,
            workers: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthetic_dataset(dir.path(), 6);
        let config = tiny_config(0);
        let descriptor = ArchDescriptor::reduced(3);
        let (params, history) = train(
            &manifest,
            dir.path(),
            &config,
            descriptor.clone(),
            None,
            "h",
        )
        .unwrap();
        assert!(history.is_empty());
        let expected =
            ModelParams::init(descriptor, derive_seed(config.rng_seed, 0x1717, 0)).unwrap();
        assert_eq!(params.blocks, expected.blocks);
    }

    #[test]
    fn single_worker_training_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthetic_dataset(dir.path(), 8);
        let config = tiny_config(2);
        let descriptor = ArchDescriptor::reduced(3);
        let (p1, h1) = train(&manifest, dir.path(), &config, descriptor.clone(), None, "h").unwrap();
        let (p2, h2) = train(&manifest, dir.path(), &config, descriptor, None, "h").unwrap();
        assert_eq!(p1.blocks, p2.blocks);
        assert_eq!(h1, h2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthetic_dataset(dir.path(), 6);
        let config = tiny_config(1);
        let ckpt = dir.path().join("train");
        let descriptor = ArchDescriptor::reduced(3);
        let (params, _) = train(
            &manifest,
            dir.path(),
            &config,
            descriptor,
            Some(&ckpt),
            "hash-x",
        )
        .unwrap();
        let loaded = load_checkpoint(&ckpt.join("checkpoint.bin")).unwrap();
        assert_eq!(loaded.params.blocks, params.blocks);
        assert_eq!(loaded.epochs_done, 1);
        assert_eq!(loaded.config_hash, "hash-x");
        // Forward outputs must agree bit-for-bit.
        let input: Vec<f64> = (0..3 * 20 * 20).map(|i| (i % 7) as f64 / 7.0).collect();
        let a = forward(&params, &input).unwrap();
        let b = forward(&loaded.params, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_continues_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthetic_dataset(dir.path(), 8);
        let descriptor = ArchDescriptor::reduced(3);
        let ckpt = dir.path().join("train");
        // Full run in one go.
        let config_full = tiny_config(3);
        let (full, _) = train(
            &manifest,
            dir.path(),
            &config_full,
            descriptor.clone(),
            None,
            "h",
        )
        .unwrap();
        // Split run: 1 epoch, then resume to 3.
        let config_1 = tiny_config(1);
        train(
            &manifest,
            dir.path(),
            &config_1,
            descriptor.clone(),
            Some(&ckpt),
            "h",
        )
        .unwrap();
        let config_3 = tiny_config(3);
        let (resumed, history) = train(
            &manifest,
            dir.path(),
            &config_3,
            descriptor,
            Some(&ckpt),
            "h",
        )
        .unwrap();
        assert_eq!(history.len(), 3);
        for (a, b) in full.blocks.blocks.iter().zip(&resumed.blocks.blocks) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15, "resume diverged");
            }
        }
    }

    #[test]
    fn embeddings_cover_manifest_and_repeat_identically() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synthetic_dataset(dir.path(), 5);
        let descriptor = ArchDescriptor::reduced(3);
        let params = ModelParams::init(descriptor, 1).unwrap();
        let a = embed_dataset(&params, &manifest, dir.path()).unwrap();
        let b = embed_dataset(&params, &manifest, dir.path()).unwrap();
        assert_eq!(a.len(), manifest.len());
        assert_eq!(a, b);
        // Embedding CSV round trip.
        let path = dir.path().join("emb.csv");
        write_embeddings(&a, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn missing_images_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = synthetic_dataset(dir.path(), 3);
        manifest.rows[1].image_path = "images/nonexistent.png".to_string();
        let descriptor = ArchDescriptor::reduced(3);
        let params = ModelParams::init(descriptor, 1).unwrap();
        match embed_dataset(&params, &manifest, dir.path()) {
            Err(AtlasError::Dataset(msg)) => assert!(msg.contains("nonexistent.png")),
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }
}
