// Temporary throughput probe; removed before finalization.
use atlas_core::nn::batch::{batch_gradients, PairBatch};
use atlas_core::nn::{ArchDescriptor, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
#[ignore]
fn full_arch_batch_timing() {
    atlas_core::init_runtime(Some(2));
    let d = ArchDescriptor::standard(2);
    let params = ModelParams::init(d.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let len = d.input.0 * d.input.1 * d.input.2;
    let n_pairs = 64; // quarter batch for quicker reading
    let mk = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..len).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let batch = PairBatch {
        originals: (0..n_pairs).map(|_| mk(&mut rng)).collect(),
        augmented: (0..n_pairs).map(|_| mk(&mut rng)).collect(),
    };
    // warmup
    let _ = batch_gradients(&params, &batch, 1.0, 2).unwrap();
    let t = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let _ = batch_gradients(&params, &batch, 1.0, 2).unwrap();
    }
    let per_batch = t.elapsed().as_secs_f64() / reps as f64;
    let per_pair_ms = per_batch / n_pairs as f64 * 1e3;
    // full epoch at 2880 train pairs, 30 epochs
    let epoch_s = per_pair_ms / 1e3 * 2880.0;
    eprintln!("batch of {n_pairs} pairs: {per_batch:.2}s → {per_pair_ms:.1} ms/pair → epoch {epoch_s:.0}s → 30 epochs {:.1} min", epoch_s * 30.0 / 60.0);
}
