//! Floquet-state atlas for a driven 1D quantum surrogate.
//!
//! The pipeline generates Floquet states of a periodically driven
//! one-dimensional system, renders them as configuration-space and
//! phase-space images, learns an augmentation-invariant CNN embedding,
//! clusters the embedding, and screens the clusters for nondispersive
//! wave-packet behaviour against the classical resonance island.

pub mod augment;
pub mod classical;
pub mod dataset;
pub mod error;
pub mod floquet;
pub mod husimi;
pub mod linalg;
pub mod nn;
pub mod render;

pub use error::{AtlasError, Result};

/// Process-wide numeric runtime setup; call once before heavy work.
///
/// The GEMMs drive their parallelism from the caller (rayon over batch
/// chunks), so OpenBLAS runs single-threaded. OpenBLAS also misdetects
/// recent AVX-512 CPUs unless a core type is pinned.
pub fn init_runtime(jobs: Option<usize>) {
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
    if std::env::var_os("OPENBLAS_CORETYPE").is_none() && is_x86_feature_detected!("avx512f") {
        std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
    }
    if let Some(n) = jobs {
        // The pool is process-global; re-initialization is a no-op.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}
