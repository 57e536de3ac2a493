//! Execution-mode helpers for the data-parallel sweeps in this crate.
//!
//! With the default `parallel` feature, [`Parallelism::Auto`] runs on the
//! rayon thread pool; without the feature it degrades to sequential
//! execution. Results are deterministic in both modes: work items are
//! indexed and reductions use exact integer arithmetic or order-independent
//! sums of independently seeded streams.

/// How to execute an embarrassingly parallel sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Use rayon when the `parallel` feature is enabled, otherwise run
    /// sequentially.
    #[default]
    Auto,
    /// Always run on the calling thread.
    Sequential,
}

/// Derive a decorrelated per-item seed from a master seed (splitmix64
/// finalizer), so sweep items get independent, order-free RNG streams.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map `f` over `0..n`, preserving index order in the output.
pub(crate) fn map_indexed<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Auto => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}
