//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops in the crate (corpus generation, per-sample gradients,
//! rollout sampling, suite scoring) are expressed as independent per-item
//! maps. With the `parallel` feature (default) they run on rayon; without it,
//! or when [`force_sequential`] is set, they run on a plain iterator. Both
//! paths collect results in index order, so outputs are bit-identical
//! regardless of thread count — parallelism never changes reduction order.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Runtime override that disables the rayon path even when the `parallel`
/// feature is compiled in. Used by the benchmark suite to compare both paths
/// in a single binary.
pub fn force_sequential(flag: bool) {
    FORCE_SEQUENTIAL.store(flag, Ordering::SeqCst);
}

/// True when the rayon path is compiled in and not overridden.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Maps `f` over `0..n` and collects results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice and collects results in input order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let par = map_indexed(1000, |i| (i as f64).sin());
        force_sequential(true);
        let seq = map_indexed(1000, |i| (i as f64).sin());
        force_sequential(false);
        assert_eq!(par, seq);
    }
}
