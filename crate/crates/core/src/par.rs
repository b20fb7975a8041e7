//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan work out over the rayon global
//! pool. Without it, or while a [`SequentialGuard`] is alive, they fall back to
//! plain iterators. Results are always returned in index order, so callers
//! see identical output on both paths.

use std::sync::atomic::{AtomicUsize, Ordering};

static SEQUENTIAL_DEPTH: AtomicUsize = AtomicUsize::new(0);

/// Forces the sequential path process-wide until dropped.
///
/// Used by the benches to compare both execution paths in one binary.
pub struct SequentialGuard(());

impl SequentialGuard {
    pub fn new() -> Self {
        SEQUENTIAL_DEPTH.fetch_add(1, Ordering::SeqCst);
        SequentialGuard(())
    }
}

impl Default for SequentialGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for SequentialGuard {
    fn drop(&mut self) {
        SEQUENTIAL_DEPTH.fetch_sub(1, Ordering::SeqCst);
    }
}

/// True when work will actually be spread over the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && SEQUENTIAL_DEPTH.load(Ordering::SeqCst) == 0
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps each index and folds the results with an associative `reduce`.
///
/// Indices are grouped into fixed chunks of `chunk` that are folded left to
/// right and then combined in chunk order, so the floating-point result does
/// not depend on the thread count or on the execution path.
pub fn map_reduce<R, F, Id, Red>(n: usize, chunk: usize, map: F, identity: Id, reduce: Red) -> R
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
    Id: Fn() -> R + Sync + Send,
    Red: Fn(R, R) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = (lo + chunk).min(n);
        (lo..hi).map(&map).fold(identity(), &reduce)
    });
    partials.into_iter().fold(identity(), &reduce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_keeps_order() {
        let v = map_indexed(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let _g = SequentialGuard::new();
        assert!(!is_parallel());
        assert_eq!(map_indexed(5, |i| i), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn map_reduce_sums() {
        let s = map_reduce(1000, 7, |i| i as u64, || 0, |a, b| a + b);
        assert_eq!(s, 999 * 1000 / 2);
        let par = map_reduce(333, 8, |i| (i as f64).sqrt(), || 0.0, |a, b| a + b);
        let _g = SequentialGuard::new();
        let seq = map_reduce(333, 8, |i| (i as f64).sqrt(), || 0.0, |a, b| a + b);
        assert_eq!(par.to_bits(), seq.to_bits());
    }
}
