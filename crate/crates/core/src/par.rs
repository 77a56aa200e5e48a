//! Data-parallel map over independent work items (seeds, Monte Carlo chunks,
//! sampled policies). Backed by rayon when the `parallel` feature is on,
//! otherwise a plain sequential loop. Output order always matches input order,
//! so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map_range_seq(n, f)
}

/// Sequential reference path, always available (benchmarks compare against it).
pub fn map_range_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool of `workers` threads (a no-op wrapper without the
/// `parallel` feature or when `workers` is `None`).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(w) if w > 0 => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
