//! Data-parallel helpers for independent runs (seed sweeps, Monte Carlo trials,
//! oracle chunks).
//!
//! With the `parallel` feature (default) work is spread over rayon's pool;
//! without it everything runs on the calling thread. Results always come back
//! in index order, so outputs do not depend on the execution strategy.

/// Maps `f` over `0..n` on the calling thread.
pub fn map_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Maps `f` over `0..n` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    /// Same as `Sequential` when built without the `parallel` feature.
    Parallel,
}

impl Default for Strategy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Strategy::Parallel
        } else {
            Strategy::Sequential
        }
    }
}

/// Maps `f` over `0..n` with an explicit strategy.
pub fn map_with<T, F>(strategy: Strategy, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match strategy {
        Strategy::Sequential => map_sequential(n, f),
        #[cfg(feature = "parallel")]
        Strategy::Parallel => map_parallel(n, f),
        #[cfg(not(feature = "parallel"))]
        Strategy::Parallel => map_sequential(n, f),
    }
}

/// Maps `f` over `0..n` with the strategy selected at build time.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_with(Strategy::default(), n, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v, map_sequential(100, |i| i * i));
        assert_eq!(map_with(Strategy::Parallel, 7, |i| i + 1), vec![1, 2, 3, 4, 5, 6, 7]);
    }
}
