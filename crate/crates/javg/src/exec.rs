//! Data-parallel execution with a sequential fallback.
//!
//! All parallelism in this crate runs through [`map_indexed`], which maps a
//! pure function over a slice and collects results in index order. The
//! parallel path (rayon, behind the `parallel` feature) and the sequential
//! path produce bitwise-identical outputs: each output slot is written by
//! exactly one task and every reduction over the results happens afterwards,
//! sequentially, in index order. Thread count therefore never influences
//! results, only wall-clock time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to run data-parallel sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Rayon work-stealing. Falls back to sequential when the `parallel`
    /// feature is disabled.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Map a fallible `f` over `0..n`; returns the first error by index.
pub fn try_map_indexed<U, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Sync + Send,
{
    let results = map_indexed(mode, n, f);
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let f = |i: usize| {
            let mut acc = 0.0f64;
            for k in 0..100 {
                acc += ((i * 31 + k) as f64).sin();
            }
            acc
        };
        let seq = map_indexed(ExecMode::Sequential, 64, f);
        let par = map_indexed(ExecMode::Parallel, 64, f);
        assert_eq!(seq, par);
    }

    #[test]
    fn try_map_returns_first_error_by_index() {
        let r = try_map_indexed(ExecMode::Parallel, 10, |i| {
            if i >= 7 {
                Err(i)
            } else {
                Ok(i * 2)
            }
        });
        assert_eq!(r, Err(7));
    }
}
