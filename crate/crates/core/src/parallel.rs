//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and the per-chunk
//! results are returned in chunk order, so reductions performed by the caller
//! are bit-identical whether or not the `parallel` feature is enabled and
//! regardless of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Number of examples handled by one unit of work in per-example loops.
pub const CHUNK: usize = 16;

/// Applies `f` to consecutive index ranges of length `chunk` covering `0..n`
/// and returns the results in range order.
pub fn map_ranges<T, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let run = |&s: &usize| f(s..(s + chunk).min(n));
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return starts.par_iter().map(run).collect();
        }
    }
    starts.iter().map(run).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_items<I, T, F>(exec: Exec, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_everything_in_order() {
        let parts = map_ranges(Exec::Parallel, 37, 8, |r| r.collect::<Vec<_>>());
        let flat: Vec<usize> = parts.into_iter().flatten().collect();
        assert_eq!(flat, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let sum = |exec| -> f64 {
            map_ranges(exec, xs.len(), CHUNK, |r| xs[r].iter().sum::<f64>())
                .into_iter()
                .sum()
        };
        assert_eq!(sum(Exec::Parallel).to_bits(), sum(Exec::Sequential).to_bits());
    }
}
