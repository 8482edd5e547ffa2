//! Replication scheduling.
//!
//! Results are always returned in replication order, so reductions over them
//! are bit-identical whatever the worker count. Without the `parallel` feature
//! every execution mode runs sequentially.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Rayon pool with the given number of workers (`None`: the global pool).
    Parallel { workers: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        Execution::Parallel { workers: None }
    }
}

impl Execution {
    pub fn with_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => Execution::Sequential,
            w => Execution::Parallel { workers: w },
        }
    }
}

/// Evaluates `f(rep)` for `rep` in `0..reps`, in order.
pub fn map_replications<T, F>(reps: u64, execution: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    match execution {
        Execution::Sequential => (0..reps).map(f).collect(),
        Execution::Parallel { workers } => parallel_map(reps, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(reps: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..reps).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match workers {
        None => run(),
        Some(0) => Err(Error::config("workers", "worker count must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(run),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(reps: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if workers == Some(0) {
        return Err(Error::config("workers", "worker count must be positive"));
    }
    (0..reps).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        for exec in [
            Execution::Sequential,
            Execution::Parallel { workers: None },
            Execution::Parallel { workers: Some(3) },
        ] {
            let v = map_replications(100, exec, |r| Ok(r * r)).unwrap();
            assert_eq!(v, (0..100).map(|r| r * r).collect::<Vec<_>>());
        }
    }

    #[test]
    fn errors_propagate() {
        let out: Result<Vec<u64>> = map_replications(10, Execution::default(), |r| {
            if r == 7 {
                Err(Error::Internal("boom".into()))
            } else {
                Ok(r)
            }
        });
        assert!(out.is_err());
        assert!(map_replications(1, Execution::Parallel { workers: Some(0) }, Ok).is_err());
    }
}
