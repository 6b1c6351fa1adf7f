//! Order-preserving map over work items, parallel when the `parallel` feature is on.

use crate::error::{Error, Result};

/// How work items are scheduled. Results never depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    /// Rayon's global pool, or a dedicated pool with this many threads.
    #[default]
    Parallel,
    Threads(usize),
}

impl Execution {
    /// `--threads` semantics: `None` uses the global pool, `Some(1)` runs serially.
    pub fn from_threads(threads: Option<usize>) -> Result<Self> {
        match threads {
            None => Ok(Execution::Parallel),
            Some(0) => Err(Error::InvalidArgument("thread count must be at least 1".into())),
            Some(1) => Ok(Execution::Serial),
            Some(k) => Ok(Execution::Threads(k)),
        }
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    imp::map_indexed(n, exec, f)
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    use super::Execution;
    use crate::error::{Error, Result};

    pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match exec {
            Execution::Serial => Ok((0..n).map(f).collect()),
            Execution::Parallel => Ok((0..n).into_par_iter().map(f).collect()),
            Execution::Threads(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("cannot start {k} worker threads: {e}")))?;
                Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
            }
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    use super::Execution;
    use crate::error::Result;

    pub fn map_indexed<T, F>(n: usize, _exec: Execution, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        Ok((0..n).map(f).collect())
    }
}
