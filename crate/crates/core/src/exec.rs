//! Per-agent fan-out with an optional rayon backend.

use serde::{Deserialize, Serialize};

/// How the per-agent work inside a round is scheduled.
///
/// Without the `parallel` feature, `Parallel` silently runs sequentially.
/// Results are identical either way because every agent owns its random
/// streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub(crate) fn map_agents<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Send + Sync,
    {
        match self {
            Execution::Sequential => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
            Execution::Parallel => par_map(items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Send + Sync,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Send + Sync,
{
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}
