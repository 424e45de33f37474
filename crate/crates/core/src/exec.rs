//! Replication fan-out.
//!
//! Every Monte Carlo loop in the crate goes through [`Execution`]. Work items
//! are indexed by replication, each item derives its own RNG stream from the
//! index, and results come back in index order, so the output does not depend
//! on the thread schedule. Without the `parallel` feature only the sequential
//! engine exists.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How replications are executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

#[allow(clippy::derivable_impls)]
impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        self.map_init(n, || (), |_, i| f(i))
    }

    /// Like [`Execution::map`] but with per-worker scratch state (buffers).
    /// Scratch state must not influence results.
    pub fn map_init<S, T, I, F>(self, n: u64, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, u64) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => {
                let mut state = init();
                (0..n).map(|i| f(&mut state, i)).collect()
            }
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map_init(init, f).collect(),
        }
    }

    /// Counts indices in `0..n` for which `pred` holds.
    pub fn count<S, I, F>(self, n: u64, init: I, pred: F) -> u64
    where
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, u64) -> bool + Sync + Send,
    {
        match self {
            Execution::Sequential => {
                let mut state = init();
                (0..n).filter(|&i| pred(&mut state, i)).count() as u64
            }
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n)
                .into_par_iter()
                .map_init(init, |s, i| u64::from(pred(s, i)))
                .sum(),
        }
    }
}

/// Runs `f` with a bounded worker count. `threads == 0` keeps the global pool.
/// In a sequential build the thread count is ignored.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engines_agree_on_order_and_counts() {
        let seq = Execution::Sequential.map(1000, |i| i * i);
        let def = Execution::default().map(1000, |i| i * i);
        assert_eq!(seq, def);
        let c1 = Execution::Sequential.count(1000, || (), |_, i| i % 3 == 0);
        let c2 = Execution::default().count(1000, || (), |_, i| i % 3 == 0);
        assert_eq!(c1, 334);
        assert_eq!(c1, c2);
    }
}
