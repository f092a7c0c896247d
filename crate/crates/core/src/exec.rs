//! Data-parallel loop helpers.
//!
//! Every hot loop in the crate goes through [`Execution`]. With the
//! `parallel` feature (default) `Execution::Parallel` runs on the rayon
//! pool; without it both variants run sequentially. Results are always
//! assembled in index order, so output never depends on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this mode actually fans out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Calls `f(row_index, row)` for every `row_len`-sized chunk of `buf`.
    pub fn for_each_row<T, F>(self, buf: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        assert!(row_len > 0, "row length must be positive");
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            buf.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
            return;
        }
        buf.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }

    /// Like [`Execution::for_each_row`], with a scratch value created by
    /// `init` and reused across the rows one worker visits.
    pub fn for_each_row_init<T, S, I, F>(self, buf: &mut [T], row_len: usize, init: I, f: F)
    where
        T: Send,
        I: Fn() -> S + Send + Sync,
        F: Fn(&mut S, usize, &mut [T]) + Send + Sync,
    {
        assert!(row_len > 0, "row length must be positive");
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            buf.par_chunks_mut(row_len)
                .enumerate()
                .for_each_init(&init, |s, (i, row)| f(s, i, row));
            return;
        }
        let mut s = init();
        buf.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(&mut s, i, row));
    }

    /// `(0..n).map(f).collect()`, preserving index order.
    pub fn map_indices<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Ordered map over a slice.
    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Runs two closures, concurrently when parallel.
    pub fn join<A, B, RA, RB>(self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return rayon::join(a, b);
        }
        (a(), b())
    }
}

/// Number of worker threads a parallel loop would use.
pub fn worker_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
