//! Execution policy for data-parallel loops.
//!
//! `Exec::Parallel` uses rayon when the crate is built with the `parallel`
//! feature; without it every loop runs sequentially. Both policies produce
//! bit-identical results: parallel loops only ever write disjoint slots and
//! all reductions are performed sequentially in a fixed order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when loops will actually fan out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Number of worker threads available to parallel loops.
    pub fn threads(self) -> usize {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return rayon::current_num_threads();
        }
        1
    }

    /// Apply `f` to every chunk of `data` (each `chunk` long, the last one
    /// possibly shorter), passing the chunk index.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }

    /// Apply `f` to every element of `items`.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            items.par_iter_mut().for_each(f);
            return;
        }
        items.iter_mut().for_each(f);
    }

    /// Map `f` over `0..n`, collecting results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}
