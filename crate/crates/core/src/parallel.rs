//! Replicate-partitioned Monte Carlo driver.
//!
//! Replicates are grouped into fixed blocks of [`BLOCK`] consecutive indices.
//! Each block is folded sequentially and block results are merged in block
//! order, so every reduction (including floating-point sums) is bitwise
//! independent of the worker count.

use rayon::prelude::*;

use crate::walk::RandomStream;

pub const BLOCK: u64 = 1024;

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarlo {
    pub paths: u64,
    pub seed: u64,
    pub workers: usize,
}

impl MonteCarlo {
    pub fn new(paths: u64, seed: u64) -> Self {
        Self {
            paths,
            seed,
            workers: default_workers(),
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_paths(mut self, paths: u64) -> Self {
        self.paths = paths;
        self
    }

    pub fn stream(&self, replicate: u64) -> RandomStream {
        RandomStream::substream(self.seed, replicate)
    }

    /// Folds `step` over all replicates and merges the block accumulators in
    /// replicate order.
    pub fn fold<A, I, F, M>(&self, init: I, step: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, u64, &mut RandomStream) + Sync,
        M: Fn(&mut A, A),
    {
        let blocks = self.paths.div_ceil(BLOCK);
        let run_block = |b: u64| {
            let mut acc = init();
            let end = ((b + 1) * BLOCK).min(self.paths);
            for i in b * BLOCK..end {
                let mut stream = self.stream(i);
                step(&mut acc, i, &mut stream);
            }
            acc
        };
        let parts: Vec<A> = if self.workers <= 1 || blocks <= 1 {
            (0..blocks).map(run_block).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .expect("thread pool");
            pool.install(|| (0..blocks).into_par_iter().map(run_block).collect())
        };
        let mut total = init();
        for part in parts {
            merge(&mut total, part);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_sums_independent_of_workers() {
        let sum = |workers| {
            MonteCarlo::new(10_000, 42).with_workers(workers).fold(
                || 0.0f64,
                |acc, _, s| *acc += s.uniform(),
                |a, b| *a += b,
            )
        };
        let one = sum(1);
        assert_eq!(one.to_bits(), sum(3).to_bits());
        assert_eq!(one.to_bits(), sum(8).to_bits());
    }

    #[test]
    fn visits_every_replicate_once() {
        let seen = MonteCarlo::new(2500, 0).with_workers(4).fold(
            Vec::new,
            |acc: &mut Vec<u64>, i, _| acc.push(i),
            |a, b| a.extend(b),
        );
        assert_eq!(seen, (0..2500).collect::<Vec<_>>());
    }
}
