//! Deterministic parallel reduction over register units.
//!
//! Per-unit contributions are summed per fixed-size chunk; chunk partials are
//! then combined in chunk order. The floating-point result therefore depends
//! only on the chunk size, never on the number of worker threads. `Serial`
//! uses a single chunk, i.e. plain left-to-right accumulation.

use rayon::prelude::*;

/// Default chunk granularity, shared with the Kronecker engine's block sum.
pub const DEFAULT_CHUNK: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Fixed-size chunks evaluated in parallel, combined in chunk order.
    Chunked(usize),
    /// One chunk: strict left-to-right summation on the calling thread.
    Serial,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Chunked(DEFAULT_CHUNK)
    }
}

impl Reduction {
    pub fn serial_if(flag: bool) -> Self {
        if flag {
            Reduction::Serial
        } else {
            Reduction::default()
        }
    }

    /// Maps `chunk -> partial` over `0..n` and folds the partials in chunk
    /// order with `fold`.
    pub fn map_reduce<T, F, C>(&self, n: usize, identity: impl Fn() -> T + Sync, map: F, fold: C) -> T
    where
        T: Send,
        F: Fn(std::ops::Range<usize>, &mut T) + Sync,
        C: Fn(&mut T, T),
    {
        let chunk = match *self {
            Reduction::Serial => n.max(1),
            Reduction::Chunked(c) => c.max(1),
        };
        let ranges: Vec<std::ops::Range<usize>> = (0..n)
            .step_by(chunk)
            .map(|lo| lo..(lo + chunk).min(n))
            .collect();
        let partials: Vec<T> = if matches!(self, Reduction::Serial) || ranges.len() <= 1 {
            ranges
                .into_iter()
                .map(|r| {
                    let mut acc = identity();
                    map(r, &mut acc);
                    acc
                })
                .collect()
        } else {
            ranges
                .into_par_iter()
                .map(|r| {
                    let mut acc = identity();
                    map(r, &mut acc);
                    acc
                })
                .collect()
        };
        let mut total = identity();
        for p in partials {
            fold(&mut total, p);
        }
        total
    }
}
