//! Deterministic parallel reductions and small summary statistics.
//!
//! Reductions over paths run on fixed-size chunks whose partial results
//! are folded in chunk order, so the floating-point result is identical
//! for any worker count or scheduling.

use rayon::prelude::*;

/// Fixed chunk length for order-independent parallel sums.
pub const REDUCE_CHUNK: usize = 1024;

/// Sums `f(i)` for `i in 0..n` with a schedule-independent result.
pub fn deterministic_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks: Vec<f64> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    chunks.iter().sum()
}

/// Vector-valued variant: sums `f(i)` (written into a scratch buffer) into
/// a length-`width` accumulator, chunk-ordered.
pub fn deterministic_sum_vec<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            let mut acc = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for i in lo..hi {
                f(i, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += *b;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for chunk in chunks {
        for (a, b) in total.iter_mut().zip(&chunk) {
            *a += b;
        }
    }
    total
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error of `f(i)`, `i in 0..n`.
pub fn mean_stderr<F>(n: usize, f: F) -> MeanStderr
where
    F: Fn(usize) -> f64 + Sync,
{
    assert!(n > 0);
    let sum = deterministic_sum(n, &f);
    let mean = sum / n as f64;
    if n == 1 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let ss = deterministic_sum(n, |i| {
        let d = f(i) - mean;
        d * d
    });
    let var = ss / (n as f64 - 1.0);
    MeanStderr {
        mean,
        stderr: (var / n as f64).sqrt(),
    }
}
