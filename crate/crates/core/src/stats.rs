//! Deterministic reductions shared by the estimators.

use rayon::prelude::*;

use crate::coefficients::REDUCE_CHUNK;

/// Sum over fixed-size chunks; the combination order does not depend on the
/// number of worker threads.
pub fn chunked_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values.par_chunks(REDUCE_CHUNK).map(|c| c.iter().sum()).collect();
    partials.iter().sum()
}

/// Sample mean and unbiased variance (two-pass). The variance of a single
/// value is zero.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean of an empty sample");
    let mean = chunked_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let partials: Vec<f64> = values
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().map(|v| (v - mean) * (v - mean)).sum())
        .collect();
    (mean, partials.iter().sum::<f64>() / (n - 1) as f64)
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(values);
    (m, (v / values.len() as f64).sqrt())
}

/// Componentwise mean of flat `d`-vectors.
pub fn vector_mean(positions: &[f64], d: usize) -> Vec<f64> {
    let n = positions.len() / d;
    let partials: Vec<Vec<f64>> = positions
        .par_chunks(REDUCE_CHUNK * d)
        .map(|c| {
            let mut acc = vec![0.0; d];
            for p in c.chunks_exact(d) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    let mut m = vec![0.0; d];
    for p in partials {
        for (a, v) in m.iter_mut().zip(p) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_var(&[7.0]), (7.0, 0.0));
        assert_eq!(vector_mean(&[1.0, 10.0, 3.0, 20.0], 2), vec![2.0, 15.0]);
    }

    #[test]
    fn chunked_sum_is_thread_independent() {
        let v: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| chunked_sum(&v));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(7)
            .build()
            .unwrap()
            .install(|| chunked_sum(&v));
        assert_eq!(one.to_bits(), many.to_bits());
    }
}
