//! Fixed-order reductions.
//!
//! Every quadrature in the crate funnels through these helpers so that a
//! given input slice always produces the same bits, independent of thread
//! count.

const BLOCK: usize = 32;

/// Pairwise (cascade) summation with a fixed split rule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n`, without materializing the terms
/// when `n` is small.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, f) + rec(mid, hi, f)
    }
    rec(0, n, &f)
}

/// Weighted dot product `Σ wᵢ·vᵢ` in pairwise order.
pub fn dot(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    pairwise_sum_by(values.len(), |i| weights[i] * values[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_inputs() {
        let v = [1.0, 2.0, 3.5];
        assert_eq!(pairwise_sum(&v), 6.5);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn beats_naive_on_long_sums() {
        let v = vec![0.1; 1_000_000];
        let naive: f64 = v.iter().sum();
        let pw = pairwise_sum(&v);
        assert!((pw - 100_000.0).abs() < (naive - 100_000.0).abs());
        assert!((pw - 100_000.0).abs() < 1e-8);
    }

    #[test]
    fn by_index_agrees_with_slice() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert_eq!(pairwise_sum(&v), pairwise_sum_by(v.len(), |i| v[i]));
    }
}
