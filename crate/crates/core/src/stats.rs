//! Small statistical helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::scalar::Real;

/// Sequential left-to-right mean; summation order is fixed.
pub fn mean<R: Real>(xs: &[R]) -> R {
    if xs.is_empty() {
        return R::nan();
    }
    let s = xs.iter().fold(R::zero(), |acc, &x| acc + x);
    s / R::from_usize(xs.len()).unwrap()
}

/// Standard deviation with divisor `n` (two-pass).
pub fn std_pop<R: Real>(xs: &[R]) -> R {
    let m = mean(xs);
    let ss = xs.iter().fold(R::zero(), |acc, &x| acc + (x - m) * (x - m));
    (ss / R::from_usize(xs.len()).unwrap()).sqrt()
}

/// Empirical quantile with "higher" interpolation: the order statistic at
/// position `ceil((n - 1) q)` of the sorted sample.
pub fn quantile_higher<R: Real>(xs: &[R], q: R) -> R {
    assert!(!xs.is_empty(), "quantile of empty sample");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_higher_sorted(&v, q)
}

pub fn quantile_higher_sorted<R: Real>(sorted: &[R], q: R) -> R {
    let n = sorted.len();
    let pos = (R::from_usize(n - 1).unwrap() * q).ceil();
    let idx = pos.to_usize().unwrap_or(0).min(n - 1);
    sorted[idx]
}

/// Linear-interpolation quantile (numpy "linear", Hyndman–Fan type 7).
pub fn quantile_linear_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn higher_quantile_picks_upper_order_statistic() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_higher(&xs, 0.5), 3.0);
        assert_eq!(quantile_higher(&xs, 0.0), 1.0);
        assert_eq!(quantile_higher(&xs, 1.0), 4.0);
        assert_eq!(quantile_higher(&[1.0f32, 2.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn std_uses_divisor_n() {
        let xs = [1.0f64, 3.0];
        assert_eq!(std_pop(&xs), 1.0);
        assert_eq!(mean(&[2.0f32, 4.0]), 3.0);
    }

    #[test]
    fn normal_helpers_invert() {
        for p in [0.01, 0.3, 0.5, 0.95] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-9);
        }
        assert!((norm_quantile(0.95) - 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn linear_quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_linear_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_linear_sorted(&s, 1.0), 3.0);
    }
}
