//! Wilcoxon signed-rank test.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::average_ranks;

/// Largest sample size (after dropping zero differences) that uses the
/// exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero; p is defined as 1.
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub statistic: f64,
    pub w_plus: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Two-sided paired test on `x - y`. Zero differences are discarded, tied
/// magnitudes share average ranks. For `n <= 25` the p-value comes from
/// the exact permutation distribution of W+, otherwise from the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            p_value: 1.0,
            n: 0,
            method: WilcoxonMethod::AllZero,
        });
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&mags);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= EXACT_MAX_N {
        // average ranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
        let observed = libm::round(2.0 * w_plus) as usize;
        let (le, ge) = exact_tail_counts(&doubled, observed);
        let p_value = exact_two_sided(le, ge, n);
        return Ok(WilcoxonResult {
            statistic,
            w_plus,
            p_value,
            n,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = mags.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let dev = w_plus - mean;
    let p_value = if var <= 0.0 || dev.abs() <= 0.5 {
        1.0
    } else {
        let z = (dev.abs() - 0.5) / libm::sqrt(var);
        libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_value,
        n,
        method: WilcoxonMethod::Normal,
    })
}

/// Counts sign assignments with doubled W+ at most / at least `observed`.
fn exact_tail_counts(doubled: &[usize], observed: usize) -> (u64, u64) {
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let le = counts[..=observed.min(max)].iter().sum();
    let ge = if observed > max { 0 } else { counts[observed..].iter().sum() };
    (le, ge)
}

/// Two-sided exact p-value from tail counts over all `2^n` sign vectors.
pub fn exact_two_sided(le: u64, ge: u64, n: usize) -> f64 {
    let total = (1u64 << n) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_give_p_one() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, WilcoxonMethod::AllZero);
    }

    #[test]
    fn five_positive_differences() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
    }

    #[test]
    fn length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normal_branch_for_large_n() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + 1.0).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        assert!(r.p_value < 1e-6);
    }
}
