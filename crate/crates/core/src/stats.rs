//! Small statistics helpers for run comparison: mean, interquartile range,
//! two-sided paired t-test, and a sign test as a robustness companion.

use crate::error::{Error, Result};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile(&s, 0.5)
}

/// (25th percentile, 75th percentile).
pub fn iqr(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("iqr"));
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((percentile(&s, 0.25), percentile(&s, 0.75)))
}

#[derive(Debug, Clone, Copy)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t_statistic: f64,
    /// Two-sided p-value; 1.0 when the differences have zero variance and
    /// zero mean (no evidence either way), flagged via `degenerate`.
    pub p_value: f64,
    pub degenerate: bool,
}

/// Two-sided paired Student's t-test on a - b.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::MisalignedRuns(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("paired_t_test needs >= 2 pairs"));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&diffs);
    let var = diffs.iter().map(|d| (d - md) * (d - md)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        // all differences identical: either exactly equal series (no
        // evidence) or a deterministic offset (certain difference)
        return Ok(PairedTest {
            mean_diff: md,
            t_statistic: if md == 0.0 { 0.0 } else { f64::INFINITY * md.signum() },
            p_value: if md == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = md / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTest { mean_diff: md, t_statistic: t, p_value: p.clamp(0.0, 1.0), degenerate: false })
}

#[derive(Debug, Clone, Copy)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    pub p_value: f64,
}

/// Two-sided exact sign test on a - b (ties dropped).
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::MisalignedRuns(a.len(), b.len()));
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut ties = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            pos += 1;
        } else if x < y {
            neg += 1;
        } else {
            ties += 1;
        }
    }
    let n = pos + neg;
    if n == 0 {
        return Ok(SignTest { positive: pos, negative: neg, ties, p_value: 1.0 });
    }
    let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
    let k = pos.min(neg) as u64;
    let p = (2.0 * dist.cdf(k)).min(1.0);
    Ok(SignTest { positive: pos, negative: neg, ties, p_value: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_median_basics() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn iqr_constant_series() {
        let (lo, hi) = iqr(&[5.0; 7]).unwrap();
        assert_eq!((lo, hi), (5.0, 5.0));
    }

    #[test]
    fn iqr_brackets_median() {
        let xs: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let (lo, hi) = iqr(&xs).unwrap();
        let med = median(&xs);
        assert!(lo <= med && med <= hi);
        assert_eq!((lo, hi), (5.0, 15.0));
    }

    #[test]
    fn t_test_identical_series() {
        let a = [1.0, 2.0, 3.0];
        let t = paired_t_test(&a, &a).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.mean_diff, 0.0);
        assert!(t.degenerate);
    }

    #[test]
    fn t_test_constant_offset() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0, 2.0, 3.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert_eq!(t.mean_diff, 1.0);
        assert!(t.p_value < 1e-12);
    }

    #[test]
    fn t_test_known_value() {
        // diffs = [1, 2, 3, 4, 5]: md = 3, sd = sqrt(2.5), t = 3/sqrt(0.5)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t_statistic - 3.0 / 0.5f64.sqrt()).abs() < 1e-12);
        // two-sided p for t = 4.2426, dof 4: ~ 0.0132 (standard table)
        assert!((t.p_value - 0.0132).abs() < 5e-4, "p {}", t.p_value);
    }

    #[test]
    fn t_test_symmetry() {
        let a = [1.0, 2.5, 3.0, 4.4];
        let b = [0.7, 2.9, 2.2, 4.0];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.mean_diff, -ba.mean_diff);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
    }

    #[test]
    fn t_test_misaligned() {
        assert!(paired_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sign_test_cases() {
        let a = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [1.0; 6];
        let s = sign_test(&a, &b).unwrap();
        assert_eq!((s.positive, s.negative), (6, 0));
        // 2 * 0.5^6 = 0.03125
        assert!((s.p_value - 0.03125).abs() < 1e-12);
        let even = sign_test(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_eq!(even.p_value, 1.0);
        let tied = sign_test(&a, &a).unwrap();
        assert_eq!(tied.ties, 6);
        assert_eq!(tied.p_value, 1.0);
    }
}
