//! Goodness-of-fit and independence tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{Error, Result};

/// Minimum expected count per cell for chi-square tests.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Q_KS(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2j²λ²).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample KS test of `samples` against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::TestInapplicable("KS test needs at least one sample".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(TestResult { statistic: d, p_value: ks_p(d, n) })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TestInapplicable("KS test needs non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    Ok(TestResult { statistic: d, p_value: ks_p(d, n_eff) })
}

fn chi_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if stat <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).map_or(f64::NAN, |c| c.sf(stat))
}

/// Pearson goodness-of-fit test; `expected` is rescaled to the observed total.
pub fn chi_square(counts: &[u64], expected: &[f64]) -> Result<TestResult> {
    if counts.len() != expected.len() || counts.is_empty() {
        return Err(Error::InvalidInput("counts and expected must have equal, non-zero length".into()));
    }
    let total: f64 = counts.iter().sum::<u64>() as f64;
    let norm: f64 = expected.iter().sum();
    let mut stat = 0.0;
    for (c, e) in counts.iter().zip(expected) {
        let e = e * total / norm;
        if e < MIN_EXPECTED {
            return Err(Error::TestInapplicable(format!("expected count {e:.3} < {MIN_EXPECTED}")));
        }
        stat += (*c as f64 - e).powi(2) / e;
    }
    Ok(TestResult { statistic: stat, p_value: chi_sf(stat, counts.len() - 1) })
}

/// Merge trailing cells until every expected count reaches [`MIN_EXPECTED`].
pub fn pool_tail(counts: &[u64], expected: &[f64]) -> (Vec<u64>, Vec<f64>) {
    let mut c = Vec::new();
    let mut e = Vec::new();
    let (mut acc_c, mut acc_e) = (0u64, 0.0);
    for (ci, ei) in counts.iter().zip(expected) {
        acc_c += ci;
        acc_e += ei;
        if acc_e >= MIN_EXPECTED {
            c.push(acc_c);
            e.push(acc_e);
            acc_c = 0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_c > 0 {
        match (c.last_mut(), e.last_mut()) {
            (Some(lc), Some(le)) => {
                *lc += acc_c;
                *le += acc_e;
            }
            _ => {
                c.push(acc_c);
                e.push(acc_e);
            }
        }
    }
    (c, e)
}

/// Chi-square test of independence on an r×c table. Empty rows/columns are dropped.
pub fn contingency_independence(table: &[Vec<u64>]) -> Result<TestResult> {
    let cols = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput("ragged contingency table".into()));
    }
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    let keep: Vec<usize> = (0..cols).filter(|&j| rows.iter().map(|r| r[j]).sum::<u64>() > 0).collect();
    if rows.len() < 2 || keep.len() < 2 {
        return Err(Error::TestInapplicable("contingency table needs at least 2×2 non-empty cells".into()));
    }
    let row_sum: Vec<f64> = rows.iter().map(|r| keep.iter().map(|&j| r[j]).sum::<u64>() as f64).collect();
    let col_sum: Vec<f64> = keep.iter().map(|&j| rows.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let total: f64 = row_sum.iter().sum();
    let mut stat = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (jj, &j) in keep.iter().enumerate() {
            let e = row_sum[i] * col_sum[jj] / total;
            if e < MIN_EXPECTED {
                return Err(Error::TestInapplicable(format!("expected cell count {e:.3} < {MIN_EXPECTED}")));
            }
            stat += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let dof = (rows.len() - 1) * (keep.len() - 1);
    Ok(TestResult { statistic: stat, p_value: chi_sf(stat, dof) })
}

/// Homogeneity of two categorical samples (2×k contingency).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult> {
    contingency_independence(&[a.to_vec(), b.to_vec()])
}

/// Table of time-quantile bins × categories; time bins are sample quartiles
/// (or `bins`-quantiles) of `times`.
pub fn time_category_table(times: &[f64], categories: &[usize], bins: usize) -> Vec<Vec<u64>> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..bins).map(|k| sorted[k * sorted.len() / bins]).collect();
    let ncat = categories.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; ncat]; bins];
    for (t, c) in times.iter().zip(categories) {
        let b = cuts.iter().filter(|cut| *t >= **cut).count();
        table[b][*c] += 1;
    }
    table
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Maximum-likelihood exponential rate n / Σ t.
pub fn fit_exponential_rate(times: &[f64]) -> f64 {
    times.len() as f64 / times.iter().sum::<f64>()
}

/// KS test of `times` against the exponential law with fitted rate.
pub fn ks_exponential(times: &[f64]) -> Result<(TestResult, f64)> {
    let rate = fit_exponential_rate(times);
    Ok((ks_test(times, |t| 1.0 - (-rate * t).exp())?, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_known_values() {
        // Q_KS(1.36) ≈ 0.0493, Q_KS(1.63) ≈ 0.0098.
        assert!((kolmogorov_sf(1.36) - 0.0493).abs() < 1e-3);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn exact_expected_counts() {
        let r = chi_square(&[10, 20, 30], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn small_expected_is_inapplicable() {
        assert!(matches!(chi_square(&[1, 2], &[1.0, 2.0]), Err(Error::TestInapplicable(_))));
        assert!(matches!(
            contingency_independence(&[vec![1, 2], vec![2, 1]]),
            Err(Error::TestInapplicable(_))
        ));
    }

    #[test]
    fn pooling_reaches_minimum() {
        let (c, e) = pool_tail(&[50, 30, 3, 1, 1], &[50.0, 30.0, 3.0, 1.0, 1.0]);
        assert_eq!(c, vec![50, 30, 5]);
        assert!(e.iter().all(|v| *v >= MIN_EXPECTED));
    }

    #[test]
    fn two_sample_identical() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn contingency_perfect_dependence_rejects() {
        let r = contingency_independence(&[vec![100, 0], vec![0, 100]]).unwrap();
        assert!(r.p_value < 1e-10);
    }
}
