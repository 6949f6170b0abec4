//! Summation, moment and hypothesis-test helpers shared by the samplers'
//! self-checks and the acceptance suite.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Neumaier compensated sum. Order of `add` calls is the only source of
/// variation, so callers feed values in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().total()
}

/// Sample mean and unbiased sample variance, computed around the first value
/// so that a constant sample returns its value and zero variance exactly.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = values[0];
    let dev_mean = compensated_sum(values.iter().map(|v| v - shift)) / n as f64;
    let mean = shift + dev_mean;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| {
        let d = (v - shift) - dev_mean;
        d * d
    }));
    (mean, ss / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: Option<f64>,
}

impl TestResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value >= significance
    }
}

/// Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let sqrt_n = effective_n.sqrt();
    kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::arg("KS test needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(TestResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        degrees_of_freedom: None,
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("KS test needs non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
        degrees_of_freedom: None,
    })
}

fn chi_square_sf(statistic: f64, df: f64) -> Result<f64> {
    let dist = ChiSquared::new(df).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson goodness-of-fit of observed bin counts against bin probabilities.
/// Adjacent bins are merged until every expected count is at least 5.
pub fn chi_square_gof(counts: &[u64], probabilities: &[f64]) -> Result<TestResult> {
    if counts.len() != probabilities.len() || counts.is_empty() {
        return Err(Error::arg("counts and probabilities must have equal, nonzero length"));
    }
    let total: u64 = counts.iter().sum();
    let p_total: f64 = probabilities.iter().sum();
    let n = total as f64;
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probabilities) {
        obs += c as f64;
        exp += n * p / p_total;
        if exp >= 5.0 {
            merged.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => merged.push((obs, exp)),
        }
    }
    if merged.len() < 2 {
        return Err(Error::arg("too few populated bins for a chi-square test"));
    }
    let statistic: f64 = merged.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (merged.len() - 1) as f64;
    Ok(TestResult {
        statistic,
        p_value: chi_square_sf(statistic, df)?,
        degrees_of_freedom: Some(df),
    })
}

/// Bowker's test of symmetry for a square contingency table of paired
/// categories `(before, after)`. Exchangeable pairs give a symmetric table.
/// Cell pairs whose combined count is below `min_pair_count` are skipped.
pub fn bowker_symmetry(table: &[Vec<u64>], min_pair_count: u64) -> Result<TestResult> {
    let k = table.len();
    if table.iter().any(|row| row.len() != k) {
        return Err(Error::arg("contingency table must be square"));
    }
    let mut statistic = 0.0;
    let mut df = 0usize;
    for (i, row) in table.iter().enumerate() {
        for (j, &upper) in row.iter().enumerate().skip(i + 1) {
            let lower = table[j][i];
            if upper + lower >= min_pair_count.max(1) {
                let (a, b) = (upper as f64, lower as f64);
                statistic += (a - b) * (a - b) / (a + b);
                df += 1;
            }
        }
    }
    if df == 0 {
        return Err(Error::arg("no off-diagonal cell pairs are populated"));
    }
    Ok(TestResult {
        statistic,
        p_value: chi_square_sf(statistic, df as f64)?,
        degrees_of_freedom: Some(df as f64),
    })
}

/// Lag-`k` sample autocorrelation.
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n {
        return f64::NAN;
    }
    let (mean, _) = mean_and_variance(values);
    let denom = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let num = compensated_sum((0..n - lag).map(|i| (values[i] - mean) * (values[i + lag] - mean)));
    num / denom
}

/// Bin values on `[lo, hi)` into `bins` equal cells; values outside are clamped
/// into the end cells.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(compensated_sum(values), 11.0);
    }

    #[test]
    fn constant_sample_has_exact_mean_and_zero_variance() {
        let v = vec![0.1 * 0.1; 1000];
        let (m, var) = mean_and_variance(&v);
        assert_eq!(m, 0.1 * 0.1);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn kolmogorov_tail_reference_points() {
        // Standard critical values of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.9495) - 0.001).abs() < 1e-4);
    }

    #[test]
    fn ks_two_sample_identical_inputs() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ks_detects_shifted_sample() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let r = ks_one_sample(&a, |x| (x - 0.2).clamp(0.0, 1.0)).unwrap();
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn bowker_symmetric_table_has_zero_statistic() {
        let t = vec![vec![5, 3, 2], vec![3, 7, 1], vec![2, 1, 9]];
        let r = bowker_symmetry(&t, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.degrees_of_freedom, Some(3.0));
    }

    #[test]
    fn bowker_flags_one_way_flow() {
        let t = vec![vec![0, 100], vec![10, 0]];
        assert!(bowker_symmetry(&t, 1).unwrap().p_value < 1e-10);
    }

    #[test]
    fn chi_square_merges_sparse_bins() {
        let r = chi_square_gof(&[50, 50, 0, 1], &[0.49, 0.49, 0.01, 0.01]).unwrap();
        assert_eq!(r.degrees_of_freedom, Some(1.0));
    }
}
