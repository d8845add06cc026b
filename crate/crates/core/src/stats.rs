//! Small statistical helpers shared by the estimators: confidence intervals,
//! binomial tails and log-log regression.

use statrs::distribution::{Binomial, DiscreteCDF};

/// Two-sided normal quantile used for every reported interval (95%).
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson(successes: usize, trials: usize, z: f64) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval { lo: (center - half).max(0.0), hi: (center + half).min(1.0) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn interval(&self, z: f64) -> Interval {
        Interval { lo: self.mean - z * self.std_err, hi: self.mean + z * self.std_err }
    }
}

/// Sample mean and standard error with pairwise summation, so the result
/// does not depend on how the samples were produced in parallel.
pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, std_err: f64::NAN, count: 0 };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return MeanEstimate { mean, std_err: 0.0, count: 1 };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    MeanEstimate { mean, std_err: (var / n as f64).sqrt(), count: n }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `P(Bin(trials, q) >= k)`.
pub fn binomial_upper_tail(trials: u64, q: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > trials {
        return 0.0;
    }
    let dist = Binomial::new(q.clamp(0.0, 1.0), trials).expect("valid binomial parameters");
    dist.sf(k - 1)
}

/// `P(Bin(trials, 1/2) = k)` for moderate `trials`, computed in log space.
pub fn binomial_half_pmf(trials: usize, k: usize) -> f64 {
    if k > trials {
        return 0.0;
    }
    let lg = |m: usize| statrs::function::gamma::ln_gamma(m as f64 + 1.0);
    (lg(trials) - lg(k) - lg(trials - k) - trials as f64 * std::f64::consts::LN_2).exp()
}

/// Ordinary least squares of `y` on the columns of `x` plus an intercept.
/// Returns `[intercept, slope_1, .., slope_k]`.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let k = x.first().map_or(0, Vec::len) + 1;
    if n < k {
        return None;
    }
    // normal equations, solved with partial pivoting
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &yi) in x.iter().zip(y) {
        let mut full = Vec::with_capacity(k);
        full.push(1.0);
        full.extend_from_slice(row);
        for i in 0..k {
            for j in 0..k {
                a[i][j] += full[i] * full[j];
            }
            a[i][k] += full[i] * yi;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        let pivot = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot[col];
                for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    Some((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

/// Fit `value ≈ C · n^a · (1/mu)^b` by least squares in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub log_c: f64,
    pub n_exponent: f64,
    pub inv_mu_exponent: f64,
}

pub fn fit_power_law(cells: &[(f64, f64, f64)]) -> Option<PowerLawFit> {
    let x: Vec<Vec<f64>> = cells.iter().map(|&(n, mu, _)| vec![n.ln(), (1.0 / mu).ln()]).collect();
    let y: Vec<f64> = cells.iter().map(|&(_, _, v)| v.ln()).collect();
    let coef = least_squares(&x, &y)?;
    Some(PowerLawFit { log_c: coef[0], n_exponent: coef[1], inv_mu_exponent: coef[2] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_the_proportion() {
        let ci = wilson(30, 100, Z95);
        assert!(ci.contains(0.3));
        assert!(ci.lo > 0.2 && ci.hi < 0.4);
        let all = wilson(50, 50, Z95);
        assert_eq!(all.hi, 1.0);
    }

    #[test]
    fn binomial_tail_small_cases() {
        // P(Bin(2, 1/2) >= 1) = 3/4
        assert!((binomial_upper_tail(2, 0.5, 1) - 0.75).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(3, 0.2, 0), 1.0);
        assert_eq!(binomial_upper_tail(3, 0.2, 4), 0.0);
        assert!((binomial_half_pmf(4, 2) - 6.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_exact_power_law() {
        let mut cells = Vec::new();
        for &n in &[8.0, 16.0, 32.0] {
            for &mu in &[0.5, 0.125] {
                cells.push((n, mu, 3.0 * n * n / mu));
            }
        }
        let fit = fit_power_law(&cells).unwrap();
        assert!((fit.n_exponent - 2.0).abs() < 1e-9);
        assert!((fit.inv_mu_exponent - 1.0).abs() < 1e-9);
        assert!((fit.log_c - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
