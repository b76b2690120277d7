//! Sample statistics for Monte Carlo estimators.

use serde::{Deserialize, Serialize};

/// A point estimate with its standard error and the sample count behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            samples: 0,
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        Estimate {
            value: self.value * factor,
            stderr: self.stderr * factor.abs(),
            samples: self.samples,
        }
    }

    /// Sum of independent estimates; errors add in quadrature.
    pub fn add_independent(self, other: Estimate) -> Self {
        Estimate {
            value: self.value + other.value,
            stderr: self.stderr.hypot(other.stderr),
            samples: self.samples + other.samples,
        }
    }

    /// z-score of `self - other`, treating both as independent.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        z_score(self.value - other.value, self.stderr.hypot(other.stderr), self.value.abs().max(other.value.abs()))
    }

    pub fn z_against_exact(&self, exact: f64) -> f64 {
        z_score(self.value - exact, self.stderr, self.value.abs().max(exact.abs()))
    }
}

fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-9 * scale.max(1.0) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            value: f64::NAN,
            stderr: f64::NAN,
            samples: 0,
        };
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let stderr = if n > 1 {
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate {
        value: mean,
        stderr,
        samples: n,
    }
}

pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + compensated_sum(logs.iter().map(|&l| (l - max).exp())).ln()
}

/// Mean and standard error of `exp(log_w)` over the samples, computed after
/// shifting by the largest log-weight so no intermediate overflows.
/// Returned as `(log_scale, scaled)`: the estimate is `exp(log_scale) * scaled`.
pub fn log_weighted_mean(log_weights: &[f64]) -> (f64, Estimate) {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let zeros = vec![0.0; log_weights.len()];
        return (0.0, mean_stderr(&zeros));
    }
    let scaled: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    (max, mean_stderr(&scaled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr_of_known_sample() {
        let e = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lse_handles_huge_logs() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_weighted_mean_matches_linear() {
        let logs = [0.1f64, -0.3, 0.7, 0.0];
        let (shift, est) = log_weighted_mean(&logs);
        let lin = mean_stderr(&logs.map(f64::exp));
        assert!((shift.exp() * est.value - lin.value).abs() < 1e-14);
        assert!((shift.exp() * est.stderr - lin.stderr).abs() < 1e-14);
    }

    #[test]
    fn z_scores() {
        let a = Estimate { value: 1.0, stderr: 0.0, samples: 1 };
        assert_eq!(a.z_against_exact(1.0), 0.0);
        assert!(a.z_against_exact(2.0).is_infinite());
        let b = Estimate { value: 1.3, stderr: 0.1, samples: 1 };
        assert!((b.z_against_exact(1.0) - 3.0).abs() < 1e-12);
    }
}
