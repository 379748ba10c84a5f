//! Distribution-free confidence bounds and visit-count histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default confidence parameter.
pub const DEFAULT_DELTA: f64 = 1e-3;

/// `sqrt(ln(2/delta) / (2n))`: the Hoeffding half-width for a mean of `n`
/// values in `[0,1]`, which is also the DKW bound on the sup-distance between
/// an empirical and a true distribution function.
pub fn hoeffding_halfwidth(n: u64, delta: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Monte Carlo mean of a `[0,1]`-valued statistic with a Hoeffding half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub halfwidth: f64,
    pub reps: u64,
    pub delta: f64,
}

impl EstimateWithCI {
    pub fn from_sum(sum: f64, reps: u64, delta: f64) -> Self {
        Self {
            mean: if reps == 0 { f64::NAN } else { sum / reps as f64 },
            halfwidth: hoeffding_halfwidth(reps, delta),
            reps,
            delta,
        }
    }

    pub fn lo(&self) -> f64 {
        (self.mean - self.halfwidth).max(0.0)
    }

    pub fn hi(&self) -> f64 {
        (self.mean + self.halfwidth).min(1.0)
    }
}

/// `x^n` with `0^0 = 1`.
pub fn pow_visits(x: f64, n: u64) -> f64 {
    if n == 0 {
        1.0
    } else {
        x.powi(n.min(i32::MAX as u64) as i32)
    }
}

/// Empirical law of a nonnegative integer count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = u64>) -> Self {
        let mut counts: Vec<u64> = Vec::new();
        let mut total = 0;
        for v in values {
            let v = v as usize;
            if v >= counts.len() {
                counts.resize(v + 1, 0);
            }
            counts[v] += 1;
            total += 1;
        }
        Self { counts, total }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, n: u64) -> u64 {
        self.counts.get(n as usize).copied().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * *c as f64)
            .sum();
        s / self.total as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(n, c)| (n as f64 - m).powi(2) * *c as f64)
            .sum();
        s / (self.total as f64 - 1.0).max(1.0)
    }

    pub fn max(&self) -> u64 {
        self.counts.len().saturating_sub(1) as u64
    }

    /// Empirical generating function `mean(x^V)`.
    pub fn pgf(&self, x: f64) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        let mut acc = 0.0;
        for &c in self.counts.iter().rev() {
            acc = acc * x + c as f64;
        }
        acc / self.total as f64
    }

    /// Empirical `P(V >= t)`.
    pub fn tail(&self, t: u64) -> f64 {
        let above: u64 = self.counts.iter().skip(t as usize).sum();
        above as f64 / self.total as f64
    }

    /// Empirical `P(V <= t)`.
    pub fn cdf(&self, t: u64) -> f64 {
        1.0 - self.tail(t + 1)
    }

    pub fn pgf_estimate(&self, x: f64, delta: f64) -> Result<EstimateWithCI> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("pgf argument must lie in [0,1), got {x}")));
        }
        Ok(EstimateWithCI {
            mean: self.pgf(x),
            halfwidth: hoeffding_halfwidth(self.total, delta),
            reps: self.total,
            delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halfwidth_formula() {
        let h = hoeffding_halfwidth(100_000, 1e-3);
        assert!((h - 0.006_165).abs() < 1e-5, "{h}");
        assert!(hoeffding_halfwidth(0, 0.1).is_infinite());
    }

    #[test]
    fn histogram_basics() {
        let h = Histogram::from_values([0, 0, 1, 3]);
        assert_eq!(h.total(), 4);
        assert_eq!(h.pgf(0.0), 0.5);
        assert!((h.pgf(0.5) - (2.0 + 0.5 + 0.125) / 4.0).abs() < 1e-15);
        assert_eq!(h.tail(1), 0.5);
        assert_eq!(h.cdf(0), 0.5);
        assert_eq!(h.max(), 3);
        assert!((h.mean() - 1.0).abs() < 1e-15);
        assert!(h.pgf_estimate(1.0, 0.01).is_err());
        assert_eq!(pow_visits(0.0, 0), 1.0);
        assert_eq!(pow_visits(0.0, 2), 0.0);
    }
}
