//! Confidence intervals: Student-t for means, BCa bootstrap for standard
//! deviations.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use cilab_core::stats::{mean, sample_std};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    T,
    Bca,
    /// BCa was not computable (degenerate bootstrap) and the plain
    /// percentile interval was used instead.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: CiMethod,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `mean +- t_{(1+level)/2, n-1} s / sqrt(n)`.
pub fn mean_ci_t(samples: &[f64], level: f64) -> LabResult<Interval> {
    let n = samples.len();
    if n < 2 {
        return Err(LabError::Config(format!(
            "a t interval needs at least two samples, got {n}"
        )));
    }
    let m = mean(samples);
    let s = sample_std(samples);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| LabError::Config(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * s / (n as f64).sqrt();
    Ok(Interval {
        estimate: m,
        lo: m - half,
        hi: m + half,
        method: CiMethod::T,
    })
}

/// Quantile `q` of sorted data by linear interpolation between order
/// statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile_interval(sorted_boot: &[f64], level: f64) -> (f64, f64) {
    let tail = (1.0 - level) / 2.0;
    (
        quantile_sorted(sorted_boot, tail),
        quantile_sorted(sorted_boot, 1.0 - tail),
    )
}

/// BCa endpoints from a sorted bootstrap distribution, bias correction `z0`
/// and acceleration `a`. With `z0 = a = 0` this is the percentile interval.
pub fn bca_endpoints(sorted_boot: &[f64], z0: f64, a: f64, level: f64) -> (f64, f64) {
    let normal = standard_normal();
    let adjust = |z: f64| normal.cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)));
    let tail = (1.0 - level) / 2.0;
    let lo = adjust(normal.inverse_cdf(tail));
    let hi = adjust(normal.inverse_cdf(1.0 - tail));
    (quantile_sorted(sorted_boot, lo), quantile_sorted(sorted_boot, hi))
}

/// Acceleration from the jackknife skewness of `stat`.
pub fn jackknife_acceleration(samples: &[f64], stat: impl Fn(&[f64]) -> f64) -> f64 {
    let n = samples.len();
    let mut buf = Vec::with_capacity(n - 1);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend(samples.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
            stat(&buf)
        })
        .collect();
    let m = mean(&loo);
    let num: f64 = loo.iter().map(|v| (m - v).powi(3)).sum();
    let den: f64 = loo.iter().map(|v| (m - v).powi(2)).sum();
    if den > 0.0 {
        num / (6.0 * den.powf(1.5))
    } else {
        0.0
    }
}

/// Sample standard deviation with a BCa bootstrap interval.
///
/// Needs `n >= 8` and at least 1000 resamples. Falls back to the percentile
/// interval (flagged by [`CiMethod::Percentile`]) when the bootstrap
/// distribution is constant or lies entirely on one side of the estimate.
pub fn std_ci_bca<R: Rng + ?Sized>(samples: &[f64], resamples: usize, level: f64, rng: &mut R) -> LabResult<Interval> {
    let n = samples.len();
    if n < 8 {
        return Err(LabError::Config(format!("BCa needs at least 8 samples, got {n}")));
    }
    if resamples < 1000 {
        return Err(LabError::Config(format!(
            "BCa needs at least 1000 resamples, got {resamples}"
        )));
    }
    let estimate = sample_std(samples);
    let mut draw = vec![0.0; n];
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| {
            for d in draw.iter_mut() {
                *d = samples[rng.random_range(0..n)];
            }
            sample_std(&draw)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let below = boot.iter().filter(|&&b| b < estimate).count();
    let fallback = boot[0] == boot[resamples - 1] || below == 0 || below == resamples;
    let (lo, hi, method) = if fallback {
        let (lo, hi) = percentile_interval(&boot, level);
        (lo, hi, CiMethod::Percentile)
    } else {
        let z0 = standard_normal().inverse_cdf(below as f64 / resamples as f64);
        let a = jackknife_acceleration(samples, sample_std);
        let (lo, hi) = bca_endpoints(&boot, z0, a, level);
        (lo, hi, CiMethod::Bca)
    };
    Ok(Interval {
        estimate,
        lo,
        hi,
        method,
    })
}
