//! Bootstrap intervals, Gaussian KDE and box-plot statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (samples.len() - 1) as f64).sqrt()
}

/// Quantile of sorted data by linear interpolation between order
/// statistics (position `(n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(samples: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParam(format!("level must be in (0, 1), got {level}")));
    }
    if resamples == 0 {
        return Err(Error::InvalidParam("resamples must be at least 1".into()));
    }
    check_finite(samples)?;
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let total: f64 = (0..n).map(|_| samples[rng.random_range(0..n)]).sum();
            total / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    // A resampled mean cannot leave the data range; clamping removes
    // summation rounding (constant input gives exactly that constant).
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        quantile_sorted(&means, tail).clamp(lo, hi),
        quantile_sorted(&means, 1.0 - tail).clamp(lo, hi),
    ))
}

/// Scott's rule `n^(-1/5) * sd`, floored at [`BANDWIDTH_FLOOR`].
pub fn scott_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    (n.powf(-0.2) * std_dev(samples)).max(BANDWIDTH_FLOOR)
}

/// Gaussian kernel density estimate of `samples` evaluated at `grid`.
pub fn kde(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    check_finite(samples)?;
    check_finite(grid)?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam("kde grid must be strictly increasing".into()));
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h.max(BANDWIDTH_FLOOR),
        Some(h) => return Err(Error::InvalidParam(format!("bandwidth must be positive, got {h}"))),
        None => scott_bandwidth(samples),
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            let s: f64 = samples
                .iter()
                .map(|&xi| {
                    let z = (x - xi) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            s * norm
        })
        .collect())
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// Grid location of the highest density; the first one on ties.
pub fn kde_peak(grid: &[f64], densities: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&x, &d) in grid.iter().zip(densities) {
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((x, d));
        }
    }
    best.map(|(x, _)| x)
}

/// Whether the density peak of `candidate` lies left of `baseline`'s on a
/// shared grid and bandwidth rule. Lower distance means closer to ground
/// truth, so a leftward shift is an improvement.
pub fn shifted_left(baseline: &[f64], candidate: &[f64], grid_points: usize) -> Result<bool> {
    let all: Vec<f64> = baseline.iter().chain(candidate).copied().collect();
    check_finite(&all)?;
    let pad = 3.0 * scott_bandwidth(baseline).max(scott_bandwidth(candidate));
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
    let grid = linspace(lo, hi, grid_points.max(2));
    let pb = kde_peak(&grid, &kde(baseline, &grid, None)?);
    let pc = kde_peak(&grid, &kde(candidate, &grid, None)?);
    Ok(matches!((pb, pc), (Some(b), Some(c)) if c < b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Ascending.
    pub outliers: Vec<f64>,
}

/// Tukey box statistics: whiskers reach the most extreme data within
/// 1.5 IQR of the quartiles and everything beyond them is an outlier.
pub fn box_stats(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    check_finite(samples)?;
    let s = sorted(samples);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || s.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
    let whisker_low = inside().next().unwrap_or(q1).min(q1);
    let whisker_high = inside().last().unwrap_or(q3).max(q3);
    let outliers = s
        .iter()
        .copied()
        .filter(|&x| x < whisker_low || x > whisker_high)
        .collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        iqr,
        whisker_low,
        whisker_high,
        outliers,
    })
}
