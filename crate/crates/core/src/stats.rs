//! Time-series statistics of simulated markets.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::market::Trajectory;
use crate::{Error, Result};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.01;
pub const DEFAULT_EDGE_EXCLUSION: f64 = 0.02;
pub const DEFAULT_UNIFORMITY_BINS: usize = 50;
pub const MIN_TAIL_POINTS: usize = 100;
pub const MIN_BIN_COUNT: u64 = 100;
pub const MIN_UNIFORMITY_SAMPLES: usize = 100_000;
/// Largest relative deviation of an interior bin tolerated by the uniformity test.
pub const UNIFORMITY_TOLERANCE: f64 = 0.05;

/// Log returns of a trajectory; steps touching `d = 0` or `d = N` have no
/// finite log price and are counted in `skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    pub skipped: usize,
}

impl ReturnSeries {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.abs()).collect()
    }
}

pub fn log_returns(trajectory: &Trajectory) -> Result<ReturnSeries> {
    if trajectory.demands.len() < 2 {
        return Err(Error::EmptySeries("trajectory has fewer than two demands".into()));
    }
    let n = trajectory.n_total() as f64;
    let usable = |d: u32| d > 0 && (d as f64) < n;
    let mut values = Vec::with_capacity(trajectory.demands.len() - 1);
    let mut skipped = 0;
    for pair in trajectory.demands.windows(2) {
        let (d, next) = (pair[0], pair[1]);
        if usable(d) && usable(next) {
            let (d, next) = (d as f64, next as f64);
            values.push((next.ln() - (n - next).ln()) - (d.ln() - (n - d).ln()));
        } else {
            skipped += 1;
        }
    }
    if values.is_empty() {
        return Err(Error::EmptySeries("no step has two finite prices".into()));
    }
    Ok(ReturnSeries { values, skipped })
}

/// First-order return `(d' - d)(1/d + 1/(N - d))`; reduces to `Δ/d` when `d << N`.
pub fn linearized_return(d: u32, d_next: u32, n_total: u32) -> Result<f64> {
    if d == 0 || d >= n_total {
        return Err(Error::DemandOutOfRange {
            demand: d as i64,
            n_total,
        });
    }
    let delta = d_next as f64 - d as f64;
    Ok(delta * (1.0 / d as f64 + 1.0 / (n_total - d) as f64))
}

/// `P(X >= x)` at every distinct value `x`, ascending in `x`.
pub fn ccdf(magnitudes: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if out.last().is_some_and(|&(prev, _)| prev == x) {
            continue;
        }
        out.push((x, (sorted.len() - i) as f64 / n));
    }
    out
}

/// Least-squares slope of `log P(X >= x)` against `log x` over points with
/// `x >= x_min` and probability at least `p_min`.
pub fn log_log_slope(points: &[(f64, f64)], x_min: f64, p_min: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, p)| x >= x_min && x > 0.0 && p >= p_min && p > 0.0)
        .map(|&(x, p)| (x.ln(), p.ln()))
        .collect();
    least_squares_slope(&pts)
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Exponent of the complementary cumulative distribution.
    pub xi: f64,
    /// Exponent of the density, `xi + 1`.
    pub density_exponent: f64,
    pub tail_fraction: f64,
    pub n_tail: usize,
    pub standard_error: f64,
}

/// Hill estimator over the largest `floor(tail_fraction * n)` values.
pub fn hill_tail_exponent(magnitudes: &[f64], tail_fraction: f64) -> Result<TailFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 0.1) {
        return Err(Error::InvalidParams(format!(
            "tail fraction {tail_fraction} outside (0, 0.1]"
        )));
    }
    let k = (tail_fraction * magnitudes.len() as f64).floor() as usize;
    if k < MIN_TAIL_POINTS || k >= magnitudes.len() {
        return Err(Error::InsufficientData(format!(
            "{k} tail points, need at least {MIN_TAIL_POINTS}"
        )));
    }
    let mut sorted: Vec<f64> = magnitudes.to_vec();
    // Only the top k + 1 order statistics are needed.
    sorted.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(Error::Degenerate(format!(
            "order statistic {} is {threshold}",
            k + 1
        )));
    }
    let log_sum: f64 = sorted[..k].iter().map(|&x| (x / threshold).ln()).sum();
    if !(log_sum > 0.0) {
        return Err(Error::Degenerate("tail has no spread above the threshold".into()));
    }
    let xi = k as f64 / log_sum;
    Ok(TailFit {
        xi,
        density_exponent: xi + 1.0,
        tail_fraction,
        n_tail: k,
        standard_error: xi / (k as f64).sqrt(),
    })
}

/// Sample autocorrelation with the biased `1/T` normalization, lags
/// `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= 10 * max_lag || series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "series of length {} is too short for lag {max_lag}",
            series.len()
        )));
    }
    let t = series.len();
    let mean = series.iter().sum::<f64>() / t as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let variance = centered.iter().map(|x| x * x).sum::<f64>() / t as f64;
    if !(variance > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok((0..=max_lag)
        .map(|lag| {
            let cov: f64 = centered[..t - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            cov / t as f64 / variance
        })
        .collect())
}

/// `3 / sqrt(T)` band for a white-noise autocorrelation of length `T`.
pub fn noise_band(len: usize) -> f64 {
    3.0 / (len as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationBin {
    /// Mean distance from the nearer boundary of the samples in the bin.
    pub d: f64,
    pub lower: f64,
    pub upper: f64,
    pub mean_sq_return: f64,
    pub count: u64,
}

/// Which side of `N/2` is binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Previous demands `d` in `(0, N/2]`, binned on `d`.
    Lower,
    /// Previous demands in `(N/2, N)`, binned on `N - d`.
    Upper,
}

/// Mean squared log return conditioned on the previous demand, on
/// logarithmic bins of `(0, N/2]`. Bins without samples are omitted.
pub fn conditional_return_variance(trajectory: &Trajectory, n_bins: usize) -> Result<Vec<FluctuationBin>> {
    conditional_return_variance_on(trajectory, n_bins, Side::Lower)
}

pub fn conditional_return_variance_on(
    trajectory: &Trajectory,
    n_bins: usize,
    side: Side,
) -> Result<Vec<FluctuationBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidParams("need at least one bin".into()));
    }
    let n = trajectory.n_total();
    let half = n as f64 / 2.0;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| half.powf(k as f64 / n_bins as f64))
        .collect();
    let mut sum_d = vec![0.0; n_bins];
    let mut sum_sq = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    for pair in trajectory.demands.windows(2) {
        let (d, next) = (pair[0], pair[1]);
        if d == 0 || d >= n || next == 0 || next >= n {
            continue;
        }
        let distance = match side {
            Side::Lower if d as f64 <= half => d as f64,
            Side::Upper if d as f64 > half => (n - d) as f64,
            _ => continue,
        };
        let bin = edges[1..].partition_point(|&e| e < distance).min(n_bins - 1);
        let (a, b) = (d as f64, next as f64);
        let r = (b.ln() - (n as f64 - b).ln()) - (a.ln() - (n as f64 - a).ln());
        sum_d[bin] += distance;
        sum_sq[bin] += r * r;
        counts[bin] += 1;
    }
    let bins: Vec<FluctuationBin> = (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| FluctuationBin {
            d: sum_d[b] / counts[b] as f64,
            lower: edges[b],
            upper: edges[b + 1],
            mean_sq_return: sum_sq[b] / counts[b] as f64,
            count: counts[b],
        })
        .collect();
    if !bins.iter().any(|b| b.count >= MIN_BIN_COUNT) {
        return Err(Error::InsufficientData(format!(
            "no bin holds {MIN_BIN_COUNT} samples"
        )));
    }
    Ok(bins)
}

/// Log-log slope of mean squared return against `d` over well-occupied bins
/// whose mean `d` lies in `[d_min, d_max]`.
pub fn fluctuation_scaling_slope(bins: &[FluctuationBin], d_min: f64, d_max: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.count >= MIN_BIN_COUNT && b.d >= d_min && b.d <= d_max && b.mean_sq_return > 0.0)
        .map(|b| (b.d.ln(), b.mean_sq_return.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} occupied bins in [{d_min}, {d_max}], need 3",
            pts.len()
        )));
    }
    least_squares_slope(&pts).ok_or_else(|| Error::Degenerate("bins share one d value".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// Pearson chi-square statistic of the binned interior histogram.
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    /// Largest `|observed / expected - 1|` over the bins.
    pub max_relative_deviation: f64,
    pub relative_deviations: Vec<f64>,
    pub interior_samples: u64,
    pub pass: bool,
}

/// Compares the histogram of demands in `[e N, (1 - e) N]` with a uniform
/// distribution over those states, on `n_bins` bins of consecutive states.
pub fn uniformity_test(
    demands: &[u32],
    n_total: u32,
    edge_exclusion: f64,
    n_bins: usize,
) -> Result<UniformityReport> {
    if !(0.0..=0.1).contains(&edge_exclusion) {
        return Err(Error::InvalidParams(format!(
            "edge exclusion {edge_exclusion} outside [0, 0.1]"
        )));
    }
    if demands.len() < MIN_UNIFORMITY_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need {MIN_UNIFORMITY_SAMPLES}",
            demands.len()
        )));
    }
    let n = n_total as f64;
    let lo = (edge_exclusion * n).ceil() as u32;
    let hi = ((1.0 - edge_exclusion) * n).floor() as u32;
    let states = (hi - lo + 1) as usize;
    if n_bins == 0 || n_bins > states {
        return Err(Error::InvalidParams(format!(
            "{n_bins} bins for {states} interior states"
        )));
    }
    let mut per_state = vec![0u64; states];
    for &d in demands {
        if d >= lo && d <= hi {
            per_state[(d - lo) as usize] += 1;
        }
    }
    let total: u64 = per_state.iter().sum();
    if total == 0 {
        return Err(Error::InsufficientData("no samples in the interior".into()));
    }
    let mut chi_square = 0.0;
    let mut deviations = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let start = b * states / n_bins;
        let end = (b + 1) * states / n_bins;
        let observed: u64 = per_state[start..end].iter().sum();
        let expected = total as f64 * (end - start) as f64 / states as f64;
        chi_square += (observed as f64 - expected).powi(2) / expected;
        deviations.push(observed as f64 / expected - 1.0);
    }
    let max_relative_deviation = deviations.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(UniformityReport {
        chi_square,
        degrees_of_freedom: n_bins - 1,
        max_relative_deviation,
        relative_deviations: deviations,
        interior_samples: total,
        pass: max_relative_deviation < UNIFORMITY_TOLERANCE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    pub lower: u32,
    /// Exclusive.
    pub upper: u32,
    pub mean_change: f64,
    pub standard_error: f64,
    pub count: u64,
}

impl DriftBin {
    /// Mean change divided by its standard error.
    pub fn z_score(&self) -> f64 {
        if self.standard_error > 0.0 {
            self.mean_change / self.standard_error
        } else if self.mean_change == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Empirical `E[d_t - d_{t-1} | d_{t-1}]` on `n_bins` bins of consecutive
/// previous demands in `[e N, (1 - e) N]`.
pub fn demand_drift(
    trajectory: &Trajectory,
    edge_exclusion: f64,
    n_bins: usize,
) -> Result<Vec<DriftBin>> {
    let n = trajectory.n_total() as f64;
    let lo = (edge_exclusion * n).ceil() as u32;
    let hi = ((1.0 - edge_exclusion) * n).floor() as u32;
    let states = (hi - lo + 1) as usize;
    if n_bins == 0 || n_bins > states {
        return Err(Error::InvalidParams(format!(
            "{n_bins} bins for {states} interior states"
        )));
    }
    let mut sum = vec![0.0; n_bins];
    let mut sum_sq = vec![0.0; n_bins];
    let mut count = vec![0u64; n_bins];
    let bin_of = |d: u32| ((d - lo) as usize * n_bins) / states;
    for pair in trajectory.demands.windows(2) {
        let d = pair[0];
        if d < lo || d > hi {
            continue;
        }
        let change = pair[1] as f64 - d as f64;
        let b = bin_of(d);
        sum[b] += change;
        sum_sq[b] += change * change;
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| {
            let c = count[b] as f64;
            let mean = if c > 0.0 { sum[b] / c } else { 0.0 };
            let var = if c > 1.0 {
                (sum_sq[b] - c * mean * mean) / (c - 1.0)
            } else {
                0.0
            };
            let start = lo + (b * states).div_ceil(n_bins) as u32;
            let end = lo + ((b + 1) * states).div_ceil(n_bins) as u32;
            DriftBin {
                lower: start,
                upper: end,
                mean_change: mean,
                standard_error: (var.max(0.0) / c.max(1.0)).sqrt(),
                count: count[b],
            }
        })
        .collect())
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
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
    d
}

/// `threshold,ccdf`.
pub fn write_ccdf_csv<W: Write>(points: &[(f64, f64)], writer: W) -> Result<()> {
    write_two_columns(["threshold", "ccdf"], points.iter().map(|&(x, p)| (x.to_string(), p.to_string())), writer)
}

/// `lag,acf`.
pub fn write_acf_csv<W: Write>(acf: &[f64], writer: W) -> Result<()> {
    write_two_columns(["lag", "acf"], acf.iter().enumerate().map(|(l, a)| (l.to_string(), a.to_string())), writer)
}

pub fn write_fluctuation_csv<W: Write>(bins: &[FluctuationBin], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for bin in bins {
        out.serialize(bin)?;
    }
    out.flush()?;
    Ok(())
}

fn write_two_columns<W: Write>(
    header: [&str; 2],
    rows: impl Iterator<Item = (String, String)>,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header)?;
    for (a, b) in rows {
        out.write_record([a, b])?;
    }
    out.flush()?;
    Ok(())
}
