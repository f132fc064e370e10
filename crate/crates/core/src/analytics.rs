//! Evaluation math: the distance law between two uniform points of a square,
//! inter-distance histograms, the χ² index, empirical (C)CDFs, and
//! multi-run aggregation with Student-t confidence bands.
//!
//! Distances are normalized by the area side, so the reference density
//! lives on `[0, √2]`.

use crate::geometry::Position;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("normalized distance {0} outside [0, sqrt 2]")]
    OutOfDomain(f64),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("no samples")]
    EmptySamples,
    #[error("every bin has zero expected mass")]
    NoExpectedMass,
    #[error("series {0} has timestamps that do not match series 0")]
    Misaligned(usize),
    #[error("no series to aggregate")]
    NoRuns,
}

/// Density of the distance between two uniform points of the unit square.
pub fn q_pdf(x: f64) -> Result<f64, AnalyticsError> {
    if !(0.0..=SQRT_2).contains(&x) {
        return Err(AnalyticsError::OutOfDomain(x));
    }
    if x < 1.0 {
        return Ok(2.0 * x * (x * x - 4.0 * x + PI));
    }
    let g = (x * x - 1.0).max(0.0).sqrt();
    Ok((2.0 * x * (4.0 * g - (x * x + 2.0 - PI) - 4.0 * g.atan())).max(0.0))
}

/// Distribution function of [`q_pdf`], in closed form.
pub fn q_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= SQRT_2 {
        return 1.0;
    }
    let x2 = x * x;
    if x < 1.0 {
        PI * x2 - 8.0 / 3.0 * x2 * x + 0.5 * x2 * x2
    } else {
        let g = (x2 - 1.0).sqrt();
        1.0 / 3.0 + (PI - 2.0) * x2 - 0.5 * x2 * x2 + 4.0 / 3.0 * (2.0 * x2 + 1.0) * g - 4.0 * x2 * g.atan()
    }
}

/// `(x, q(x))` at the midpoints of `rows` equal cells over `[0, √2]`.
pub fn q_table(rows: usize) -> Vec<(f64, f64)> {
    let w = SQRT_2 / rows as f64;
    (0..rows)
        .map(|i| {
            let x = (i as f64 + 0.5) * w;
            (x, q_pdf(x).expect("midpoint inside the domain"))
        })
        .collect()
}

/// Width of one of `n_bins` equal bins over `[0, √2]`.
pub fn bin_width(n_bins: usize) -> f64 {
    SQRT_2 / n_bins as f64
}

#[inline]
pub fn bin_of(x: f64, n_bins: usize) -> usize {
    ((x / bin_width(n_bins)) as usize).min(n_bins - 1)
}

/// Probability mass of each bin under the square line-picking law.
pub fn spatial_bin_probabilities(n_bins: usize) -> Vec<f64> {
    let w = bin_width(n_bins);
    (0..n_bins)
        .map(|i| {
            let hi = if i + 1 == n_bins { SQRT_2 } else { (i + 1) as f64 * w };
            q_cdf(hi) - q_cdf(i as f64 * w)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn empty(n_bins: usize) -> Self {
        let w = bin_width(n_bins);
        let mut bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * w).collect();
        bin_edges[n_bins] = SQRT_2;
        Self { bin_edges, counts: vec![0; n_bins], total: 0 }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, x: f64) {
        let b = bin_of(x, self.n_bins());
        self.counts[b] += 1;
        self.total += 1;
    }

    pub fn from_samples(samples: &[f64], n_bins: usize) -> Self {
        let mut h = Self::empty(n_bins);
        for &x in samples {
            h.add(x);
        }
        h
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Normalized distance of every unordered pair.
pub fn interdistance_samples(positions: &[Position], area_side: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len() * positions.len().saturating_sub(1) / 2);
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            out.push(a.distance(b) / area_side);
        }
    }
    out
}

/// Histogram of all unordered pair distances without materializing them.
pub fn pair_distance_histogram(positions: &[Position], area_side: f64, n_bins: usize) -> Histogram {
    let mut h = Histogram::empty(n_bins);
    let scale = n_bins as f64 / (SQRT_2 * area_side);
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            let bin = ((a.distance(b) * scale) as usize).min(n_bins - 1);
            h.counts[bin] += 1;
        }
    }
    h.total = h.counts.iter().sum();
    h
}

/// Node-pair distance histogram: the reference for uniformity over nodes.
pub fn nodal_reference(all_node_positions: &[Position], area_side: f64, n_bins: usize) -> Histogram {
    pair_distance_histogram(all_node_positions, area_side, n_bins)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// Uniform over the area.
    Spatial,
    /// Uniform over the nodes, as an empirical node-pair histogram.
    Nodal(Histogram),
}

impl Reference {
    pub fn bin_probabilities(&self, n_bins: usize) -> Vec<f64> {
        match self {
            Reference::Spatial => spatial_bin_probabilities(n_bins),
            Reference::Nodal(h) => {
                assert_eq!(h.n_bins(), n_bins, "nodal reference binned differently");
                h.probabilities()
            }
        }
    }
}

/// Pearson statistic Σ (O - E)² / E over bins with E > 0, where E is the
/// reference mass scaled to the number of samples.
pub fn chi_squared_from_counts(observed: &[u64], probabilities: &[f64]) -> Result<f64, AnalyticsError> {
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(AnalyticsError::EmptySamples);
    }
    let mut stat = 0.0;
    let mut any = false;
    for (&o, &p) in observed.iter().zip(probabilities) {
        let e = p * total as f64;
        if e > 0.0 {
            any = true;
            stat += (o as f64 - e).powi(2) / e;
        }
    }
    if any {
        Ok(stat)
    } else {
        Err(AnalyticsError::NoExpectedMass)
    }
}

/// The same statistic computed on bin densities rather than counts:
/// Σ (f̂ - f)² / f with f̂ = O / (n w) and f = p / w. Equals the count form
/// divided by `n * w`, so it does not grow with the number of samples.
pub fn density_index_from_counts(observed: &[u64], probabilities: &[f64]) -> Result<f64, AnalyticsError> {
    let total: u64 = observed.iter().sum();
    let chi = chi_squared_from_counts(observed, probabilities)?;
    Ok(chi / (total as f64 * bin_width(observed.len())))
}

pub fn chi_squared_index(samples: &[f64], reference: &Reference, n_bins: usize) -> Result<f64, AnalyticsError> {
    if n_bins < 2 {
        return Err(AnalyticsError::TooFewBins(n_bins));
    }
    if samples.is_empty() {
        return Err(AnalyticsError::EmptySamples);
    }
    let h = Histogram::from_samples(samples, n_bins);
    chi_squared_from_counts(&h.counts, &reference.bin_probabilities(n_bins))
}

pub fn density_index(samples: &[f64], reference: &Reference, n_bins: usize) -> Result<f64, AnalyticsError> {
    if n_bins < 2 {
        return Err(AnalyticsError::TooFewBins(n_bins));
    }
    if samples.is_empty() {
        return Err(AnalyticsError::EmptySamples);
    }
    let h = Histogram::from_samples(samples, n_bins);
    density_index_from_counts(&h.counts, &reference.bin_probabilities(n_bins))
}

/// Quantile of the χ² distribution with `dof` degrees of freedom.
pub fn chi_squared_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(p)
}

/// Empirical complementary CDF: for each distinct value v (ascending), the
/// fraction of samples ≥ v.
pub fn ccdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        if out.last().map_or(true, |(last, _)| last != x) {
            out.push((*x, (v.len() - i) as f64 / n));
        }
    }
    out
}

/// Evaluates a step CCDF from [`ccdf`] at an arbitrary point.
pub fn ccdf_at(curve: &[(f64, f64)], x: f64) -> f64 {
    match curve.iter().position(|(v, _)| *v >= x) {
        Some(i) => curve[i].1,
        None => 0.0,
    }
}

/// Empirical CDF: for each distinct value v, the fraction of samples ≤ v.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        match out.last_mut() {
            Some((last, f)) if last == x => *f = (i + 1) as f64 / n,
            _ => out.push((*x, (i + 1) as f64 / n)),
        }
    }
    out
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub run_index: u32,
    pub samples: Vec<(f64, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, run_index: u32) -> Self {
        Self { name: name.into(), run_index, samples: Vec::new() }
    }

    pub fn push(&mut self, t: f64, value: f64) {
        debug_assert!(self.samples.last().map_or(true, |(last, _)| *last <= t));
        self.samples.push((t, value));
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregatePoint {
    pub t: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub runs: usize,
}

/// Pointwise mean and two-sided Student-t interval at level `1 - alpha`.
/// A single series yields a zero-width band.
pub fn aggregate_runs(series: &[MetricSeries], alpha: f64) -> Result<Vec<AggregatePoint>, AnalyticsError> {
    let first = series.first().ok_or(AnalyticsError::NoRuns)?;
    for (k, s) in series.iter().enumerate().skip(1) {
        if s.samples.len() != first.samples.len() || s.samples.iter().zip(&first.samples).any(|(a, b)| a.0 != b.0) {
            return Err(AnalyticsError::Misaligned(k));
        }
    }
    let n = series.len();
    let t_crit = if n >= 2 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof >= 1").inverse_cdf(1.0 - alpha / 2.0)
    } else {
        0.0
    };
    Ok((0..first.samples.len())
        .map(|i| {
            let vals: Vec<f64> = series.iter().map(|s| s.samples[i].1).collect();
            let (mean, sd) = mean_std(&vals);
            let half = t_crit * sd / (n as f64).sqrt();
            AggregatePoint { t: first.samples[i].0, mean, lo: mean - half, hi: mean + half, runs: n }
        })
        .collect())
}
