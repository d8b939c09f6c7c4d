//! Edge-weight equivalence classes from a Gaussian kernel density estimate.
//!
//! Weight zero is always its own bin. Positive weights are split at the
//! midpoints between consecutive maxima of the estimated density.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid resolution used by [`make_bins`].
pub const DEFAULT_GRID_POINTS: usize = 4096;

/// Bandwidth used for the 15×15 rotation world with the full alphabet.
pub const TR1_BANDWIDTH: f64 = 6.4633e-5;

/// Kernel contributions beyond this many bandwidths are dropped (< e^-32).
const KERNEL_CUTOFF: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum BinningError {
    #[error("no weights to estimate a density from")]
    Empty,
    #[error("no positive weights")]
    NoPositiveWeights,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("at least 16 grid points required, got {0}")]
    TooFewGridPoints(usize),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
}

/// A density sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Density {
    pub fn x(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        let inner: f64 = v[1..v.len() - 1].iter().sum();
        self.step * (inner + 0.5 * (v[0] + v[v.len() - 1]))
    }

    /// Grid positions of the local maxima. A plateau counts once, at its
    /// midpoint, when it rises strictly above both neighbors.
    pub fn maxima(&self) -> Vec<f64> {
        let v = &self.values;
        let mut out = Vec::new();
        let mut a = 0;
        while a < v.len() {
            let mut b = a;
            while b + 1 < v.len() && v[b + 1] == v[a] {
                b += 1;
            }
            let left = if a == 0 { f64::NEG_INFINITY } else { v[a - 1] };
            let right = if b + 1 == v.len() { f64::NEG_INFINITY } else { v[b + 1] };
            if v[a] > left && v[a] > right && v[a] > 0.0 {
                out.push(0.5 * (self.x(a) + self.x(b)));
            }
            a = b + 1;
        }
        out
    }
}

/// Gaussian KDE `f(x) = 1/(m h √(2π)) Σ exp(−(x − w)² / 2h²)` on a uniform
/// grid over `[min − 3h, max + 3h]`.
pub fn estimate_density(weights: &[f64], bandwidth: f64, grid_points: usize) -> Result<Density, BinningError> {
    if weights.is_empty() {
        return Err(BinningError::Empty);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(BinningError::BadBandwidth(bandwidth));
    }
    if grid_points < 16 {
        return Err(BinningError::TooFewGridPoints(grid_points));
    }
    // distinct values with multiplicities, ascending
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for w in sorted {
        match distinct.last_mut() {
            Some((v, count)) if *v == w => *count += 1.0,
            _ => distinct.push((w, 1.0)),
        }
    }

    let h = bandwidth;
    let start = distinct[0].0 - 3.0 * h;
    let end = distinct[distinct.len() - 1].0 + 3.0 * h;
    let step = (end - start) / (grid_points - 1) as f64;
    let norm = 1.0 / (weights.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = KERNEL_CUTOFF * h;

    let mut values = Vec::with_capacity(grid_points);
    let mut lo = 0;
    for k in 0..grid_points {
        let x = start + step * k as f64;
        while lo < distinct.len() && distinct[lo].0 < x - reach {
            lo += 1;
        }
        let mut sum = 0.0;
        for &(w, count) in distinct[lo..].iter().take_while(|(w, _)| *w <= x + reach) {
            let z = (x - w) / h;
            sum += count * (-0.5 * z * z).exp();
        }
        values.push(norm * sum);
    }
    Ok(Density { start, step, values })
}

/// Ordered partition of the weight axis. Bin 0 holds exactly the zero
/// weights; positive bins are separated by `boundaries`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSet {
    pub boundaries: Vec<f64>,
    /// `None` for bins built from distinct values rather than a density.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
}

impl BinSet {
    /// One bin per distinct positive weight.
    pub fn exact(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut positive: Vec<f64> = weights.into_iter().filter(|&w| w > 0.0).collect();
        positive.sort_by(f64::total_cmp);
        positive.dedup();
        let boundaries = positive.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        BinSet {
            boundaries,
            bandwidth: None,
            grid_points: 0,
        }
    }

    /// Total number of bins, including the zero bin.
    pub fn len(&self) -> usize {
        self.boundaries.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bin of a non-negative weight; a weight on a boundary falls in the lower bin.
    #[inline]
    pub fn index(&self, weight: f64) -> usize {
        if weight <= 0.0 {
            0
        } else {
            1 + self.boundaries.partition_point(|&b| b < weight)
        }
    }
}

/// Bins weights (zeros included) at the midpoints between consecutive
/// density maxima of the positive weights.
pub fn make_bins(weights: &[f64], bandwidth: f64) -> Result<BinSet, BinningError> {
    make_bins_with_grid(weights, bandwidth, DEFAULT_GRID_POINTS)
}

pub fn make_bins_with_grid(weights: &[f64], bandwidth: f64, grid_points: usize) -> Result<BinSet, BinningError> {
    if let Some(&w) = weights.iter().find(|&&w| w < 0.0) {
        return Err(BinningError::NegativeWeight(w));
    }
    let positive: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if positive.is_empty() {
        return Err(BinningError::NoPositiveWeights);
    }
    let density = estimate_density(&positive, bandwidth, grid_points)?;
    let peaks = density.maxima();
    let boundaries = peaks.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    Ok(BinSet {
        boundaries,
        bandwidth: Some(bandwidth),
        grid_points,
    })
}

/// Bin index of `weight`: 0 iff the weight is zero, otherwise one plus the
/// number of boundaries strictly below it.
pub fn bin_of(bins: &BinSet, weight: f64) -> Result<usize, BinningError> {
    if weight < 0.0 {
        return Err(BinningError::NegativeWeight(weight));
    }
    Ok(bins.index(weight))
}
