//! Gaussian kernel density estimation in one and two dimensions.
//!
//! The estimator uses a product (diagonal) Gaussian kernel with one bandwidth
//! per dimension, chosen by Scott's rule unless overridden.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as degenerate.
pub const DEGENERATE_SIGMA: f64 = 1e-9;
/// Bandwidth used for degenerate or singleton data, in data units.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    dim: usize,
    /// Row-major, `n * dim` values.
    points: Vec<f64>,
    bandwidth: Vec<f64>,
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Scott's rule `sigma * n^(-1/(d+4))` with the degenerate-data floor.
pub fn scott_bandwidth(sigma: f64, n: usize, dim: usize) -> f64 {
    if n <= 1 || sigma < DEGENERATE_SIGMA {
        return BANDWIDTH_FLOOR;
    }
    sigma * (n as f64).powf(-1.0 / (dim as f64 + 4.0))
}

impl KdeModel {
    /// Fits a model over `points`, all of dimension 1 or 2.
    pub fn fit<P: AsRef<[f64]>>(points: &[P], bandwidth_override: Option<&[f64]>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("no points to fit"))?;
        let dim = first.as_ref().len();
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid(format!(
                "kernel density supports 1 or 2 dimensions, got {dim}"
            )));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    index: Some(i),
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i} is not finite")));
            }
            flat.extend_from_slice(p);
        }
        let n = points.len();
        let bandwidth = match bandwidth_override {
            Some(bw) => {
                if bw.len() != dim {
                    return Err(Error::DimensionMismatch {
                        index: None,
                        expected: dim,
                        found: bw.len(),
                    });
                }
                if bw.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                    return Err(Error::invalid("bandwidths must be positive"));
                }
                bw.to_vec()
            }
            None => (0..dim)
                .map(|j| {
                    let column = flat.iter().skip(j).step_by(dim).copied();
                    scott_bandwidth(sample_std(column), n, dim)
                })
                .collect(),
        };
        Ok(KdeModel {
            dim,
            points: flat,
            bandwidth,
        })
    }

    /// Convenience wrapper for one-dimensional data.
    pub fn fit_1d(values: &[f64], bandwidth: Option<f64>) -> Result<Self> {
        let points: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        let bw = bandwidth.map(|h| [h]);
        Self::fit(&points, bw.as_ref().map(|b| b.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Density at `x`: the average over model points of the product of
    /// per-dimension scaled normal densities.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                index: None,
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.pdf_unchecked(x))
    }

    fn pdf_unchecked(&self, x: &[f64]) -> f64 {
        let norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| INV_SQRT_2PI / h)
            .product();
        let sum: f64 = self
            .points
            .chunks_exact(self.dim)
            .map(|p| {
                let q: f64 = p
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidth)
                    .map(|((pj, xj), h)| {
                        let u = (xj - pj) / h;
                        u * u
                    })
                    .sum();
                (-0.5 * q).exp()
            })
            .sum();
        norm * sum / self.n() as f64
    }

    /// Elementwise [`pdf`](Self::pdf), in input order.
    pub fn pdf_batch<P: AsRef<[f64]> + Sync>(&self, xs: &[P]) -> Result<Vec<f64>> {
        if let Some((i, x)) = xs
            .iter()
            .enumerate()
            .find(|(_, x)| x.as_ref().len() != self.dim)
        {
            return Err(Error::DimensionMismatch {
                index: Some(i),
                expected: self.dim,
                found: x.as_ref().len(),
            });
        }
        Ok(xs
            .par_iter()
            .map(|x| self.pdf_unchecked(x.as_ref()))
            .collect())
    }
}

/// Outcome of keeping the highest-scored fraction of a list.
#[derive(Debug, Clone, PartialEq)]
pub struct TopFraction<T> {
    /// In input order.
    pub kept: Vec<T>,
    /// In input order.
    pub dropped: Vec<T>,
    /// The k-th highest score.
    pub threshold: f64,
}

/// Number of items kept for `fraction` of `n`: `ceil(fraction * n)`, with a
/// small tolerance so products like `0.7 * 10` do not round up spuriously.
pub fn kept_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).clamp(1.min(n), n)
}

/// Keeps the `ceil(keep_fraction * n)` highest-scored ids. Ties at the cut
/// go to the earlier position in the input.
pub fn keep_top_fraction<T: Clone>(
    scores: &[f64],
    ids: &[T],
    keep_fraction: f64,
) -> Result<TopFraction<T>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    if scores.len() != ids.len() {
        return Err(Error::LengthMismatch {
            refs: scores.len(),
            hyps: ids.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scores to rank"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {i} is NaN")));
    }
    let k = kept_count(keep_fraction, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps input order among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut keep = vec![false; scores.len()];
    for &i in &order[..k] {
        keep[i] = true;
    }
    let (mut kept, mut dropped) = (Vec::with_capacity(k), Vec::new());
    for (id, keep) in ids.iter().zip(keep) {
        if keep {
            kept.push(id.clone());
        } else {
            dropped.push(id.clone());
        }
    }
    Ok(TopFraction {
        kept,
        dropped,
        threshold: scores[order[k - 1]],
    })
}

/// Evenly spaced grid of `count` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// Trapezoid rule over a (possibly uneven) grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
