use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::similarity::symmetric_eigen;
use super::{AnalysisError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdsConfig {
    pub dims: usize,
    pub max_iter: usize,
    /// Stop once an iteration lowers the normalized stress
    /// `sqrt(stress / sum_{i<j} delta_ij^2)` by less than this.
    pub tol: f64,
    pub seed: u64,
    /// Start from the classical (Torgerson) solution instead of a random one.
    pub classical_init: bool,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            dims: 2,
            max_iter: 300,
            tol: 1e-9,
            seed: 0,
            classical_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    /// `n x dims`.
    pub coords: Array2<f64>,
    /// Raw stress `sum_{i<j} (d_ij - delta_ij)^2` of `coords`.
    pub stress: f64,
    pub n_iterations: usize,
    /// Stress of the start configuration followed by one value per iteration.
    pub stress_history: Vec<f64>,
}

fn validate(d: &ArrayView2<f64>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(AnalysisError::InvalidDissimilarity(format!(
            "{}x{} is not square",
            n,
            d.ncols()
        )));
    }
    for i in 0..n {
        if d[[i, i]] != 0.0 {
            return Err(AnalysisError::InvalidDissimilarity(format!("diagonal entry {i} is non-zero")));
        }
        for j in 0..n {
            let v = d[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(AnalysisError::InvalidDissimilarity(format!("entry ({i}, {j}) = {v}")));
            }
            if (v - d[[j, i]]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(AnalysisError::InvalidDissimilarity(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &x.row(i) - &x.row(j);
            let v = diff.dot(&diff).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn stress(dist: &Array2<f64>, delta: &ArrayView2<f64>) -> f64 {
    let n = dist.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let e = dist[[i, j]] - delta[[i, j]];
            s += e * e;
        }
    }
    s
}

/// Torgerson scaling: top eigenvectors of the double-centered squared
/// dissimilarities.
pub fn classical_mds(delta: &ArrayView2<f64>, dims: usize) -> Result<Array2<f64>> {
    validate(delta)?;
    let n = delta.nrows();
    let sq = delta.mapv(|v| v * v);
    let row_mean = sq.mean_axis(ndarray::Axis(1)).expect("rows");
    let grand = row_mean.mean().unwrap_or(0.0);
    let b = Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (sq[[i, j]] - row_mean[i] - row_mean[j] + grand));
    let (vals, vecs) = symmetric_eigen(&b.view());
    Ok(Array2::from_shape_fn((n, dims), |(i, k)| {
        if k < n {
            vecs[[i, k]] * vals[k].max(0.0).sqrt()
        } else {
            0.0
        }
    }))
}

/// Metric MDS by SMACOF (Guttman transform updates).
///
/// Stress is checked after every iteration; a rise beyond rounding error is
/// reported as an error.
pub fn mds(delta: &ArrayView2<f64>, cfg: &MdsConfig) -> Result<EmbeddingResult> {
    validate(delta)?;
    if cfg.dims == 0 {
        return Err(AnalysisError::Invalid("dims must be positive".into()));
    }
    let n = delta.nrows();
    let mut x = if cfg.classical_init {
        classical_mds(delta, cfg.dims)?
    } else {
        let mut rng = rng::seeded(cfg.seed);
        let scale = delta.iter().copied().fold(0.0, f64::max).max(1e-12);
        Array2::from_shape_fn((n, cfg.dims), |_| rng.random_range(-scale..scale))
    };
    let norm = stress(&Array2::zeros((n, n)), delta).max(1e-300);
    let mut dist = distances(&x);
    let mut current = stress(&dist, delta);
    let mut history = vec![current];
    let mut iterations = 0;
    while iterations < cfg.max_iter && n > 1 {
        let mut b = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j && dist[[i, j]] > 0.0 {
                    b[[i, j]] = -delta[[i, j]] / dist[[i, j]];
                }
            }
            let row_sum: f64 = b.row(i).sum();
            b[[i, i]] = -row_sum;
        }
        x = b.dot(&x) / n as f64;
        dist = distances(&x);
        let next = stress(&dist, delta);
        iterations += 1;
        history.push(next);
        if next > current + 1e-12 * current.max(1e-300) {
            return Err(AnalysisError::StressIncrease {
                iteration: iterations,
                previous: current,
                current: next,
            });
        }
        let decrease = (current / norm).sqrt() - (next / norm).sqrt();
        current = next;
        if decrease < cfg.tol {
            break;
        }
    }
    Ok(EmbeddingResult {
        coords: x,
        stress: current,
        n_iterations: iterations,
        stress_history: history,
    })
}
