use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result, VARIANCE_FLOOR};
use crate::rng;
use crate::store::{ColumnKind, ReportTable};

/// Pearson correlation; `None` when either variance is below 1e-12.
///
/// Single pass over the data using running co-moments.
pub fn pearson(x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooShort {
            needed: 3,
            found: x.len(),
        });
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y.iter()).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    let n = x.len() as f64;
    if sxx / n < VARIANCE_FLOOR || syy / n < VARIANCE_FLOOR {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Columns centered and scaled to unit norm; constant columns come back as `None`.
fn normalized_columns(x: &ArrayView2<f64>) -> (Array2<f64>, Vec<bool>) {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty rows");
    let mut c = x - &mean;
    let mut valid = Vec::with_capacity(x.ncols());
    for mut col in c.columns_mut() {
        let ss = col.dot(&col);
        if ss / n < VARIANCE_FLOOR {
            col.fill(0.0);
            valid.push(false);
        } else {
            col /= ss.sqrt();
            valid.push(true);
        }
    }
    (c, valid)
}

/// `m x w` matrix of correlations between latent columns and signal columns.
/// Undefined entries are NaN.
pub fn correlation_matrix(latents: &ArrayView2<f64>, signal: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if latents.nrows() != signal.nrows() {
        return Err(AnalysisError::LengthMismatch(latents.nrows(), signal.nrows()));
    }
    if latents.nrows() < 3 {
        return Err(AnalysisError::TooShort {
            needed: 3,
            found: latents.nrows(),
        });
    }
    let (a, va) = normalized_columns(latents);
    let (b, vb) = normalized_columns(signal);
    let mut r = a.t().dot(&b);
    for ((i, j), v) in r.indexed_iter_mut() {
        *v = if va[i] && vb[j] { v.clamp(-1.0, 1.0) } else { f64::NAN };
    }
    Ok(r)
}

/// Whether the best latent is chosen by signed `r` or by `|r|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrSign {
    #[default]
    Signed,
    Absolute,
}

impl CorrSign {
    fn key(self, r: f64) -> f64 {
        match self {
            CorrSign::Signed => r,
            CorrSign::Absolute => r.abs(),
        }
    }
}

/// Best latent per signal column.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxCorr {
    /// `(latent, r)` per signal column; `None` for constant columns.
    pub per_column: Vec<Option<(usize, f64)>>,
    /// Mean over defined columns of the selection key (`r` or `|r|`).
    pub mean: f64,
}

fn max_from_matrix(r: &Array2<f64>, sign: CorrSign) -> MaxCorr {
    let mut per_column = Vec::with_capacity(r.ncols());
    let mut total = 0.0;
    let mut count = 0usize;
    for col in r.columns() {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in col.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| sign.key(v) > sign.key(b)) {
                best = Some((i, v));
            }
        }
        if let Some((_, v)) = best {
            total += sign.key(v);
            count += 1;
        }
        per_column.push(best);
    }
    MaxCorr {
        per_column,
        mean: total / count as f64,
    }
}

/// For each signal column, the latent with the highest correlation (zero-variance
/// latents excluded), and the mean of those maxima over columns.
pub fn max_corr(latents: &ArrayView2<f64>, signal: &ArrayView2<f64>, sign: CorrSign) -> Result<MaxCorr> {
    let r = correlation_matrix(latents, signal)?;
    if r.iter().all(|v| v.is_nan()) {
        let (_, va) = normalized_columns(latents);
        return Err(if va.iter().any(|&v| v) {
            AnalysisError::NoValidSignal
        } else {
            AnalysisError::NoValidLatents
        });
    }
    Ok(max_from_matrix(&r, sign))
}

/// Max correlation averaged over signal columns and then over runs.
pub fn max_corr_protocol(runs: &[(ArrayView2<f64>, ArrayView2<f64>)], sign: CorrSign) -> Result<f64> {
    if runs.is_empty() {
        return Err(AnalysisError::Invalid("no runs".into()));
    }
    let mut total = 0.0;
    for (latents, signal) in runs {
        total += max_corr(latents, signal, sign)?.mean;
    }
    Ok(total / runs.len() as f64)
}

/// Distribution of the max-correlation statistic under shuffled signal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullBand {
    /// Sorted statistic values, one per permutation.
    pub samples: Vec<f64>,
}

impl NullBand {
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.samples.len();
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.samples[idx]
    }

    pub fn q95(&self) -> f64 {
        self.quantile(0.95)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Fraction of null samples at least as large as `observed` (with the
    /// usual +1 correction).
    pub fn p_value(&self, observed: f64) -> f64 {
        let above = self.samples.iter().filter(|&&s| s >= observed).count();
        (above + 1) as f64 / (self.samples.len() + 1) as f64
    }
}

/// Statistic reduced over signal columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Mean,
    Max,
}

fn permutation_samples(
    latents: &ArrayView2<f64>,
    signal: &ArrayView2<f64>,
    sign: CorrSign,
    n_perm: usize,
    seed: u64,
    reduce: Reduce,
) -> Result<NullBand> {
    if latents.nrows() != signal.nrows() {
        return Err(AnalysisError::LengthMismatch(latents.nrows(), signal.nrows()));
    }
    if n_perm == 0 {
        return Err(AnalysisError::Invalid("n_perm must be positive".into()));
    }
    let (a, va) = normalized_columns(latents);
    if !va.iter().any(|&v| v) {
        return Err(AnalysisError::NoValidLatents);
    }
    let keep: Vec<usize> = (0..va.len()).filter(|&i| va[i]).collect();
    let a = a.select(Axis(1), &keep);
    let (b, vb) = normalized_columns(signal);
    if !vb.iter().any(|&v| v) {
        return Err(AnalysisError::NoValidSignal);
    }
    let keep_b: Vec<usize> = (0..vb.len()).filter(|&j| vb[j]).collect();
    let b = b.select(Axis(1), &keep_b);
    let n = b.nrows();
    let mut samples: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::derive(seed, i as u64));
            let bp = b.select(Axis(0), &idx);
            let r = a.t().dot(&bp);
            let col_max = r.columns().into_iter().map(|c| {
                c.iter()
                    .map(|&v| sign.key(v))
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            match reduce {
                Reduce::Mean => col_max.sum::<f64>() / r.ncols() as f64,
                Reduce::Max => col_max.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok(NullBand { samples })
}

/// Null distribution of [`max_corr`]'s mean statistic obtained by permuting the
/// signal's rows `n_perm` times.
pub fn permutation_null(
    latents: &ArrayView2<f64>,
    signal: &ArrayView2<f64>,
    sign: CorrSign,
    n_perm: usize,
    seed: u64,
) -> Result<NullBand> {
    permutation_samples(latents, signal, sign, n_perm, seed, Reduce::Mean)
}

/// Null distribution of the largest per-column maximum (family-wise over all
/// signal columns and latents).
pub fn permutation_null_familywise(
    latents: &ArrayView2<f64>,
    signal: &ArrayView2<f64>,
    sign: CorrSign,
    n_perm: usize,
    seed: u64,
) -> Result<NullBand> {
    permutation_samples(latents, signal, sign, n_perm, seed, Reduce::Max)
}

/// Normalized discrete Gaussian weights for offsets `-radius..=radius`, with
/// `radius = ceil(4 sigma)`.
pub fn smoothing_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Gaussian smoothing over block index; the kernel is renormalized where it
/// runs past either end.
pub fn smooth_blocks(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = smoothing_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = values.len() as i64;
    (0..n)
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as i64 - radius;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

/// One `(block, signal)` cell of a correlation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrEntry {
    pub block: usize,
    pub signal: String,
    /// Best latent of the first defined signal column.
    pub best_latent: Option<usize>,
    /// Max-correlation statistic (mean over signal columns).
    pub r: f64,
    pub null_q95: Option<f64>,
    /// Correlation of every latent with the signal (scalar signals only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub sigma: f64,
    pub sign: CorrSign,
    pub entries: Vec<CorrEntry>,
}

impl CorrelationReport {
    pub fn new(sigma: f64, sign: CorrSign) -> Self {
        CorrelationReport {
            sigma,
            sign,
            entries: Vec::new(),
        }
    }

    /// Correlates one block's latents with every named signal and records
    /// the result, optionally with a permutation null of `n_perm` shuffles.
    pub fn add_block(
        &mut self,
        block: usize,
        latents: &ArrayView2<f64>,
        signals: &[(&str, ArrayView2<f64>)],
        n_perm: usize,
        seed: u64,
    ) -> Result<()> {
        for (k, (name, signal)) in signals.iter().enumerate() {
            let best = max_corr(latents, signal, self.sign)?;
            let r = correlation_matrix(latents, signal)?;
            let null = if n_perm > 0 {
                let s = seed ^ ((block as u64) << 32) ^ k as u64;
                Some(permutation_null(latents, signal, self.sign, n_perm, s)?.q95())
            } else {
                None
            };
            self.entries.push(CorrEntry {
                block,
                signal: (*name).to_string(),
                best_latent: best.per_column.iter().flatten().map(|(i, _)| *i).next(),
                r: best.mean,
                null_q95: null,
                latent_r: (signal.ncols() == 1).then(|| r.column(0).to_vec()),
            });
        }
        Ok(())
    }

    pub fn signals(&self) -> Vec<String> {
        let mut names: Vec<String> = self.entries.iter().map(|e| e.signal.clone()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// `(block, r)` sorted by block.
    pub fn curve(&self, signal: &str) -> Vec<(usize, f64)> {
        let map: BTreeMap<usize, f64> = self
            .entries
            .iter()
            .filter(|e| e.signal == signal)
            .map(|e| (e.block, e.r))
            .collect();
        map.into_iter().collect()
    }

    pub fn smoothed_curve(&self, signal: &str) -> Vec<(usize, f64)> {
        let curve = self.curve(signal);
        let values: Vec<f64> = curve.iter().map(|c| c.1).collect();
        curve
            .iter()
            .map(|c| c.0)
            .zip(smooth_blocks(&values, self.sigma))
            .collect()
    }

    /// Rows sorted by `(signal, block)` with raw and smoothed statistics.
    pub fn to_table(&self) -> ReportTable {
        let mut t = ReportTable::new(
            "correlations",
            &[
                ("signal", ColumnKind::String),
                ("block", ColumnKind::Int),
                ("best_latent", ColumnKind::Int),
                ("r", ColumnKind::Real),
                ("r_smoothed", ColumnKind::Real),
                ("null_q95", ColumnKind::Real),
            ],
        );
        for name in self.signals() {
            let smoothed: BTreeMap<usize, f64> = self.smoothed_curve(&name).into_iter().collect();
            let mut rows: Vec<&CorrEntry> = self.entries.iter().filter(|e| e.signal == name).collect();
            rows.sort_by_key(|e| e.block);
            for e in rows {
                t.push_row(vec![
                    name.clone().into(),
                    e.block.into(),
                    (e.best_latent.map_or(-1, |b| b as i64)).into(),
                    e.r.into(),
                    smoothed[&e.block].into(),
                    e.null_q95.unwrap_or(f64::NAN).into(),
                ])
                .expect("row matches schema");
            }
        }
        t
    }
}
