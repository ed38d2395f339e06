//! Lesion and clamp edits in SAE latent space, substituted back into a
//! representation source so downstream blocks see the edited activations.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{correlation_matrix, max_corr, AnalysisError, CorrSign};
use crate::rng;
use crate::sae::{SaeError, SaeModel};
use crate::store::{ColumnKind, ReportTable};
use crate::synth::SyntheticStack;

/// The clamp magnitude used for "clamp" interventions by default.
pub const DEFAULT_CLAMP: f64 = -10.0;

#[derive(Debug, thiserror::Error)]
pub enum InterventionError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("latent {latent} out of range for a model with {m} latents")]
    LatentOutOfRange { latent: usize, m: usize },
    #[error("no SAE model supplied for block {0}")]
    MissingModel(usize),
    #[error("source replays recorded activations and cannot propagate an edit at block {block} (last block is {last})")]
    Capability { block: usize, last: usize },
    #[error("activations contain a non-finite value")]
    NonFinite,
    #[error("logs are misaligned: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Sae(#[from] SaeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T> = std::result::Result<T, InterventionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EditAction {
    /// Set the latent to 0.
    Lesion,
    /// Set the latent to `value`.
    Clamp { value: f64 },
    /// Leave the latent unchanged.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub block: usize,
    pub latent: usize,
    #[serde(flatten)]
    pub action: EditAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionPlan {
    pub edits: Vec<Edit>,
    /// Replace activations with reconstructions at every planned block even
    /// when no edit changes a latent there.
    #[serde(default)]
    pub substitute_reconstruction: bool,
}

impl InterventionPlan {
    pub fn lesion(block: usize, latent: usize) -> Self {
        InterventionPlan {
            edits: vec![Edit {
                block,
                latent,
                action: EditAction::Lesion,
            }],
            substitute_reconstruction: false,
        }
    }

    pub fn clamp(block: usize, latent: usize, value: f64) -> Self {
        InterventionPlan {
            edits: vec![Edit {
                block,
                latent,
                action: EditAction::Clamp { value },
            }],
            substitute_reconstruction: false,
        }
    }

    /// Checks uniqueness of `(block, latent)`, finite clamp values and, when
    /// given, block indices against the source depth.
    pub fn validate(&self, n_blocks: Option<usize>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.edits {
            if !seen.insert((e.block, e.latent)) {
                return Err(InterventionError::Plan(format!(
                    "more than one edit for block {} latent {}",
                    e.block, e.latent
                )));
            }
            if let EditAction::Clamp { value } = e.action {
                if !value.is_finite() {
                    return Err(InterventionError::Plan(format!("clamp value {value} is not finite")));
                }
            }
            if let Some(n) = n_blocks {
                if e.block >= n {
                    return Err(InterventionError::Plan(format!(
                        "block {} out of range for a source with {n} blocks",
                        e.block
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> BTreeSet<usize> {
        self.edits.iter().map(|e| e.block).collect()
    }

    pub fn edits_at(&self, block: usize) -> Vec<(usize, EditAction)> {
        self.edits
            .iter()
            .filter(|e| e.block == block)
            .map(|e| (e.latent, e.action))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// Applies latent edits to raw activations `h` (`n x d`).
///
/// Inputs are scaled and encoded, the edited latents decoded, and the result
/// mapped back through the inverse scaling. With only `None` actions and
/// `substitute == false`, `h` is returned unchanged.
pub fn apply_edits(
    model: &SaeModel,
    h: &ArrayView2<f64>,
    edits: &[(usize, EditAction)],
    substitute: bool,
) -> Result<Array2<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(InterventionError::NonFinite);
    }
    for &(latent, _) in edits {
        if latent >= model.m() {
            return Err(InterventionError::LatentOutOfRange { latent, m: model.m() });
        }
    }
    let changes = edits.iter().any(|(_, a)| *a != EditAction::None);
    if !changes && !substitute {
        return Ok(h.to_owned());
    }
    let mut a = model.encode_raw(h)?;
    for &(latent, action) in edits {
        match action {
            EditAction::Lesion => a.column_mut(latent).fill(0.0),
            EditAction::Clamp { value } => a.column_mut(latent).fill(value),
            EditAction::None => {}
        }
    }
    Ok(model.decode_raw(&a.view())?)
}

pub fn apply_edit(model: &SaeModel, h: &ArrayView2<f64>, edit: (usize, EditAction), substitute: bool) -> Result<Array2<f64>> {
    apply_edits(model, h, &[edit], substitute)
}

/// Activations of every block for a batch of steps, plus optional readout.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceOutput {
    pub blocks: Vec<Array2<f64>>,
    pub logits: Option<Array2<f64>>,
}

/// Anything that yields per-block activations and lets a hook rewrite a
/// block before the blocks after it are produced.
pub trait RepresentationSource {
    fn n_blocks(&self) -> usize;
    fn dim(&self) -> usize;
    /// Whether downstream blocks are recomputed from an edited block.
    fn propagates(&self) -> bool;
    fn run(&self, hook: &mut dyn FnMut(usize, &mut Array2<f64>) -> Result<()>) -> Result<SourceOutput>;
}

/// A [`SyntheticStack`] fed with fixed inputs and signals.
#[derive(Debug, Clone, Copy)]
pub struct StackSource<'a> {
    pub stack: &'a SyntheticStack,
    pub inputs: ArrayView2<'a, f64>,
    pub signals: ArrayView2<'a, f64>,
}

impl RepresentationSource for StackSource<'_> {
    fn n_blocks(&self) -> usize {
        self.stack.n_blocks()
    }

    fn dim(&self) -> usize {
        self.stack.dim()
    }

    fn propagates(&self) -> bool {
        true
    }

    fn run(&self, hook: &mut dyn FnMut(usize, &mut Array2<f64>) -> Result<()>) -> Result<SourceOutput> {
        let out = self.stack.forward_with(&self.inputs, &self.signals, hook)?;
        Ok(SourceOutput {
            blocks: out.blocks,
            logits: Some(out.logits),
        })
    }
}

/// Recorded activations; edits can only be applied at the last block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySource {
    pub blocks: Vec<Array2<f64>>,
}

impl RepresentationSource for ReplaySource {
    fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }

    fn propagates(&self) -> bool {
        false
    }

    fn run(&self, hook: &mut dyn FnMut(usize, &mut Array2<f64>) -> Result<()>) -> Result<SourceOutput> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, h) in self.blocks.iter().enumerate() {
            let mut h = h.clone();
            hook(b, &mut h)?;
            blocks.push(h);
        }
        Ok(SourceOutput { blocks, logits: None })
    }
}

/// Runs `source` with the plan's edits applied at every step.
pub fn run_with_plan(
    source: &dyn RepresentationSource,
    plan: &InterventionPlan,
    models: &BTreeMap<usize, SaeModel>,
) -> Result<SourceOutput> {
    let n_blocks = source.n_blocks();
    plan.validate(Some(n_blocks))?;
    let blocks = plan.blocks();
    if !source.propagates() {
        if let Some(&b) = blocks.iter().find(|&&b| b + 1 < n_blocks) {
            return Err(InterventionError::Capability {
                block: b,
                last: n_blocks.saturating_sub(1),
            });
        }
    }
    for &b in &blocks {
        if !models.contains_key(&b) {
            return Err(InterventionError::MissingModel(b));
        }
    }
    source.run(&mut |b, h| {
        if blocks.contains(&b) {
            *h = apply_edits(&models[&b], &h.view(), &plan.edits_at(b), plan.substitute_reconstruction)?;
        }
        Ok(())
    })
}

/// Latent with the largest `|r|` against `signal`, if that `|r|` reaches
/// `min_abs_r`.
pub fn select_signal_latent(latents: &ArrayView2<f64>, signal: &ArrayView2<f64>, min_abs_r: f64) -> Result<Option<(usize, f64)>> {
    let best = max_corr(latents, signal, CorrSign::Absolute)?;
    Ok(best.per_column[0].filter(|(_, r)| r.abs() >= min_abs_r))
}

/// Latent with the smallest `|r|` against `signal` among non-constant latents.
pub fn select_control_latent(latents: &ArrayView2<f64>, signal: &ArrayView2<f64>) -> Result<(usize, f64)> {
    let r = correlation_matrix(latents, signal)?;
    r.column(0)
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, &v)| (i, v))
        .ok_or(InterventionError::Analysis(AnalysisError::NoValidLatents))
}

/// Per-step outcome of a source: logits and the index each step should
/// produce (reference action, next state, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeLog {
    pub logits: Array2<f64>,
    pub targets: Vec<usize>,
}

impl OutcomeLog {
    pub fn new(logits: Array2<f64>, targets: Vec<usize>) -> Result<Self> {
        if logits.nrows() != targets.len() {
            return Err(InterventionError::Misaligned(format!(
                "{} logit rows vs {} targets",
                logits.nrows(),
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= logits.ncols()) {
            return Err(InterventionError::Misaligned(format!("target {t} >= {} outputs", logits.ncols())));
        }
        Ok(OutcomeLog { logits, targets })
    }

    /// 1 where the argmax output equals the target.
    pub fn hits(&self) -> Array1<f64> {
        Array1::from_iter(self.logits.rows().into_iter().zip(&self.targets).map(|(row, &t)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            if best == t {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// Negative log-probability of each target under a softmax of the logits.
    pub fn nll(&self) -> Array1<f64> {
        Array1::from_iter(self.logits.rows().into_iter().zip(&self.targets).map(|(row, &t)| {
            let lp = crate::agents::log_softmax(&row.to_vec(), 1.0);
            -lp[t]
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMetric {
    NllVsModel,
    ActionAccuracy,
    NextStateAccuracy,
    DownstreamMaxCorr,
}

impl EffectMetric {
    pub fn name(self) -> &'static str {
        match self {
            EffectMetric::NllVsModel => "nll_vs_model",
            EffectMetric::ActionAccuracy => "action_accuracy",
            EffectMetric::NextStateAccuracy => "next_state_accuracy",
            EffectMetric::DownstreamMaxCorr => "downstream_max_corr",
        }
    }
}

/// Empty table with the columns of every effect report.
pub fn effect_table() -> ReportTable {
    ReportTable::new(
        "effects",
        &[
            ("metric", ColumnKind::String),
            ("block", ColumnKind::Int),
            ("baseline", ColumnKind::Real),
            ("intervened", ColumnKind::Real),
            ("delta", ColumnKind::Real),
            ("null_lo", ColumnKind::Real),
            ("null_hi", ColumnKind::Real),
            ("outside_null", ColumnKind::Int),
        ],
    )
}

fn push_effect(t: &mut ReportTable, metric: &str, block: i64, base: f64, int: f64, band: (f64, f64)) {
    let delta = int - base;
    let outside = delta < band.0 || delta > band.1;
    t.push_row(vec![
        metric.into(),
        block.into(),
        base.into(),
        int.into(),
        delta.into(),
        band.0.into(),
        band.1.into(),
        (outside as i64).into(),
    ])
    .expect("row matches schema");
}

fn band_from(mut samples: Vec<f64>) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let at = |p: f64| samples[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    (at(0.025), at(0.975))
}

/// Null band of a mean paired difference by random sign flips.
fn sign_flip_band(diff: &Array1<f64>, n_perm: usize, seed: u64) -> (f64, f64) {
    let n = diff.len() as f64;
    let samples: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::derive(seed, i as u64);
            diff.iter()
                .map(|&d| if rng.random_bool(0.5) { d } else { -d })
                .sum::<f64>()
                / n
        })
        .collect();
    band_from(samples)
}

/// Per-step metric deltas (intervened minus baseline) with 95% paired
/// sign-flip null bands. [`EffectMetric::DownstreamMaxCorr`] is handled by
/// [`downstream_corr_effect`] and rejected here.
pub fn measure_effect(
    baseline: &OutcomeLog,
    intervened: &OutcomeLog,
    metrics: &[EffectMetric],
    n_perm: usize,
    seed: u64,
) -> Result<ReportTable> {
    if baseline.targets != intervened.targets || baseline.logits.dim() != intervened.logits.dim() {
        return Err(InterventionError::Misaligned("baseline and intervened logs differ in shape or targets".into()));
    }
    let mut table = effect_table();
    for (k, &metric) in metrics.iter().enumerate() {
        let (b, i) = match metric {
            EffectMetric::NllVsModel => (baseline.nll(), intervened.nll()),
            EffectMetric::ActionAccuracy | EffectMetric::NextStateAccuracy => (baseline.hits(), intervened.hits()),
            EffectMetric::DownstreamMaxCorr => {
                return Err(InterventionError::Plan(
                    "downstream_max_corr needs activations; use downstream_corr_effect".into(),
                ))
            }
        };
        let diff = &i - &b;
        let band = sign_flip_band(&diff, n_perm.max(1), seed.wrapping_add(k as u64));
        push_effect(
            &mut table,
            metric.name(),
            -1,
            b.mean().unwrap_or(0.0),
            i.mean().unwrap_or(0.0),
            band,
        );
    }
    Ok(table)
}

/// Max correlation between `signal` and the latents of each block's SAE
/// (trained on baseline activations), before and after an intervention.
///
/// The null band comes from randomly swapping baseline and intervened rows
/// step by step.
pub fn downstream_corr_effect(
    baseline: &SourceOutput,
    intervened: &SourceOutput,
    signal: &ArrayView2<f64>,
    models: &BTreeMap<usize, SaeModel>,
    sign: CorrSign,
    n_perm: usize,
    seed: u64,
) -> Result<ReportTable> {
    let mut table = effect_table();
    for (&b, model) in models {
        let (hb, hi) = match (baseline.blocks.get(b), intervened.blocks.get(b)) {
            (Some(x), Some(y)) if x.dim() == y.dim() && x.nrows() == signal.nrows() => (x, y),
            _ => return Err(InterventionError::Misaligned(format!("block {b} missing or mis-sized"))),
        };
        let lb = model.encode_raw(&hb.view())?;
        let li = model.encode_raw(&hi.view())?;
        let rb = max_corr(&lb.view(), signal, sign)?.mean;
        let ri = max_corr(&li.view(), signal, sign)?.mean;
        let n = lb.nrows();
        let samples: Vec<f64> = (0..n_perm.max(1))
            .into_par_iter()
            .map(|p| {
                let mut rng = rng::derive(seed ^ ((b as u64) << 40), p as u64);
                let swap: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
                let mut x = lb.clone();
                let mut y = li.clone();
                for (t, &s) in swap.iter().enumerate() {
                    if s {
                        x.row_mut(t).assign(&li.row(t));
                        y.row_mut(t).assign(&lb.row(t));
                    }
                }
                let stat = |m: &Array2<f64>| max_corr(&m.view(), signal, sign).map_or(f64::NAN, |c| c.mean);
                stat(&y) - stat(&x)
            })
            .collect();
        push_effect(&mut table, EffectMetric::DownstreamMaxCorr.name(), b as i64, rb, ri, band_from(samples));
    }
    Ok(table)
}

/// Reads one row of an effect table by metric and block.
pub fn effect_row(table: &ReportTable, metric: &str, block: i64) -> Option<(f64, f64, f64, (f64, f64))> {
    let row = table.rows.iter().find(|r| {
        r[0].as_str() == Some(metric) && r[1].as_f64() == Some(block as f64)
    })?;
    let v = |i: usize| row[i].as_f64().unwrap_or(f64::NAN);
    Some((v(2), v(3), v(4), (v(5), v(6))))
}

/// Encodes every block of `output` with its model (blocks without a model are skipped).
pub fn encode_blocks(output: &SourceOutput, models: &BTreeMap<usize, SaeModel>) -> Result<BTreeMap<usize, Array2<f64>>> {
    let mut out = BTreeMap::new();
    for (&b, m) in models {
        let h = output
            .blocks
            .get(b)
            .ok_or_else(|| InterventionError::Misaligned(format!("no block {b}")))?;
        out.insert(b, m.encode_raw(&h.view())?);
    }
    Ok(out)
}

/// Mean squared reconstruction error of `model` on raw activations.
pub fn reconstruction_mse(model: &SaeModel, h: &ArrayView2<f64>) -> Result<f64> {
    let r = model.reconstruct_raw(h)?;
    Ok((&r - h).mapv(|v| v * v).mean_axis(Axis(1)).and_then(|m| m.mean()).unwrap_or(0.0))
}
