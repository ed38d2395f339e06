//! Sparse autoencoder with input scaling, a hand-written backward pass and an
//! Adam trainer.
//!
//! The model is `a = ReLU(W_enc h + b_enc)`, `h~ = W_dec a + b_dec`, trained on
//! the per-sample mean of `||h - h~||^2 + beta * (sum_j a_j)^2`. Data are
//! rescaled first so the mean row norm equals `sqrt(d)`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::store::{self, StoreError, TaskKind};

/// Magic bytes of SAE model files.
pub const SAE_MAGIC: [u8; 4] = *b"SAEM";

#[derive(Debug, thiserror::Error)]
pub enum SaeError {
    #[error("input matrix is empty")]
    EmptyInput,
    #[error("every input row is zero; scaling is undefined")]
    AllZero,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("input contains a non-finite value at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        last_good: Box<SaeModel>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model file is malformed: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, SaeError>;

/// `H' = sqrt(d) * H / mean_row_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub mean_row_norm: f64,
    pub d: usize,
}

impl ScalingTransform {
    pub fn identity(d: usize) -> Self {
        ScalingTransform {
            mean_row_norm: (d as f64).sqrt(),
            d,
        }
    }

    pub fn fit(h: &ArrayView2<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(SaeError::EmptyInput);
        }
        let mean = h
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .sum::<f64>()
            / h.nrows() as f64;
        if mean == 0.0 {
            return Err(SaeError::AllZero);
        }
        Ok(ScalingTransform {
            mean_row_norm: mean,
            d: h.ncols(),
        })
    }

    /// Multiplier applied by [`ScalingTransform::apply`].
    pub fn factor(&self) -> f64 {
        (self.d as f64).sqrt() / self.mean_row_norm
    }

    pub fn apply(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        h * self.factor()
    }

    pub fn inverse(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        h * (self.mean_row_norm / (self.d as f64).sqrt())
    }
}

/// Adam moment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeTrainConfig {
    /// Sparsity weight.
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamParams,
    pub shuffle: bool,
    /// Use `beta * sum_j a_j` instead of its square.
    pub l1_unsquared: bool,
    /// Latent width; `None` means `2 d`.
    pub latent_dim: Option<usize>,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        SaeTrainConfig {
            beta: 1e-5,
            lr: 1e-4,
            batch: 256,
            epochs: 20,
            seed: 0,
            adam: AdamParams::default(),
            shuffle: true,
            l1_unsquared: false,
            latent_dim: None,
        }
    }
}

impl SaeTrainConfig {
    /// Task defaults: 30/15/20 epochs; latent width `2d` except `d` on the graph task.
    pub fn for_task(task: TaskKind, d: usize) -> Self {
        let (epochs, m) = match task {
            TaskKind::TwoStep => (30, 2 * d),
            TaskKind::GridWorld => (15, 2 * d),
            TaskKind::Graph => (20, d),
        };
        SaeTrainConfig {
            epochs,
            latent_dim: Some(m),
            ..Self::default()
        }
    }

    pub fn latent_width(&self, d: usize) -> usize {
        self.latent_dim.unwrap_or(2 * d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(SaeError::Config("batch must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(SaeError::Config("epochs must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SaeError::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SaeError::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.latent_dim == Some(0) {
            return Err(SaeError::Config("latent_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse autoencoder parameters. Rows of every batch are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `m x d`.
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    /// `d x m`.
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
    pub scale: ScalingTransform,
}

/// Loss split into its two terms; `total = recon + beta * sparsity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub sparsity: f64,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

impl SaeModel {
    /// Decoder columns are random unit vectors, the encoder is their transpose
    /// and both biases start at zero.
    pub fn init(d: usize, m: usize, scale: ScalingTransform, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut w_dec = Array2::from_shape_fn((d, m), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        for mut col in w_dec.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
        }
        SaeModel {
            w_enc: w_dec.t().to_owned(),
            b_enc: Array1::zeros(m),
            w_dec,
            b_dec: Array1::zeros(d),
            scale,
        }
    }

    pub fn d(&self) -> usize {
        self.w_dec.nrows()
    }

    pub fn m(&self) -> usize {
        self.w_enc.nrows()
    }

    fn check_dim(&self, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(SaeError::DimMismatch { expected, found });
        }
        Ok(())
    }

    /// Pre-activations `W_enc h + b_enc` for scaled inputs.
    fn pre_activations(&self, h: &ArrayView2<f64>) -> Array2<f64> {
        h.dot(&self.w_enc.t()) + &self.b_enc
    }

    /// Latents for already scaled inputs (`n x d` to `n x m`).
    pub fn encode(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(h.ncols(), self.d())?;
        Ok(self.pre_activations(h).mapv(|z| z.max(0.0)))
    }

    /// Reconstructions in scaled space (`n x m` to `n x d`).
    pub fn decode(&self, a: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(a.ncols(), self.m())?;
        Ok(a.dot(&self.w_dec.t()) + &self.b_dec)
    }

    pub fn reconstruct(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(h)?.view())
    }

    /// Scales raw activations, then encodes.
    pub fn encode_raw(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(h.ncols(), self.d())?;
        self.encode(&self.scale.apply(h).view())
    }

    /// Decodes and maps back to the raw activation scale.
    pub fn decode_raw(&self, a: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.scale.inverse(&self.decode(a)?.view()))
    }

    pub fn reconstruct_raw(&self, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode_raw(&self.encode_raw(h)?.view())
    }

    pub fn encode_one(&self, h: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let row = h.view().insert_axis(Axis(0));
        Ok(self.encode(&row)?.row(0).to_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
    }

    /// Writes the weights, biases and scaling to a model file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "d": self.d(),
            "m": self.m(),
            "scale": self.scale,
        });
        let b_enc = self.b_enc.view().insert_axis(Axis(0));
        let b_dec = self.b_dec.view().insert_axis(Axis(0));
        store::write_bundle(
            path,
            SAE_MAGIC,
            &meta,
            &[
                ("w_enc", self.w_enc.view()),
                ("b_enc", b_enc),
                ("w_dec", self.w_dec.view()),
                ("b_dec", b_dec),
            ],
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, tensors) = store::read_bundle(path, SAE_MAGIC)?;
        let scale: ScalingTransform = serde_json::from_value(meta["scale"].clone())
            .map_err(|e| SaeError::Malformed(e.to_string()))?;
        let get = |name: &str| -> Result<Array2<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| SaeError::Malformed(format!("missing tensor {name}")))
        };
        let w_enc = get("w_enc")?;
        let b_enc = get("b_enc")?.row(0).to_owned();
        let w_dec = get("w_dec")?;
        let b_dec = get("b_dec")?.row(0).to_owned();
        let (m, d) = w_enc.dim();
        if w_dec.dim() != (d, m) || b_enc.len() != m || b_dec.len() != d || scale.d != d {
            return Err(SaeError::Malformed("inconsistent tensor shapes".into()));
        }
        Ok(SaeModel {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            scale,
        })
    }
}

/// Loss on a batch of scaled inputs.
pub fn sae_loss(model: &SaeModel, h: &ArrayView2<f64>, beta: f64, l1_unsquared: bool) -> LossParts {
    let a = model.pre_activations(h).mapv(|z| z.max(0.0));
    let r = a.dot(&model.w_dec.t()) + &model.b_dec - h;
    loss_parts(&a, &r, beta, l1_unsquared)
}

fn loss_parts(a: &Array2<f64>, r: &Array2<f64>, beta: f64, l1_unsquared: bool) -> LossParts {
    let n = a.nrows() as f64;
    let recon = r.iter().map(|v| v * v).sum::<f64>() / n;
    let sparsity = a
        .rows()
        .into_iter()
        .map(|row| {
            let s = row.sum();
            if l1_unsquared {
                s
            } else {
                s * s
            }
        })
        .sum::<f64>()
        / n;
    LossParts {
        total: recon + beta * sparsity,
        recon,
        sparsity,
    }
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &SaeModel,
    h: &ArrayView2<f64>,
    beta: f64,
    l1_unsquared: bool,
) -> (LossParts, Gradients) {
    let n = h.nrows() as f64;
    let z = model.pre_activations(h);
    let a = z.mapv(|v| v.max(0.0));
    let r = a.dot(&model.w_dec.t()) + &model.b_dec - h;
    let parts = loss_parts(&a, &r, beta, l1_unsquared);

    let d_r = &r * (2.0 / n);
    let w_dec = d_r.t().dot(&a);
    let b_dec = d_r.sum_axis(Axis(0));
    let mut d_a = d_r.dot(&model.w_dec);
    for (mut row, a_row) in d_a.rows_mut().into_iter().zip(a.rows()) {
        let g = if l1_unsquared {
            beta / n
        } else {
            2.0 * beta * a_row.sum() / n
        };
        row += g;
    }
    let d_z = d_a * z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let w_enc = d_z.t().dot(h);
    let b_enc = d_z.sum_axis(Axis(0));
    (
        parts,
        Gradients {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        },
    )
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
struct Adam {
    params: AdamParams,
    lr: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

fn zeros_like(model: &SaeModel) -> Gradients {
    Gradients {
        w_enc: Array2::zeros(model.w_enc.raw_dim()),
        b_enc: Array1::zeros(model.b_enc.raw_dim()),
        w_dec: Array2::zeros(model.w_dec.raw_dim()),
        b_dec: Array1::zeros(model.b_dec.raw_dim()),
    }
}

impl Adam {
    fn new(model: &SaeModel, params: AdamParams, lr: f64) -> Self {
        Adam {
            params,
            lr,
            t: 0,
            m: zeros_like(model),
            v: zeros_like(model),
        }
    }

    fn step(&mut self, model: &mut SaeModel, g: &Gradients) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut model.w_enc)
            .and(&mut self.m.w_enc)
            .and(&mut self.v.w_enc)
            .and(&g.w_enc)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut model.b_enc)
            .and(&mut self.m.b_enc)
            .and(&mut self.v.b_enc)
            .and(&g.b_enc)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut model.w_dec)
            .and(&mut self.m.w_dec)
            .and(&mut self.v.w_dec)
            .and(&g.w_dec)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut model.b_dec)
            .and(&mut self.m.b_dec)
            .and(&mut self.v.b_dec)
            .and(&g.b_dec)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

/// A trained model plus its full-dataset loss after every epoch.
#[derive(Debug, Clone)]
pub struct TrainedSae {
    pub model: SaeModel,
    pub epoch_losses: Vec<LossParts>,
}

fn check_input(h: &ArrayView2<f64>) -> Result<()> {
    if h.nrows() == 0 || h.ncols() == 0 {
        return Err(SaeError::EmptyInput);
    }
    if let Some(((row, col), _)) = h.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(SaeError::NonFiniteInput { row, col });
    }
    Ok(())
}

/// Fits the scaling on `h` (raw activations) and trains a fresh model.
pub fn train(h: &ArrayView2<f64>, cfg: &SaeTrainConfig) -> Result<TrainedSae> {
    cfg.validate()?;
    check_input(h)?;
    let scale = ScalingTransform::fit(h)?;
    let model = SaeModel::init(h.ncols(), cfg.latent_width(h.ncols()), scale, cfg.seed);
    train_from(model, h, cfg)
}

/// Continues training `model` on raw activations `h` using the model's scaling.
pub fn train_from(mut model: SaeModel, h: &ArrayView2<f64>, cfg: &SaeTrainConfig) -> Result<TrainedSae> {
    cfg.validate()?;
    check_input(h)?;
    model.check_dim(h.ncols(), model.d())?;
    let x = model.scale.apply(h);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::derive(cfg.seed, 1);
    let mut adam = Adam::new(&model, cfg.adam, cfg.lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch = x.select(Axis(0), idx);
            let (loss, grad) = loss_and_grad(&model, &batch.view(), cfg.beta, cfg.l1_unsquared);
            if !loss.total.is_finite() {
                return Err(SaeError::Diverged {
                    epoch,
                    batch: b,
                    loss: loss.total,
                    last_good: Box::new(model),
                });
            }
            let last_good = model.clone();
            adam.step(&mut model, &grad);
            if !model.is_finite() {
                return Err(SaeError::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                    last_good: Box::new(last_good),
                });
            }
        }
        epoch_losses.push(sae_loss(&model, &x.view(), cfg.beta, cfg.l1_unsquared));
    }
    Ok(TrainedSae {
        model,
        epoch_losses,
    })
}

/// Per-latent activation variance over raw activations `h`.
pub fn latent_variances(model: &SaeModel, h: &ArrayView2<f64>) -> Result<Array1<f64>> {
    let a = model.encode_raw(h)?;
    Ok(a.var_axis(Axis(0), 0.0))
}

/// Variance threshold below which a latent counts as inactive.
pub const L0_VARIANCE_FLOOR: f64 = 1e-12;

/// Number of latents whose activation variance over `h` exceeds 1e-12.
pub fn l0_profile(model: &SaeModel, h: &ArrayView2<f64>) -> Result<usize> {
    Ok(latent_variances(model, h)?
        .iter()
        .filter(|&&v| v > L0_VARIANCE_FLOOR)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, rng: &mut rng::Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    pub(crate) fn random_model(d: usize, m: usize, rng: &mut rng::Rng) -> SaeModel {
        SaeModel {
            w_enc: random_matrix(m, d, rng),
            b_enc: Array1::from_shape_fn(m, |_| rng.random_range(-0.5..0.5)),
            w_dec: random_matrix(d, m, rng),
            b_dec: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
            scale: ScalingTransform::identity(d),
        }
    }

    #[test]
    fn scaling_examples() {
        let h = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.6, 0.8, 0.0]];
        let s = ScalingTransform::fit(&h.view()).unwrap();
        assert_eq!(s.factor(), 2.0);
        for r in s.apply(&h.view()).rows() {
            assert_abs_diff_eq!(r.dot(&r).sqrt(), 2.0, epsilon = 1e-15);
        }
        let h = array![[2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0]];
        assert_eq!(ScalingTransform::fit(&h.view()).unwrap().factor(), 1.0);
        assert!(matches!(
            ScalingTransform::fit(&Array2::zeros((3, 2)).view()),
            Err(SaeError::AllZero)
        ));
    }

    #[test]
    fn scaling_postcondition_and_inverse() {
        let mut rng = rng::seeded(9);
        let h = random_matrix(100, 16, &mut rng) * 7.3;
        let s = ScalingTransform::fit(&h.view()).unwrap();
        let x = s.apply(&h.view());
        let mean = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / 100.0;
        assert_abs_diff_eq!(mean, 4.0, epsilon = 1e-9);
        let back = s.inverse(&x.view());
        for (a, b) in back.iter().zip(h.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn loss_hand_examples() {
        let h = array![[2.0]];
        let model = SaeModel {
            w_enc: array![[1.0]],
            b_enc: array![0.0],
            w_dec: array![[1.0]],
            b_dec: array![0.0],
            scale: ScalingTransform::identity(1),
        };
        let l = sae_loss(&model, &h.view(), 0.5, false);
        assert_eq!((l.recon, l.sparsity, l.total), (0.0, 4.0, 2.0));

        let h = array![[1.0, -2.0, 3.0], [1.0, -2.0, 3.0]];
        let model = SaeModel {
            w_enc: Array2::zeros((4, 3)),
            b_enc: Array1::zeros(4),
            w_dec: Array2::ones((3, 4)),
            b_dec: array![1.0, -2.0, 3.0],
            scale: ScalingTransform::identity(3),
        };
        assert_eq!(sae_loss(&model, &h.view(), 1.0, false).total, 0.0);
    }

    #[test]
    fn sparsity_term_is_squared_l1() {
        let mut rng = rng::seeded(2);
        let model = random_model(5, 7, &mut rng);
        let h = random_matrix(10, 5, &mut rng);
        let base = sae_loss(&model, &h.view(), 0.3, false);
        assert_abs_diff_eq!(base.total, base.recon + 0.3 * base.sparsity, epsilon = 1e-14);
        let mut doubled = model.clone();
        doubled.w_enc *= 2.0;
        doubled.b_enc *= 2.0;
        let l2 = sae_loss(&doubled, &h.view(), 0.3, false);
        assert_abs_diff_eq!(l2.sparsity, 4.0 * base.sparsity, epsilon = 1e-10);
        let l1 = sae_loss(&doubled, &h.view(), 0.3, true);
        let l1_base = sae_loss(&model, &h.view(), 0.3, true);
        assert_abs_diff_eq!(l1.sparsity, 2.0 * l1_base.sparsity, epsilon = 1e-10);
    }

    /// Loss written out sample by sample with explicit loops.
    fn loop_loss(model: &SaeModel, h: &Array2<f64>, beta: f64, unsquared: bool) -> f64 {
        let (m, d) = model.w_enc.dim();
        let mut total = 0.0;
        for x in h.rows() {
            let mut a = vec![0.0; m];
            for j in 0..m {
                let mut z = model.b_enc[j];
                for i in 0..d {
                    z += model.w_enc[[j, i]] * x[i];
                }
                a[j] = if z > 0.0 { z } else { 0.0 };
            }
            let mut err = 0.0;
            for i in 0..d {
                let mut y = model.b_dec[i];
                for j in 0..m {
                    y += model.w_dec[[i, j]] * a[j];
                }
                err += (y - x[i]) * (y - x[i]);
            }
            let l1: f64 = a.iter().sum();
            total += err + beta * if unsquared { l1 } else { l1 * l1 };
        }
        total / h.nrows() as f64
    }

    pub(crate) fn finite_difference_error(seed: u64, unsquared: bool) -> f64 {
        let mut rng = rng::seeded(seed);
        let d = rng.random_range(2..=8);
        let m = rng.random_range(2..=8);
        let n = rng.random_range(1..=6);
        let model = random_model(d, m, &mut rng);
        let h = random_matrix(n, d, &mut rng);
        let beta = rng.random_range(0.0..1.0);
        let (_, g) = loss_and_grad(&model, &h.view(), beta, unsquared);
        let step = 1e-5;
        let mut worst = 0.0f64;
        let mut check = |analytic: Vec<f64>, perturb: &dyn Fn(&mut SaeModel, usize, f64)| {
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|k| {
                    let mut plus = model.clone();
                    perturb(&mut plus, k, step);
                    let mut minus = model.clone();
                    perturb(&mut minus, k, -step);
                    (loop_loss(&plus, &h, beta, unsquared) - loop_loss(&minus, &h, beta, unsquared))
                        / (2.0 * step)
                })
                .collect();
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
            worst = worst.max(diff / scale);
        };
        check(g.w_enc.iter().copied().collect(), &|p, k, e| {
            p.w_enc.as_slice_mut().unwrap()[k] += e
        });
        check(g.b_enc.to_vec(), &|p, k, e| p.b_enc[k] += e);
        check(g.w_dec.iter().copied().collect(), &|p, k, e| {
            p.w_dec.as_slice_mut().unwrap()[k] += e
        });
        check(g.b_dec.to_vec(), &|p, k, e| p.b_dec[k] += e);
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for unsquared in [false, true] {
                let err = finite_difference_error(seed, unsquared);
                assert!(err <= 1e-5, "seed {seed} unsquared {unsquared}: relative error {err}");
            }
        }
    }

    #[test]
    fn encode_decode_contracts() {
        let mut rng = rng::seeded(4);
        let model = random_model(6, 9, &mut rng);
        let h = random_matrix(20, 6, &mut rng);
        let a = model.encode(&h.view()).unwrap();
        assert!(a.iter().all(|&v| v >= 0.0));
        let zeros = Array2::zeros((1, 9));
        assert_eq!(model.decode(&zeros.view()).unwrap().row(0), model.b_dec.view());
        assert_eq!(
            model.reconstruct(&h.view()).unwrap(),
            model.decode(&a.view()).unwrap()
        );
        assert!(matches!(
            model.encode(&Array2::zeros((2, 5)).view()),
            Err(SaeError::DimMismatch { expected: 6, found: 5 })
        ));
    }

    fn low_rank_data(n: usize, d: usize, rank: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::seeded(seed);
        let basis = random_matrix(rank, d, &mut rng);
        let coeffs = random_matrix(n, rank, &mut rng);
        coeffs.dot(&basis)
    }

    #[test]
    fn exact_autoencoding_without_sparsity() {
        let h = low_rank_data(400, 8, 3, 1);
        let cfg = SaeTrainConfig {
            beta: 0.0,
            lr: 3e-3,
            batch: 32,
            epochs: 300,
            latent_dim: Some(16),
            ..SaeTrainConfig::default()
        };
        let trained = train(&h.view(), &cfg).unwrap();
        let x = trained.model.scale.apply(&h.view());
        let var = x.var_axis(Axis(0), 0.0).sum() / 8.0;
        let mse = trained.epoch_losses.last().unwrap().recon / 8.0;
        assert!(mse <= 1e-4 * var, "mse {mse} vs variance {var}");
    }

    #[test]
    fn smoothed_epoch_loss_is_non_increasing() {
        let h = low_rank_data(512, 12, 4, 2);
        let cfg = SaeTrainConfig {
            beta: 1e-3,
            lr: 1e-3,
            batch: 64,
            epochs: 40,
            ..SaeTrainConfig::default()
        };
        let losses: Vec<f64> = train(&h.view(), &cfg)
            .unwrap()
            .epoch_losses
            .iter()
            .map(|l| l.total)
            .collect();
        let smoothed: Vec<f64> = losses.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
        for w in smoothed.windows(2) {
            assert!(w[1] <= w[0], "smoothed loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let h = low_rank_data(100, 6, 2, 3);
        let cfg = SaeTrainConfig {
            epochs: 3,
            batch: 16,
            ..SaeTrainConfig::default()
        };
        let a = train(&h.view(), &cfg).unwrap();
        let b = train(&h.view(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_returns_last_good_model() {
        let h = low_rank_data(64, 4, 2, 4);
        let cfg = SaeTrainConfig {
            lr: 1e300,
            beta: 1e300,
            batch: 8,
            epochs: 5,
            ..SaeTrainConfig::default()
        };
        match train(&h.view(), &cfg) {
            Err(SaeError::Diverged { last_good, .. }) => assert!(last_good.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_input() {
        let h = low_rank_data(10, 3, 1, 0);
        let bad = SaeTrainConfig {
            batch: 0,
            ..SaeTrainConfig::default()
        };
        assert!(matches!(train(&h.view(), &bad), Err(SaeError::Config(_))));
        let mut nan = h.clone();
        nan[[2, 1]] = f64::NAN;
        assert!(matches!(
            train(&nan.view(), &SaeTrainConfig::default()),
            Err(SaeError::NonFiniteInput { row: 2, col: 1 })
        ));
    }

    #[test]
    fn l0_profile_examples() {
        let h = low_rank_data(50, 4, 2, 5);
        let mut dead = SaeModel::init(4, 8, ScalingTransform::identity(4), 0);
        dead.w_enc.fill(0.0);
        assert_eq!(l0_profile(&dead, &h.view()).unwrap(), 0);
        let positive = h.mapv(f64::abs) + 0.1;
        let one = SaeModel {
            w_enc: array![[1.0, 0.0, 0.0, 0.0]],
            b_enc: array![0.0],
            w_dec: array![[1.0], [0.0], [0.0], [0.0]],
            b_dec: Array1::zeros(4),
            scale: ScalingTransform::identity(4),
        };
        assert_eq!(l0_profile(&one, &positive.view()).unwrap(), 1);
    }

    #[test]
    fn task_defaults() {
        let c = SaeTrainConfig::default();
        assert_eq!((c.batch, c.lr, c.beta), (256, 1e-4, 1e-5));
        assert_eq!(SaeTrainConfig::for_task(TaskKind::TwoStep, 10).latent_dim, Some(20));
        assert_eq!(SaeTrainConfig::for_task(TaskKind::GridWorld, 10).epochs, 15);
        assert_eq!(SaeTrainConfig::for_task(TaskKind::Graph, 10).latent_dim, Some(10));
        assert_eq!(SaeTrainConfig::for_task(TaskKind::TwoStep, 10).epochs, 30);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sae");
        let mut rng = rng::seeded(8);
        let mut model = random_model(5, 3, &mut rng);
        model.scale = ScalingTransform {
            mean_row_norm: 0.123456789,
            d: 5,
        };
        model.save(&path).unwrap();
        assert_eq!(SaeModel::load(&path).unwrap(), model);
    }
}
