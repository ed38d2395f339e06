//! Planted-feature activation generator and a synthetic multi-block stack.
//!
//! [`generate`] mixes standardized signal traces into random dictionary
//! atoms together with sparse distractor atoms and Gaussian noise, returning
//! the exact coefficient matrix as ground truth. [`SyntheticStack`] chains
//! affine maps and a pointwise nonlinearity across blocks, injecting signals
//! at chosen blocks, and serves as a source whose downstream blocks can be
//! recomputed after an edit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("signal {name} has {found} steps, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("signal {0} is constant and cannot be standardized")]
    ConstantSignal(String),
    #[error("need {needed} atoms but the dictionary has {available}")]
    TooFewAtoms { needed: usize, available: usize },
    #[error("could not draw an atom with |cos| <= {0} against the others")]
    Orthogonality(f64),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    pub d: usize,
    pub n_atoms: usize,
    /// Number of distractor atoms.
    pub n_distractors: usize,
    /// Mean number of active distractors per step.
    pub distractor_sparsity: f64,
    /// Per-coordinate noise standard deviation.
    pub noise_std: f64,
    /// Largest allowed `|cos|` between any two used atoms.
    pub max_cos: f64,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            d: 256,
            n_atoms: 512,
            n_distractors: 50,
            distractor_sparsity: 5.0,
            noise_std: 0.1,
            max_cos: 0.3,
            seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_atoms == 0 {
            return Err(SynthError::Spec("d and n_atoms must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::Spec(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if !(self.distractor_sparsity >= 0.0)
            || (self.n_distractors > 0 && self.distractor_sparsity > self.n_distractors as f64)
        {
            return Err(SynthError::Spec(format!(
                "distractor_sparsity {} must lie in [0, n_distractors]",
                self.distractor_sparsity
            )));
        }
        if !(self.max_cos > 0.0 && self.max_cos <= 1.0) {
            return Err(SynthError::Spec(format!("max_cos {} must lie in (0, 1]", self.max_cos)));
        }
        Ok(())
    }
}

/// Generated activations with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    /// `n x d`.
    pub activations: Array2<f64>,
    /// `n x n_atoms` coefficients; `activations = coefficients . dictionary + noise`.
    pub coefficients: Array2<f64>,
    /// `n_atoms x d`, unit rows.
    pub dictionary: Array2<f64>,
    /// Atom assigned to each planted signal, in input order.
    pub signal_atoms: Vec<(String, usize)>,
    pub distractor_atoms: Vec<usize>,
    /// Standardized signals as planted (`n x k`).
    pub standardized: Array2<f64>,
}

impl PlantedData {
    /// JSON description of the ground truth; `coefficients_path` names where
    /// the caller stored [`PlantedData::coefficients`].
    pub fn oracle_json(&self, spec: &PlantSpec, coefficients_path: &str) -> serde_json::Value {
        serde_json::json!({
            "spec": spec,
            "n_steps": self.activations.nrows(),
            "signal_atoms": self
                .signal_atoms
                .iter()
                .map(|(name, atom)| serde_json::json!({ "signal": name, "atom": atom }))
                .collect::<Vec<_>>(),
            "distractor_atoms": self.distractor_atoms,
            "coefficients_path": coefficients_path,
        })
    }

    /// Noise-free activations implied by the coefficient oracle.
    pub fn reconstruct_from_oracle(&self) -> Array2<f64> {
        self.coefficients.dot(&self.dictionary)
    }
}

fn random_unit(d: usize, rng: &mut rng::Rng) -> Array1<f64> {
    let v = Array1::from_shape_fn(d, |_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Random unit rows; the first `n_checked` rows are resampled until their
/// pairwise `|cos|` is at most `max_cos`.
pub fn build_dictionary(
    n_atoms: usize,
    d: usize,
    n_checked: usize,
    max_cos: f64,
    rng: &mut rng::Rng,
) -> Result<Array2<f64>> {
    let mut dict = Array2::zeros((n_atoms, d));
    for i in 0..n_atoms {
        let mut tries = 0;
        loop {
            let v = random_unit(d, rng);
            let ok = i >= n_checked || (0..i).all(|j| dict.row(j).dot(&v).abs() <= max_cos);
            if ok {
                dict.row_mut(i).assign(&v);
                break;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(SynthError::Orthogonality(max_cos));
            }
        }
    }
    Ok(dict)
}

/// Zero mean, unit (population) variance.
pub fn standardize(name: &str, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let mean = x.mean().unwrap_or(0.0);
    let std = x.std(0.0);
    if !(std > 1e-12) {
        return Err(SynthError::ConstantSignal(name.to_string()));
    }
    Ok(x.mapv(|v| (v - mean) / std))
}

/// Plants each scalar signal on its own atom and adds sparse half-normal
/// distractors and isotropic Gaussian noise.
///
/// With no signals, `n_steps` gives the length of the output.
pub fn generate(spec: &PlantSpec, signals: &[(&str, ArrayView1<f64>)], n_steps: usize) -> Result<PlantedData> {
    spec.validate()?;
    let n = signals.first().map_or(n_steps, |s| s.1.len());
    for (name, s) in signals {
        if s.len() != n {
            return Err(SynthError::LengthMismatch {
                name: (*name).to_string(),
                expected: n,
                found: s.len(),
            });
        }
    }
    let k = signals.len();
    let needed = k + spec.n_distractors;
    if needed > spec.n_atoms {
        return Err(SynthError::TooFewAtoms {
            needed,
            available: spec.n_atoms,
        });
    }
    let mut rng = rng::seeded(spec.seed);
    let dictionary = build_dictionary(spec.n_atoms, spec.d, needed, spec.max_cos, &mut rng)?;
    let mut standardized = Array2::zeros((n, k));
    for (j, (name, s)) in signals.iter().enumerate() {
        standardized.column_mut(j).assign(&standardize(name, s)?);
    }
    let mut coefficients = Array2::zeros((n, spec.n_atoms));
    coefficients.slice_mut(ndarray::s![.., ..k]).assign(&standardized);
    if spec.n_distractors > 0 {
        let p = spec.distractor_sparsity / spec.n_distractors as f64;
        for t in 0..n {
            for j in k..needed {
                if rng.random_bool(p) {
                    let c: f64 = rng.sample(StandardNormal);
                    coefficients[[t, j]] = c.abs();
                }
            }
        }
    }
    let mut activations = coefficients.dot(&dictionary);
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        activations.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    Ok(PlantedData {
        activations,
        coefficients,
        dictionary,
        signal_atoms: signals
            .iter()
            .enumerate()
            .map(|(j, (name, _))| ((*name).to_string(), j))
            .collect(),
        distractor_atoms: (k..needed).collect(),
        standardized,
    })
}

/// Pointwise nonlinearity applied after each block's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    Identity,
    Tanh,
    LeakyRelu { slope: f64 },
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Identity => v,
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::LeakyRelu { slope } => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
        }
    }
}

/// Adds `gain * signal_t * direction` to a block's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub block: usize,
    pub signal: usize,
    pub direction: Array1<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackBlock {
    /// `d x d`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Block `b` computes `phi(W_b h_{b-1} + c_b) + injections_b`, with `h_{-1}`
/// the step input. The readout maps the last block to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStack {
    pub blocks: Vec<StackBlock>,
    pub nonlinearity: Nonlinearity,
    pub injections: Vec<Injection>,
    /// `n_out x d`.
    pub readout: Array2<f64>,
    pub readout_bias: Array1<f64>,
}

/// Per-block activations of a forward pass plus the readout.
#[derive(Debug, Clone, PartialEq)]
pub struct StackOutput {
    pub blocks: Vec<Array2<f64>>,
    /// `n x n_out`.
    pub logits: Array2<f64>,
}

impl SyntheticStack {
    /// Identity affines, no injections, zero readout of width `n_out`.
    pub fn identity(d: usize, n_blocks: usize, n_out: usize) -> Self {
        SyntheticStack {
            blocks: (0..n_blocks)
                .map(|_| StackBlock {
                    weight: Array2::eye(d),
                    bias: Array1::zeros(d),
                })
                .collect(),
            nonlinearity: Nonlinearity::Identity,
            injections: Vec::new(),
            readout: Array2::zeros((n_out, d)),
            readout_bias: Array1::zeros(n_out),
        }
    }

    /// Near-identity blocks `W = I + mixing * G / sqrt(d)` with Gaussian `G`,
    /// followed by `nonlinearity`.
    pub fn random(d: usize, n_blocks: usize, n_out: usize, mixing: f64, nonlinearity: Nonlinearity, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let scale = mixing / (d as f64).sqrt();
        let blocks = (0..n_blocks)
            .map(|_| {
                let g = Array2::from_shape_fn((d, d), |_| {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                StackBlock {
                    weight: Array2::eye(d) + g * scale,
                    bias: Array1::zeros(d),
                }
            })
            .collect();
        let readout = Array2::from_shape_fn((n_out, d), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) / (d as f64).sqrt()
        });
        SyntheticStack {
            blocks,
            nonlinearity,
            injections: Vec::new(),
            readout,
            readout_bias: Array1::zeros(n_out),
        }
    }

    pub fn dim(&self) -> usize {
        self.readout.ncols()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.weight.dim() != (d, d) || blk.bias.len() != d {
                return Err(SynthError::Dim(format!("block {b} is not {d}x{d}")));
            }
        }
        for inj in &self.injections {
            if inj.block >= self.n_blocks() || inj.direction.len() != d {
                return Err(SynthError::Dim(format!("injection at block {} is invalid", inj.block)));
            }
        }
        if self.readout_bias.len() != self.readout.nrows() {
            return Err(SynthError::Dim("readout bias length".into()));
        }
        Ok(())
    }

    /// Output of block `b` given the previous block's activations.
    pub fn block_forward(&self, b: usize, prev: &ArrayView2<f64>, signals: &ArrayView2<f64>) -> Array2<f64> {
        let blk = &self.blocks[b];
        let mut h = prev.dot(&blk.weight.t()) + &blk.bias;
        let phi = self.nonlinearity;
        h.mapv_inplace(|v| phi.apply(v));
        for inj in self.injections.iter().filter(|i| i.block == b) {
            let s = signals.column(inj.signal);
            for (mut row, &st) in h.rows_mut().into_iter().zip(s.iter()) {
                row.scaled_add(inj.gain * st, &inj.direction);
            }
        }
        h
    }

    pub fn readout(&self, last: &ArrayView2<f64>) -> Array2<f64> {
        last.dot(&self.readout.t()) + &self.readout_bias
    }

    /// Full forward pass. `hook(b, h)` may rewrite block `b`'s output before
    /// later blocks are computed.
    pub fn forward_with<E>(
        &self,
        inputs: &ArrayView2<f64>,
        signals: &ArrayView2<f64>,
        hook: &mut dyn FnMut(usize, &mut Array2<f64>) -> std::result::Result<(), E>,
    ) -> std::result::Result<StackOutput, E> {
        let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(self.n_blocks());
        for b in 0..self.n_blocks() {
            let prev = if b == 0 { inputs.view() } else { blocks[b - 1].view() };
            let mut h = self.block_forward(b, &prev, signals);
            hook(b, &mut h)?;
            blocks.push(h);
        }
        let last = blocks.last().map_or(inputs.to_owned(), |h| h.clone());
        let logits = self.readout(&last.view());
        Ok(StackOutput { blocks, logits })
    }

    pub fn forward(&self, inputs: &ArrayView2<f64>, signals: &ArrayView2<f64>) -> StackOutput {
        self.forward_with::<std::convert::Infallible>(inputs, signals, &mut |_, _| Ok(()))
            .unwrap_or_else(|e| match e {})
    }
}

/// Column-stacks scalar signals into an `n x k` matrix.
pub fn stack_signals(signals: &[ArrayView1<f64>]) -> Array2<f64> {
    let n = signals.first().map_or(0, |s| s.len());
    let mut out = Array2::zeros((n, signals.len()));
    for (j, s) in signals.iter().enumerate() {
        out.column_mut(j).assign(s);
    }
    out
}

/// Row norms, used to size noise relative to signal.
pub fn mean_row_norm(x: &ArrayView2<f64>) -> f64 {
    x.map_axis(Axis(1), |r| r.dot(&r).sqrt()).mean().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sine(n: usize, freq: f64) -> Array1<f64> {
        Array1::from_shape_fn(n, |t| (t as f64 * freq).sin() + 0.3 * (t as f64 * 0.37).cos())
    }

    #[test]
    fn oracle_reconstructs_noise_free_activations() {
        let spec = PlantSpec {
            d: 32,
            n_atoms: 64,
            n_distractors: 10,
            distractor_sparsity: 2.0,
            noise_std: 0.0,
            ..PlantSpec::default()
        };
        let (a, b) = (sine(200, 0.1), sine(200, 0.05));
        let data = generate(&spec, &[("a", a.view()), ("b", b.view())], 0).unwrap();
        let back = data.reconstruct_from_oracle();
        for (x, y) in back.iter().zip(data.activations.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        for j in 0..2 {
            let col = data.standardized.column(j);
            assert_abs_diff_eq!(col.mean().unwrap(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col.var(0.0), 1.0, epsilon = 1e-12);
        }
        assert!(data.coefficients.slice(ndarray::s![.., 2..12]).iter().all(|&c| c >= 0.0));
        assert!(data.coefficients.slice(ndarray::s![.., 12..]).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn used_atoms_are_near_orthogonal() {
        let spec = PlantSpec {
            d: 16,
            n_atoms: 40,
            n_distractors: 20,
            ..PlantSpec::default()
        };
        let s = sine(50, 0.2);
        let data = generate(&spec, &[("s", s.view())], 0).unwrap();
        let used = 21;
        for i in 0..used {
            assert_abs_diff_eq!(data.dictionary.row(i).dot(&data.dictionary.row(i)), 1.0, epsilon = 1e-12);
            for j in 0..i {
                assert!(data.dictionary.row(i).dot(&data.dictionary.row(j)).abs() <= 0.3);
            }
        }
    }

    #[test]
    fn distractor_rate_matches_sparsity() {
        let spec = PlantSpec {
            d: 32,
            n_atoms: 64,
            ..PlantSpec::default()
        };
        let data = generate(&spec, &[], 4000).unwrap();
        let active = data.coefficients.iter().filter(|&&c| c > 0.0).count() as f64 / 4000.0;
        assert!((active - 5.0).abs() < 0.15, "mean active distractors {active}");
    }

    #[test]
    fn generation_is_deterministic_and_checked() {
        let spec = PlantSpec {
            d: 8,
            n_atoms: 16,
            n_distractors: 4,
            distractor_sparsity: 1.0,
            ..PlantSpec::default()
        };
        let s = sine(30, 0.3);
        let a = generate(&spec, &[("s", s.view())], 0).unwrap();
        let b = generate(&spec, &[("s", s.view())], 0).unwrap();
        assert_eq!(a, b);
        let short = sine(29, 0.3);
        assert!(matches!(
            generate(&spec, &[("s", s.view()), ("t", short.view())], 0),
            Err(SynthError::LengthMismatch { .. })
        ));
        let flat = Array1::from_elem(30, 2.0);
        assert!(matches!(
            generate(&spec, &[("f", flat.view())], 0),
            Err(SynthError::ConstantSignal(_))
        ));
        let too_many = PlantSpec {
            n_distractors: 16,
            distractor_sparsity: 1.0,
            ..spec
        };
        assert!(matches!(
            generate(&too_many, &[("s", s.view())], 0),
            Err(SynthError::TooFewAtoms { .. })
        ));
    }

    #[test]
    fn identity_stack_copies_input() {
        let stack = SyntheticStack::identity(5, 4, 2);
        let mut rng = rng::seeded(1);
        let x = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
        let out = stack.forward(&x.view(), &Array2::zeros((7, 0)).view());
        assert_eq!(out.blocks.len(), 4);
        for b in &out.blocks {
            assert_eq!(b, &x);
        }
    }

    #[test]
    fn injection_enters_at_its_block() {
        let mut stack = SyntheticStack::identity(4, 3, 1);
        let dir = Array1::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        stack.injections.push(Injection {
            block: 1,
            signal: 0,
            direction: dir,
            gain: 2.0,
        });
        stack.validate().unwrap();
        let x = Array2::zeros((3, 4));
        let sig = Array2::from_shape_vec((3, 1), vec![1.0, -1.0, 0.5]).unwrap();
        let out = stack.forward(&x.view(), &sig.view());
        assert!(out.blocks[0].iter().all(|&v| v == 0.0));
        assert_eq!(out.blocks[1].column(0).to_vec(), vec![2.0, -2.0, 1.0]);
        assert_eq!(out.blocks[2], out.blocks[1]);
    }

    #[test]
    fn hook_substitution_with_itself_changes_nothing() {
        let stack = SyntheticStack::random(6, 4, 3, 0.3, Nonlinearity::Tanh, 2);
        let mut rng = rng::seeded(3);
        let x = Array2::from_shape_fn((10, 6), |_| rng.random_range(-1.0..1.0));
        let sig = Array2::zeros((10, 0));
        let plain = stack.forward(&x.view(), &sig.view());
        let hooked = stack
            .forward_with::<()>(&x.view(), &sig.view(), &mut |b, h| {
                *h = plain.blocks[b].clone();
                Ok(())
            })
            .unwrap();
        assert_eq!(plain, hooked);
    }
}
