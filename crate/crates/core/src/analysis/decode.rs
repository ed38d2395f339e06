use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};

/// One feature vector with its run and binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSample {
    pub run: usize,
    pub features: Array1<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeLoss {
    #[default]
    Hinge,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// L2 penalty weight.
    pub lambda: f64,
    pub epochs: usize,
    pub loss: DecodeLoss,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            lambda: 1e-3,
            epochs: 200,
            loss: DecodeLoss::Hinge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub mean_accuracy: f64,
    /// `(held-out run, accuracy, n held-out samples)`.
    pub per_fold: Vec<(usize, f64, usize)>,
}

/// Linear classifier on standardized features with a trailing bias feature.
struct Linear {
    mean: Array1<f64>,
    std: Array1<f64>,
    w: Array1<f64>,
}

impl Linear {
    fn prepare(&self, x: &Array1<f64>) -> Array1<f64> {
        let z = (x - &self.mean) / &self.std;
        let mut out = Array1::ones(z.len() + 1);
        out.slice_mut(ndarray::s![..z.len()]).assign(&z);
        out
    }

    fn predict(&self, x: &Array1<f64>) -> bool {
        self.w.dot(&self.prepare(x)) > 0.0
    }
}

/// Deterministic stochastic subgradient descent (Pegasos step sizes) visiting
/// samples in their given order every epoch.
fn fit(train: &[&DecodeSample], cfg: &DecodeConfig) -> Linear {
    let p = train[0].features.len();
    let x = Array2::from_shape_fn((train.len(), p), |(i, j)| train[i].features[j]);
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let std = x
        .std_axis(ndarray::Axis(0), 0.0)
        .mapv(|s| if s < 1e-12 { 1.0 } else { s });
    let mut model = Linear {
        mean,
        std,
        w: Array1::zeros(p + 1),
    };
    let prepared: Vec<(Array1<f64>, f64)> = train
        .iter()
        .map(|s| (model.prepare(&s.features), if s.label { 1.0 } else { -1.0 }))
        .collect();
    let mut t = 0.0;
    for _ in 0..cfg.epochs {
        for (xi, yi) in &prepared {
            t += 1.0;
            let eta = 1.0 / (cfg.lambda * t);
            let margin = yi * model.w.dot(xi);
            model.w *= 1.0 - eta * cfg.lambda;
            let g = match cfg.loss {
                DecodeLoss::Hinge => {
                    if margin < 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                DecodeLoss::Logistic => 1.0 / (1.0 + margin.exp()),
            };
            if g != 0.0 {
                model.w.scaled_add(eta * yi * g, xi);
            }
        }
    }
    model
}

/// Leave-one-run-out accuracy of a linear classifier.
pub fn decode_bottleneck(samples: &[DecodeSample], cfg: &DecodeConfig) -> Result<DecodeResult> {
    let runs: BTreeSet<usize> = samples.iter().map(|s| s.run).collect();
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns(runs.len()));
    }
    if let Some(first) = samples.first() {
        if let Some(bad) = samples.iter().find(|s| s.features.len() != first.features.len()) {
            return Err(AnalysisError::LengthMismatch(first.features.len(), bad.features.len()));
        }
    }
    let mut per_fold = Vec::with_capacity(runs.len());
    for &held in &runs {
        let train: Vec<&DecodeSample> = samples.iter().filter(|s| s.run != held).collect();
        let test: Vec<&DecodeSample> = samples.iter().filter(|s| s.run == held).collect();
        assert!(train.iter().all(|s| s.run != held));
        let positives = train.iter().filter(|s| s.label).count();
        if positives == 0 || positives == train.len() {
            return Err(AnalysisError::SingleClassFold { run: held });
        }
        let model = fit(&train, cfg);
        let correct = test.iter().filter(|s| model.predict(&s.features) == s.label).count();
        per_fold.push((held, correct as f64 / test.len() as f64, test.len()));
    }
    let mean_accuracy = per_fold.iter().map(|f| f.1).sum::<f64>() / per_fold.len() as f64;
    Ok(DecodeResult {
        mean_accuracy,
        per_fold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn blobs(runs: usize, per_run: usize, gap: f64, seed: u64) -> Vec<DecodeSample> {
        let mut rng = rng::seeded(seed);
        let mut out = Vec::new();
        for run in 0..runs {
            for k in 0..per_run {
                let label = k % 2 == 0;
                let centre = if label { gap } else { -gap };
                let features = Array1::from_shape_fn(5, |j| {
                    let base: f64 = rng.sample(StandardNormal);
                    if j == 0 {
                        centre + 0.3 * base
                    } else {
                        base
                    }
                });
                out.push(DecodeSample { run, features, label });
            }
        }
        out
    }

    #[test]
    fn separable_data_is_decoded_perfectly() {
        for loss in [DecodeLoss::Hinge, DecodeLoss::Logistic] {
            let cfg = DecodeConfig { loss, ..DecodeConfig::default() };
            let res = decode_bottleneck(&blobs(5, 20, 3.0, 1), &cfg).unwrap();
            assert_eq!(res.mean_accuracy, 1.0, "{loss:?}");
            assert_eq!(res.per_fold.len(), 5);
        }
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let mut data = blobs(10, 40, 3.0, 2);
        let mut labels: Vec<bool> = data.iter().map(|s| s.label).collect();
        labels.shuffle(&mut rng::seeded(3));
        for (s, l) in data.iter_mut().zip(labels) {
            s.label = l;
        }
        let res = decode_bottleneck(&data, &DecodeConfig::default()).unwrap();
        let n = data.len() as f64;
        let band = 1.96 * (0.25 / n).sqrt();
        assert!((res.mean_accuracy - 0.5).abs() <= band, "accuracy {}", res.mean_accuracy);
    }

    #[test]
    fn fold_errors() {
        let data = blobs(1, 10, 1.0, 0);
        assert!(matches!(
            decode_bottleneck(&data, &DecodeConfig::default()),
            Err(AnalysisError::TooFewRuns(1))
        ));
        let mut data = blobs(2, 10, 1.0, 0);
        for s in data.iter_mut().filter(|s| s.run == 1) {
            s.label = true;
        }
        assert!(matches!(
            decode_bottleneck(&data, &DecodeConfig::default()),
            Err(AnalysisError::SingleClassFold { run: 0 })
        ));
    }

    #[test]
    fn deterministic() {
        let data = blobs(4, 12, 0.5, 9);
        let a = decode_bottleneck(&data, &DecodeConfig::default()).unwrap();
        let b = decode_bottleneck(&data, &DecodeConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
