//! Adam optimizer and the training loop: mini-batch cross-entropy with
//! an L1 penalty on the reduction layers, a seeded shuffle, a held-out
//! validation split, and best-validation-F1 parameter retention.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{l1_penalty, l1_subgradient};
use crate::metrics::evaluate_scores;
use crate::model::{Model, Parameter};
use crate::sim::SampleWindow;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Parameter]) -> AdamState {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect(),
        }
    }
}

/// Textbook Adam update with bias-corrected moments.
pub fn adam_step(
    params: &mut [Parameter],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params vs {} grads vs {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if p.value.shape != grads[i].shape || p.value.shape != state.m[i].shape {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "parameter {} has shape {:?}, gradient {:?}, state {:?}",
                    p.name, p.value.shape, grads[i].shape, state.m[i].shape
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let p = &mut params[i].value.data;
        let g = &grads[i].data;
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    FromCheckpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L1 weight on the reduction layers.
    pub lambda: f64,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 1e-3,
            seed: 7,
            init: InitMode::Random,
        }
    }
}

impl TrainConfig {
    /// Zero epochs (evaluate the init) and a zero learning rate are
    /// legal; everything else must be positive and betas sit in (0,1).
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::precondition("train_config", detail));
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.lr >= 0.0) {
            return fail(format!("learning rate must be nonnegative, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One training example with tensors already in model layout.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub visual: Tensor,
    pub seismic: Tensor,
    pub label: usize,
    pub distance: f32,
}

pub fn samples_from_windows(windows: &[SampleWindow], h: usize, w: usize) -> Vec<TrainSample> {
    windows
        .iter()
        .map(|win| {
            let (visual, seismic) = win.to_tensors(h, w);
            TrainSample {
                visual,
                seismic,
                label: win.label as usize,
                distance: win.distance,
            }
        })
        .collect()
}

/// Indices of the parameters the L1 penalty applies to.
pub fn reduction_indices(model: &Model) -> Vec<usize> {
    model
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.name.contains(".reduce."))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters the model keeps; 0 when no
    /// epochs ran.
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

/// Trains in place and leaves the model at the parameters of the epoch
/// with the best held-out F1 (later epochs win ties). One tenth of the
/// data, at least one sample when there are two or more, is held out
/// for validation; the objective is mean cross-entropy plus the L1
/// penalty on reduction weights.
pub fn train(model: &mut Model, data: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::precondition("train", "dataset is empty"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b97f4a7c15));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let val_n = if data.len() >= 2 {
        (data.len() / 10).max(1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(val_n);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let l1_idx = reduction_indices(model);
    let adam_cfg = cfg.adam();
    let mut state = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Parameter>)> = None;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        for (batch_no, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Tensor> = model
                .params
                .iter()
                .map(|p| Tensor::zeros(&p.value.shape))
                .collect();
            for &i in batch {
                let s = &data[i];
                let (loss, grads) = model.loss_and_grads(&s.visual, &s.seismic, s.label)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("training loss in epoch {epoch}, batch {batch_no}"),
                    });
                }
                ce_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.data.iter_mut().zip(&g.data) {
                        *av += gv;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in acc.iter_mut() {
                a.data.iter_mut().for_each(|v| *v *= scale);
            }
            for &i in &l1_idx {
                let sub = l1_subgradient(&model.params[i].value, cfg.lambda);
                for (av, sv) in acc[i].data.iter_mut().zip(&sub.data) {
                    *av += sv;
                }
            }
            adam_step(&mut model.params, &acc, &mut state, &adam_cfg)?;
        }
        let penalty: f64 = l1_idx
            .iter()
            .map(|&i| l1_penalty(&model.params[i].value, cfg.lambda))
            .sum();
        let train_loss = ce_sum / train_idx.len().max(1) as f64 + penalty;

        let val_f1 = if val_idx.is_empty() {
            0.0
        } else {
            let mut scores = Vec::with_capacity(val_idx.len());
            let mut labels = Vec::with_capacity(val_idx.len());
            for &i in &val_idx {
                scores.push(model.confidence(&data[i].visual, &data[i].seismic)?);
                labels.push(data[i].label as u8);
            }
            evaluate_scores(&scores, &labels, 0.5)?.f1
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_f1,
        });
        if best.as_ref().is_none_or(|(f, _, _)| val_f1 >= *f) {
            best = Some((val_f1, epoch, model.params.clone()));
        }
    }

    let (best_val_f1, best_epoch) = match best {
        Some((f1, epoch, params)) => {
            model.params = params;
            (f1, epoch)
        }
        None => (0.0, 0),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_f1,
    })
}

/// Positive-class confidence for every sample.
pub fn score_samples(model: &Model, samples: &[TrainSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| model.confidence(&s.visual, &s.seismic))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Variant};
    use rand::Rng;

    fn scalar_param(w: f64) -> Vec<Parameter> {
        vec![Parameter {
            name: "w".into(),
            value: Tensor {
                shape: vec![1],
                data: vec![w],
            },
        }]
    }

    fn grad(g: f64) -> Vec<Tensor> {
        vec![Tensor {
            shape: vec![1],
            data: vec![g],
        }]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = scalar_param(5.0);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &grad(3.0), &mut state, &cfg).unwrap();
        assert!((params[0].value.data[0] - (5.0 - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut params = scalar_param(2.5);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        for _ in 0..10 {
            adam_step(&mut params, &grad(0.0), &mut state, &cfg).unwrap();
        }
        assert_eq!(params[0].value.data[0], 2.5);
    }

    #[test]
    fn quadratic_descent_matches_scalar_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(&params);
        // independent scalar recurrence, maintained by hand
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * (params[0].value.data[0] - 3.0);
            adam_step(&mut params, &grad(g), &mut state, &cfg).unwrap();

            let gh = 2.0 * (w - 3.0);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * gh;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * gh * gh;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            w -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
            assert!((params[0].value.data[0] - w).abs() < 1e-12);
        }
        assert!((w - 3.0).abs() < 0.5, "ended at {w}");
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let mut params = scalar_param(1.0);
        let other = vec![Parameter {
            name: "w".into(),
            value: Tensor::zeros(&[2]),
        }];
        let mut state = AdamState::new(&other);
        let err = adam_step(&mut params, &grad(1.0), &mut state, &AdamConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_rejects_bad_betas() {
        let mut cfg = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.beta1 = 0.9;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        // two constant-level seismic traces, trivially separable
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let level = if label == 1 { 1.0 } else { 0.2 };
                let jitter: f64 = rng.random_range(-0.02..0.02);
                TrainSample {
                    visual: Tensor::zeros(&[20, 20, 1]),
                    seismic: Tensor {
                        shape: vec![128, 1],
                        data: vec![level + jitter; 128],
                    },
                    label,
                    distance: if label == 1 { 5.0 } else { 20.0 },
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = Model::build(ModelSpec::tiny(Variant::SeismicOnly)).unwrap();
        let before: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train(&mut model, &toy_samples(12, 1), &cfg).unwrap();
        for (p, b) in model.params.iter().zip(&before) {
            assert_eq!(p.value.data, b.data);
        }
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let mut model = Model::build(ModelSpec::tiny(Variant::SeismicOnly)).unwrap();
        let samples = toy_samples(20, 2);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 10,
            lr: 0.01,
            lambda: 0.0,
            ..TrainConfig::default()
        };
        train(&mut model, &samples, &cfg).unwrap();
        let scores = score_samples(&model, &samples).unwrap();
        let correct = scores
            .iter()
            .zip(&samples)
            .filter(|(s, smp)| (**s > 0.5) == (smp.label == 1))
            .count();
        assert_eq!(correct, samples.len());
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let run = || {
            let mut model = Model::build(ModelSpec::tiny(Variant::OpBilinear)).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            let samples: Vec<TrainSample> = (0..10)
                .map(|i| TrainSample {
                    visual: Tensor {
                        shape: vec![20, 20, 1],
                        data: (0..400).map(|_| rng.random_range(0.0..1.0)).collect(),
                    },
                    seismic: Tensor {
                        shape: vec![128, 1],
                        data: (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    },
                    label: i % 2,
                    distance: 5.0,
                })
                .collect();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..TrainConfig::default()
            };
            let out = train(&mut model, &samples, &cfg).unwrap();
            (out.history.last().unwrap().train_loss, model.params)
        };
        let (loss_a, params_a) = run();
        let (loss_b, params_b) = run();
        assert_eq!(loss_a, loss_b);
        for (a, b) in params_a.iter().zip(&params_b) {
            assert_eq!(a.value.data, b.value.data);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = Model::build(ModelSpec::tiny(Variant::SeismicOnly)).unwrap();
        assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    }
}
