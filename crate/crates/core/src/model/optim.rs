use super::{ModelError, ModelGradients, ModelParams, MODEL_TENSOR_NAMES};

/// How the learning-rate decay counter advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecaySchedule {
    /// `lr / (1 + decay * updates)`, counting mini-batch updates.
    PerUpdate,
    /// Same formula counting completed epochs.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_schedule: DecaySchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 512,
            learning_rate: 5e-4,
            lr_decay: 5e-5,
            decay_schedule: DecaySchedule::PerUpdate,
            epochs: 200,
            batch_size: 20,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            grad_clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay.is_finite() && self.lr_decay >= 0.0) {
            return bad("lr_decay must be >= 0");
        }
        if !(self.rmsprop_rho > 0.0 && self.rmsprop_rho < 1.0) {
            return bad("rmsprop_rho must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon.is_finite() && self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_epsilon must be positive");
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one accumulator per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub accumulators: Vec<Vec<f64>>,
    pub update_count: u64,
    pub epochs_completed: u64,
}

impl RmspropState {
    pub fn new(p: &ModelParams) -> Self {
        Self {
            accumulators: p.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            update_count: 0,
            epochs_completed: 0,
        }
    }

    /// Learning rate for the next update.
    pub fn current_lr(&self, cfg: &TrainConfig) -> f64 {
        let k = match cfg.decay_schedule {
            DecaySchedule::PerUpdate => self.update_count,
            DecaySchedule::PerEpoch => self.epochs_completed,
        };
        cfg.learning_rate / (1.0 + cfg.lr_decay * k as f64)
    }
}

/// `s <- ρ s + (1-ρ) g²; θ <- θ - lr_t g / (√s + ε)`.
///
/// Gradients are checked before anything is written, so a rejected update
/// leaves both parameters and state untouched.
pub fn rmsprop_update(
    params: &mut ModelParams,
    grads: &ModelGradients,
    state: &mut RmspropState,
    cfg: &TrainConfig,
) -> Result<(), ModelError> {
    let g = grads.tensors();
    let shapes_ok = state.accumulators.len() == g.len()
        && params
            .tensors()
            .iter()
            .zip(&g)
            .zip(&state.accumulators)
            .all(|((p, g), s)| p.len() == g.len() && g.len() == s.len());
    if !shapes_ok {
        return Err(ModelError::Shape {
            expected: "gradients and optimizer state matching the parameters".into(),
            found: "mismatched tensor sizes".into(),
        });
    }
    for (name, tensor) in MODEL_TENSOR_NAMES.iter().zip(&g) {
        if let Some(index) = tensor.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteGradient {
                tensor: name,
                index,
                value: tensor[index],
            });
        }
    }
    let lr = state.current_lr(cfg);
    let (rho, eps) = (cfg.rmsprop_rho, cfg.rmsprop_epsilon);
    for ((theta, grad), acc) in params
        .tensors_mut()
        .into_iter()
        .zip(g)
        .zip(state.accumulators.iter_mut())
    {
        for ((t, &gi), s) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
            *s = rho * *s + (1.0 - rho) * gi * gi;
            *t -= lr * gi / (s.sqrt() + eps);
        }
    }
    state.update_count += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn setup() -> (ModelParams, ModelGradients, RmspropState) {
        let p = init_model(2, 3, vec!["a".into(), "b".into()], 1);
        let g = ModelGradients::zeros_like(&p);
        let s = RmspropState::new(&p);
        (p, g, s)
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.hidden_dim, 512);
        assert_eq!(c.learning_rate, 5e-4);
        assert_eq!(c.lr_decay, 5e-5);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.batch_size, 20);
        c.validate().unwrap();
    }

    #[test]
    fn zero_gradient_decays_state_only() {
        let (mut p, g, mut s) = setup();
        s.accumulators.iter_mut().for_each(|a| a.fill(1.0));
        let before = p.clone();
        rmsprop_update(&mut p, &g, &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert!(s.accumulators.iter().flatten().all(|&v| (v - 0.9).abs() < 1e-15));
        assert_eq!(s.update_count, 1);
    }

    #[test]
    fn unit_gradient_step() {
        let (mut p, mut g, mut s) = setup();
        g.head.b.as_mut_slice()[0] = 1.0;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let before = p.head.b[0];
        rmsprop_update(&mut p, &g, &mut s, &cfg).unwrap();
        assert!((s.accumulators[13][0] - 0.1).abs() < 1e-15);
        let step = before - p.head.b[0];
        let expected = 1e-3 / (0.1f64.sqrt() + 1e-8);
        assert!((step - expected).abs() < 1e-15);
        assert!((step - 3.162278e-3).abs() < 1e-9);
    }

    #[test]
    fn inverse_time_decay() {
        let (p, _, mut s) = setup();
        let cfg = TrainConfig::default();
        s.update_count = 20_000;
        assert!((s.current_lr(&cfg) - cfg.learning_rate / 2.0).abs() < 1e-18);
        let per_epoch = TrainConfig {
            decay_schedule: DecaySchedule::PerEpoch,
            ..cfg.clone()
        };
        assert_eq!(s.current_lr(&per_epoch), cfg.learning_rate);
        drop(p);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_writes() {
        let (mut p, mut g, mut s) = setup();
        g.lstm.forget_gate.wh.as_mut_slice()[4] = f64::NAN;
        g.head.b.as_mut_slice()[0] = 1.0;
        let before = (p.clone(), s.clone());
        let err = rmsprop_update(&mut p, &g, &mut s, &TrainConfig::default()).unwrap_err();
        match err {
            ModelError::NonFiniteGradient { tensor, index, .. } => {
                assert_eq!((tensor, index), ("W_fh", 4));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!((p, s), before);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { rmsprop_rho: 1.0, ..Default::default() },
            TrainConfig { grad_clip_norm: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
