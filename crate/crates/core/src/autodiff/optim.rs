use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer hyperparameters plus the running per-parameter moments.
///
/// Weight decay is coupled: `weight_decay * p` is added to the gradient before
/// the update rule runs.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            let unit = 0.0..1.0;
            if !unit.contains(&beta1) || !unit.contains(&beta2) || eps <= 0.0 {
                return Err(Error::Config(format!(
                    "invalid adam hyperparameters beta1={beta1} beta2={beta2} eps={eps}"
                )));
            }
        }
        Ok(Self {
            kind,
            lr,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, 0.0)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), lr, 0.0)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// All parameters must carry a gradient; nothing is modified otherwise.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::MissingGradient(i));
        }
        if matches!(self.kind, OptimizerKind::Adam { .. }) {
            self.ensure_moments(params)?;
        }
        self.step += 1;
        let t = self.step as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let mut grad = p.take_grad().expect("checked above");
            if self.weight_decay != 0.0 {
                for (g, w) in grad.iter_mut().zip(p.values()) {
                    *g += self.weight_decay * w;
                }
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.values_mut().iter_mut().zip(&grad) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, g), m), v) in
                        p.values_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    fn ensure_moments(&mut self, params: &[&mut Tensor]) -> Result<()> {
        if self.first_moment.is_empty() && self.step == 0 {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
            return Ok(());
        }
        if self.first_moment.len() != params.len()
            || self
                .first_moment
                .iter()
                .zip(params)
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::OptimizerMismatch(format!(
                "state tracks {} parameters, step received {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::row(values.to_vec()).unwrap();
        t.set_grad(grad.to_vec()).unwrap();
        t
    }

    #[test]
    fn sgd_step_example() {
        let mut p = param(&[1.0], &[0.5]);
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.values()[0] - 0.95).abs() < 1e-15);
        assert!(p.grad().is_none());
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for mut opt in [
            OptimizerState::sgd(0.1).unwrap(),
            OptimizerState::adam(0.1).unwrap(),
        ] {
            let mut p = param(&[0.25, -3.0], &[0.0, 0.0]);
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(p.values(), &[0.25, -3.0]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [0.5, -2.0, 1e-3] {
            let mut p = param(&[1.0], &[g]);
            let mut opt = OptimizerState::adam(0.01).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            let moved = (1.0 - p.values()[0]).abs();
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-12, "g={g}: {moved} vs {expected}");
        }
    }

    #[test]
    fn missing_gradient_is_rejected_without_side_effects() {
        let mut a = param(&[1.0], &[1.0]);
        let mut b = Tensor::row(vec![2.0]).unwrap();
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut a, &mut b]),
            Err(Error::MissingGradient(1))
        ));
        assert_eq!(a.values(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = param(&[2.0], &[0.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 1.0).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.values()[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn moment_shapes_must_stay_consistent() {
        let mut opt = OptimizerState::adam(0.1).unwrap();
        let mut a = param(&[1.0, 2.0], &[1.0, 1.0]);
        opt.step(&mut [&mut a]).unwrap();
        let mut b = param(&[1.0], &[1.0]);
        assert!(opt.step(&mut [&mut b]).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptimizerState::sgd(0.0).is_err());
        assert!(OptimizerState::sgd(f64::NAN).is_err());
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.1, -1.0).is_err());
    }
}
