use serde::{Deserialize, Serialize};

use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::adamw(1e-3)
    }
}

impl OptimizerSpec {
    pub fn adamw(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adamw(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LormaError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state for a fixed list of parameter matrices.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, shapes: &[(usize, usize)]) -> Result<Self> {
        spec.validate()?;
        let buf = || shapes.iter().map(|(r, c)| vec![0.0; r * c]).collect();
        Ok(Self {
            spec,
            first: buf(),
            second: buf(),
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update with learning rate `lr`. Weight decay is decoupled:
    /// it shrinks the parameters directly and never enters the moments.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(LormaError::shape(
                "Optimizer::step",
                format!(
                    "optimizer tracks {} tensors, got {} params and {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        self.t += 1;
        let spec = &self.spec;
        let decay = 1.0 - lr * spec.weight_decay;
        let bc1 = 1.0 - spec.beta1.powi(self.t as i32);
        let bc2 = 1.0 - spec.beta2.powi(self.t as i32);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[idx].len() != g.data().len() {
                return Err(LormaError::shape(
                    "Optimizer::step",
                    format!("param {idx}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *w *= decay;
                match spec.kind {
                    OptimizerKind::Sgd => *w -= lr * gi,
                    OptimizerKind::Adamw => {
                        *mi = spec.beta1 * *mi + (1.0 - spec.beta1) * gi;
                        *vi = spec.beta2 * *vi + (1.0 - spec.beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + spec.eps);
                    }
                }
            }
            if p.data().iter().any(|w| !w.is_finite()) {
                return Err(LormaError::NonFinite { op: "Optimizer::step" });
            }
        }
        Ok(())
    }
}
