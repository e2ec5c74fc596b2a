//! Optimizers and schedules used by the trainer: SGD, Adam, Adadelta,
//! gradient-norm clipping, and plateau-halving learning rates.

use crate::error::{Error, Result};
use crate::models::{Gradient, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adadelta,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adadelta => "adadelta",
        }
    }
}

/// Mutable optimizer state for one parameter vector.
///
/// Adam keeps first/second-moment accumulators with β1=0.9, β2=0.999,
/// ε=1e-8; Adadelta keeps squared-gradient and squared-update
/// accumulators with ρ=0.95, ε=1e-6. All kinds scale the final update
/// by the learning rate.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    dim: usize,
    // Adam
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    // Adadelta
    sq_grad: Vec<f64>,
    sq_update: Vec<f64>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        let acc = |needed: bool| if needed { vec![0.0; dim] } else { Vec::new() };
        OptimizerState {
            kind,
            lr,
            dim,
            m: acc(kind == OptimizerKind::Adam),
            v: acc(kind == OptimizerKind::Adam),
            step_count: 0,
            sq_grad: acc(kind == OptimizerKind::Adadelta),
            sq_update: acc(kind == OptimizerKind::Adadelta),
        }
    }

    pub fn sgd(lr: f64, dim: usize) -> Self {
        Self::new(OptimizerKind::Sgd, lr, dim)
    }

    pub fn adam(lr: f64, dim: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, dim)
    }

    pub fn adadelta(lr: f64, dim: usize) -> Self {
        Self::new(OptimizerKind::Adadelta, lr, dim)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one descent step: θ ← θ - update(g).
    pub fn step(&mut self, params: &mut ParamVector, g: &Gradient) -> Result<()> {
        if g.len() != self.dim || params.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "optimizer dim {} vs params {} vs grad {}",
                self.dim,
                params.len(),
                g.len()
            )));
        }
        let theta = params.values_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..self.dim {
                    theta[i] -= self.lr * g[i];
                }
            }
            OptimizerKind::Adam => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..self.dim {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    theta[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::Adadelta => {
                for i in 0..self.dim {
                    self.sq_grad[i] = ADADELTA_RHO * self.sq_grad[i]
                        + (1.0 - ADADELTA_RHO) * g[i] * g[i];
                    let update = (self.sq_update[i] + ADADELTA_EPS).sqrt()
                        / (self.sq_grad[i] + ADADELTA_EPS).sqrt()
                        * g[i];
                    self.sq_update[i] = ADADELTA_RHO * self.sq_update[i]
                        + (1.0 - ADADELTA_RHO) * update * update;
                    theta[i] -= self.lr * update;
                }
            }
        }
        Ok(())
    }
}

/// Rescales `g` to L2 norm `c` when it exceeds `c`; otherwise returns it
/// unchanged.
pub fn clip_by_norm(g: Gradient, c: f64) -> Gradient {
    assert!(c > 0.0, "clip threshold must be positive");
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    // 1e-12 slack keeps the post-clip norm inside the threshold, so
    // clipping an already-clipped vector is exactly a no-op
    if norm > c + 1e-12 {
        let scale = c / norm;
        g.into_iter().map(|v| v * scale).collect()
    } else {
        g
    }
}

/// Halves the learning rate after `patience` consecutive non-improving
/// validation evaluations, never below `floor` and never rising.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    patience: usize,
    floor: f64,
    higher_is_better: bool,
    lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, patience: usize, floor: f64, higher_is_better: bool) -> Self {
        PlateauSchedule { patience, floor, higher_is_better, lr: initial_lr, best: None, stale: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn improved(&self, metric: f64) -> bool {
        match self.best {
            None => true,
            Some(best) => {
                if self.higher_is_better {
                    metric > best
                } else {
                    metric < best
                }
            }
        }
    }

    /// Records one validation evaluation and returns the (possibly
    /// halved) learning rate.
    pub fn update(&mut self, metric: f64) -> f64 {
        if self.improved(metric) {
            self.best = Some(metric);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr = (self.lr / 2.0).max(self.floor);
                self.stale = 0;
            }
        }
        self.lr
    }
}
