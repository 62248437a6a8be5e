//! Minibatch training of adapter factors on synthetic regression tasks.

mod optim;
mod schedule;
mod task;

use std::fmt::Write as _;
use std::time::Instant;

pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
pub use schedule::{LrSchedule, ScheduleKind};
pub use task::{make_task, Task, TargetKind, TaskKind, TaskSpec};

use crate::adapters::{delta_w, forward, AdapterState};
use crate::error::{LormaError, Result};
use crate::gradients::backward;
use crate::linalg::{numerical_rank, Matrix};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Minibatch loss before each update.
    pub step_losses: Vec<f64>,
    /// Rank of `I(s·BA)` (`s·BA` for LoRA) at the end of each epoch.
    pub epoch_rank_trace: Vec<usize>,
    /// Rank of `ΔW` at the end of each epoch.
    pub epoch_delta_rank: Vec<usize>,
    pub wall_seconds: f64,
}

impl TrainLog {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.step_losses.iter().enumerate() {
            let _ = writeln!(out, "{i},{l:?}");
        }
        out
    }

    pub fn rank_csv(&self) -> String {
        let mut out = String::from("epoch,rank_inflated,rank_delta\n");
        for (e, (ri, rd)) in self.epoch_rank_trace.iter().zip(&self.epoch_delta_rank).enumerate() {
            let _ = writeln!(out, "{e},{ri},{rd}");
        }
        out
    }
}

/// `‖H − Y‖²_F / (2n)` with `H = forward(state, X)`.
pub fn mse_loss(h: &Matrix, y: &Matrix) -> Result<f64> {
    let diff = h.sub(y)?;
    Ok(diff.frobenius_dot(&diff)? / (2.0 * y.cols() as f64))
}

/// Loss over the full training set.
pub fn dataset_loss(state: &AdapterState, task: &Task) -> Result<f64> {
    mse_loss(&forward(state, &task.x)?, &task.y)
}

pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Train `B` and `A` in place. The data order is reshuffled every epoch from
/// `seed`; the final partial batch of an epoch is kept.
pub fn train(
    state: &mut AdapterState,
    task: &Task,
    opt: &OptimizerSpec,
    sched: &LrSchedule,
    epochs: usize,
    batch: usize,
    seed: u64,
) -> Result<TrainLog> {
    let start = Instant::now();
    if epochs == 0 || batch == 0 {
        return Err(LormaError::Config(format!(
            "epochs ({epochs}) and batch ({batch}) must be positive"
        )));
    }
    sched.validate()?;
    if state.w0().shape() != task.w0.shape() {
        return Err(LormaError::shape(
            "train",
            format!("adapter W0 {:?} vs task W0 {:?}", state.w0().shape(), task.w0.shape()),
        ));
    }
    let shapes = [state.b().shape(), state.a().shape()];
    let mut optimizer = Optimizer::new(opt.clone(), &shapes)?;
    let mut rng = RngState::new(seed);
    let n = task.n();
    let mut log = TrainLog {
        step_losses: Vec::with_capacity(epochs * steps_per_epoch(n, batch)),
        epoch_rank_trace: Vec::with_capacity(epochs),
        epoch_delta_rank: Vec::with_capacity(epochs),
        wall_seconds: 0.0,
    };

    let mut step = 0;
    for _ in 0..epochs {
        let order = rng.permutation(n);
        for idx in order.chunks(batch) {
            let x = task.x.select_columns(idx);
            let y = task.y.select_columns(idx);
            let diverged = |loss: f64| LormaError::Divergence { step, loss };
            let h = forward(state, &x).map_err(|_| diverged(f64::NAN))?;
            let loss = mse_loss(&h, &y).map_err(|_| diverged(f64::NAN))?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            let upstream = h.sub(&y)?.scale(1.0 / idx.len() as f64)?;
            let grads = backward(state, &x, &upstream).map_err(|e| match e {
                LormaError::NonFinite { .. } => diverged(loss),
                e => e,
            })?;
            let lr = opt.lr * sched.multiplier(step);
            let (b, a) = state.factors_mut();
            optimizer
                .step(&mut [b, a], &[&grads.d_b, &grads.d_a], lr)
                .map_err(|e| match e {
                    LormaError::NonFinite { .. } => diverged(loss),
                    e => e,
                })?;
            log.step_losses.push(loss);
            step += 1;
        }
        let inflated = match state.multiplier()? {
            Some(m) => m,
            None => state.scaled_product()?,
        };
        log.epoch_rank_trace.push(numerical_rank(&inflated)?);
        log.epoch_delta_rank.push(numerical_rank(&delta_w(state)?)?);
    }
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Trapezoidal area under the step-loss curve, divided by the number of
/// intervals, so a constant loss `c` gives `c`.
pub fn loss_auc(losses: &[f64]) -> Result<f64> {
    if losses.len() < 2 {
        return Err(LormaError::UndefinedMetric {
            metric: "loss_auc",
            detail: format!("need at least 2 steps, got {}", losses.len()),
        });
    }
    let area: f64 = losses.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(area / (losses.len() - 1) as f64)
}

/// Percentage decrease of `auc` relative to `baseline`.
pub fn auc_reduction(auc: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() || !auc.is_finite() {
        return Err(LormaError::UndefinedMetric {
            metric: "auc_reduction",
            detail: format!("auc {auc}, baseline {baseline}"),
        });
    }
    Ok((1.0 - auc / baseline) * 100.0)
}
