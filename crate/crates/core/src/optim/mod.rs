//! Stochastic composite solvers: subgradients of the triplet hinge losses,
//! the closed-form regularized steps, and the two training loops.

mod fobos;
mod prox;
mod rda;
mod subgrad;

use serde::{Deserialize, Serialize};

pub use fobos::{fobos_solve, local_objective, FobosOutcome};
pub use prox::{l21_norm, prox_fobos_l21};
pub use rda::{rda_solve, rda_step_l1_nonneg, rda_step_l21_nonneg, RdaOutcome, RdaState, Regularizer};
pub use subgrad::{anchor_weights, local_margin, subgrad_global, subgrad_local};

use crate::error::{Result, ScmlError};

/// Solver hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta: f64,
    /// RDA proximal scale; the iterate is `sqrt(t) / gamma_rda` times the shrunk average.
    pub gamma_rda: f64,
    /// Forward-backward base step; step `t` uses `eta0 / sqrt(t)`.
    pub eta0: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rng_seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { beta: 0.0, gamma_rda: 1.0, eta0: 0.05, epochs: 50, minibatch: 10, rng_seed: 0, early_stop_patience: 5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(ScmlError::InvalidArgument(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.gamma_rda > 0.0) || !(self.eta0 > 0.0) {
            return Err(ScmlError::InvalidArgument("gamma_rda and eta0 must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(ScmlError::InvalidArgument("epochs and minibatch must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of a training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub objective: f64,
    pub validation_error: Option<f64>,
    /// Nonzero weights (global) or nonzero columns (multi-task, local).
    pub nnz: usize,
}

/// Tracks patience-based early stopping on a validation score.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStop {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStop {
    pub(crate) fn new(patience: usize) -> Self {
        EarlyStop { patience, best: f64::INFINITY, stale: 0 }
    }

    /// Records a score; returns true when training should stop.
    pub(crate) fn observe(&mut self, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }
}
