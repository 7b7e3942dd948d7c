//! Regularized dual averaging over the nonnegative orthant.
//!
//! With prox-function `h(w) = |w|^2 / 2` and scale `gamma_rda * sqrt(t)`, each
//! step minimizes `<gbar, w> + beta * Omega(w) + gamma_rda / (2 sqrt t) |w|^2`
//! over `w >= 0`, where `gbar` is the running mean of all subgradients seen.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{subgrad_global, EarlyStop, TraceRow, TrainConfig};
use crate::error::{check_dim, Result, ScmlError};
use crate::metric::{TripletFeatures, WeightVector};

/// Which penalty the RDA step applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    /// `beta * |w|_1` on a single weight vector.
    L1,
    /// `beta * sum_j |W_{:,j}|_2` over a `T x K` matrix.
    L21,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdaState {
    pub t: u64,
    /// Running mean of subgradients, `T x K`.
    pub gbar: Array2<f64>,
    pub gamma: f64,
    pub beta: f64,
}

impl RdaState {
    pub fn new(tasks: usize, k: usize, gamma: f64, beta: f64) -> Self {
        RdaState { t: 0, gbar: Array2::zeros((tasks, k)), gamma, beta }
    }

    fn absorb(&mut self, g: &Array2<f64>) {
        let t = self.t as f64;
        self.gbar.zip_mut_with(g, |a, &b| *a = (t * *a + b) / (t + 1.0));
        self.t += 1;
    }

    fn scale(&self) -> f64 {
        (self.t as f64).sqrt() / self.gamma
    }
}

/// Folds `g` into the average and returns the nonnegative l1-regularized minimizer.
pub fn rda_step_l1_nonneg(state: &mut RdaState, g: &[f64]) -> Result<WeightVector> {
    check_dim(1, state.gbar.nrows())?;
    check_dim(state.gbar.ncols(), g.len())?;
    let g = Array2::from_shape_vec((1, g.len()), g.to_vec()).expect("shape");
    state.absorb(&g);
    let s = state.scale();
    let beta = state.beta;
    WeightVector::new(state.gbar.row(0).iter().map(|&gb| s * (-gb - beta).max(0.0)).collect())
}

/// Folds `g` into the average and returns the nonnegative group-l2 minimizer.
///
/// Clipping `-s * gbar_j` to the orthant and then group-shrinking is exact:
/// coordinates with a nonnegative averaged gradient are zero at the optimum.
pub fn rda_step_l21_nonneg(state: &mut RdaState, g: &Array2<f64>) -> Result<Array2<f64>> {
    check_dim(state.gbar.nrows(), g.nrows())?;
    check_dim(state.gbar.ncols(), g.ncols())?;
    state.absorb(g);
    let s = state.scale();
    let mut w = state.gbar.mapv(|gb| (-s * gb).max(0.0));
    let thresh = state.beta * s;
    for mut col in w.columns_mut() {
        let nrm = col.dot(&col).sqrt();
        if nrm <= thresh || nrm == 0.0 {
            col.fill(0.0);
        } else {
            let f = 1.0 - thresh / nrm;
            col.mapv_inplace(|v| v * f);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct RdaOutcome {
    /// `T x K` nonnegative weights (one row per task).
    pub weights: Array2<f64>,
    pub trace: Vec<TraceRow>,
    /// Largest `|gbar|` entry seen over all steps.
    pub max_abs_gbar: f64,
    pub steps: u64,
}

fn objective(tasks: &[&TripletFeatures], w: &Array2<f64>, reg: Regularizer, beta: f64) -> f64 {
    let loss: f64 = tasks.iter().enumerate().map(|(t, f)| f.mean_hinge(w.row(t).as_slice().expect("layout"))).sum();
    let pen = match reg {
        Regularizer::L1 => w.sum(),
        Regularizer::L21 => super::l21_norm(w),
    };
    loss + beta * pen
}

fn nonzero_columns(w: &Array2<f64>) -> usize {
    w.columns().into_iter().filter(|c| c.iter().any(|&v| v > 0.0)).count()
}

/// Runs RDA over one triplet set per task (one task for the global problem).
///
/// Every step draws a minibatch from each task (all tasks share the shuffle
/// stream seeded by `cfg.rng_seed`), stacks the per-task subgradients and
/// applies the matching closed-form step. An epoch covers the largest task
/// once. `validate`, if given, scores the iterate after each epoch and drives
/// early stopping. The last iterate is returned.
pub fn rda_solve(
    tasks: &[&TripletFeatures],
    reg: Regularizer,
    cfg: &TrainConfig,
    mut validate: Option<&mut dyn FnMut(&Array2<f64>) -> f64>,
) -> Result<RdaOutcome> {
    cfg.validate()?;
    let first = tasks.first().ok_or(ScmlError::Empty("task list"))?;
    let k = first.k();
    for f in tasks {
        check_dim(k, f.k())?;
        if f.is_empty() {
            return Err(ScmlError::Empty("triplet set"));
        }
    }
    if reg == Regularizer::L1 && tasks.len() != 1 {
        return Err(ScmlError::InvalidArgument("l1 regularizer takes exactly one task".into()));
    }
    let n_tasks = tasks.len();
    let mut state = RdaState::new(n_tasks, k, cfg.gamma_rda, cfg.beta);
    let mut w = Array2::<f64>::zeros((n_tasks, k));
    let mut rngs: Vec<ChaCha8Rng> = (0..n_tasks).map(|_| ChaCha8Rng::seed_from_u64(cfg.rng_seed)).collect();
    let mut orders: Vec<Vec<usize>> = tasks.iter().map(|f| (0..f.len()).collect()).collect();
    let largest = tasks.iter().map(|f| f.len()).max().expect("nonempty");
    let steps_per_epoch = largest.div_ceil(cfg.minibatch);
    let mut trace = Vec::new();
    let mut max_abs_gbar: f64 = 0.0;
    let mut stopper = EarlyStop::new(cfg.early_stop_patience);
    let mut g = Array2::<f64>::zeros((n_tasks, k));
    let mut batch = Vec::with_capacity(cfg.minibatch);

    for epoch in 1..=cfg.epochs {
        for (order, rng) in orders.iter_mut().zip(rngs.iter_mut()) {
            order.shuffle(rng);
        }
        for step in 0..steps_per_epoch {
            for (t, f) in tasks.iter().enumerate() {
                let len = f.len();
                let start = step * cfg.minibatch;
                let take = if len == largest { cfg.minibatch.min(len - start) } else { cfg.minibatch.min(len) };
                batch.clear();
                batch.extend((0..take).map(|i| orders[t][(start + i) % len]));
                let gt = subgrad_global(w.row(t).as_slice().expect("layout"), f, &batch)?;
                g.row_mut(t).assign(&ndarray::ArrayView1::from(&gt));
            }
            w = match reg {
                Regularizer::L1 => {
                    let wv = rda_step_l1_nonneg(&mut state, g.row(0).as_slice().expect("layout"))?;
                    Array2::from_shape_vec((1, k), wv.into_inner()).expect("shape")
                }
                Regularizer::L21 => rda_step_l21_nonneg(&mut state, &g)?,
            };
            max_abs_gbar = state.gbar.iter().fold(max_abs_gbar, |m, v| m.max(v.abs()));
        }
        let val = validate.as_mut().map(|v| v(&w));
        trace.push(TraceRow { epoch, objective: objective(tasks, &w, reg, cfg.beta), validation_error: val, nnz: nonzero_columns(&w) });
        if let Some(score) = val {
            if stopper.observe(score) {
                break;
            }
        }
    }
    Ok(RdaOutcome { weights: w, trace, max_abs_gbar, steps: state.t })
}
