//! Forward-backward splitting for the local (metric-tensor) objective.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{anchor_weights, l21_norm, prox_fobos_l21, subgrad_local, EarlyStop, TraceRow, TrainConfig};
use crate::error::{check_dim, Result, ScmlError};
use crate::metric::TripletFeatures;

/// Mean local hinge loss plus `beta * |A~|_{2,1}`.
pub fn local_objective(atilde: &Array2<f64>, f: &TripletFeatures, ztilde: &Array2<f64>, beta: f64) -> f64 {
    if f.is_empty() {
        return beta * l21_norm(atilde);
    }
    let weights = anchor_weights(atilde, ztilde);
    let loss: f64 = (0..f.len())
        .map(|t| f.hinge(t, weights.row(f.anchor(t)).as_slice().expect("layout")))
        .sum::<f64>()
        / f.len() as f64;
    loss + beta * l21_norm(atilde)
}

#[derive(Debug, Clone)]
pub struct FobosOutcome {
    pub atilde: Array2<f64>,
    pub trace: Vec<TraceRow>,
    /// Epoch of the returned iterate (0 = initialization).
    pub best_epoch: usize,
    /// True when the selected iterate was worse than the initialization in
    /// training objective and the initialization was returned instead.
    pub reverted: bool,
}

fn nonzero_columns(a: &Array2<f64>) -> usize {
    a.columns().into_iter().filter(|c| c.iter().any(|&v| v != 0.0)).count()
}

/// Minimizes the local objective from `init` with steps `eta0 / sqrt(t)`.
///
/// The iterate with the lowest validation score (training objective when no
/// validator is given) is kept, the initialization counting as epoch 0. The
/// result never has a higher training objective than `init`.
pub fn fobos_solve(
    init: &Array2<f64>,
    f: &TripletFeatures,
    ztilde: &Array2<f64>,
    cfg: &TrainConfig,
    mut validate: Option<&mut dyn FnMut(&Array2<f64>) -> f64>,
) -> Result<FobosOutcome> {
    cfg.validate()?;
    check_dim(f.k(), init.ncols())?;
    check_dim(init.nrows(), ztilde.ncols())?;
    if f.is_empty() {
        return Err(ScmlError::Empty("triplet set"));
    }
    let init_obj = local_objective(init, f, ztilde, cfg.beta);
    let score = |a: &Array2<f64>, obj: f64, v: &mut Option<&mut dyn FnMut(&Array2<f64>) -> f64>| -> (Option<f64>, f64) {
        match v.as_mut() {
            Some(h) => {
                let e = h(a);
                (Some(e), e)
            }
            None => (None, obj),
        }
    };
    let (val0, s0) = score(init, init_obj, &mut validate);
    let mut trace = vec![TraceRow { epoch: 0, objective: init_obj, validation_error: val0, nnz: nonzero_columns(init) }];
    let mut best = (init.clone(), s0, init_obj, 0usize);
    let mut stopper = EarlyStop::new(cfg.early_stop_patience);
    stopper.observe(s0);

    let mut a = init.clone();
    let mut order: Vec<usize> = (0..f.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut t: u64 = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.minibatch) {
            t += 1;
            let eta = cfg.eta0 / (t as f64).sqrt();
            let g = subgrad_local(&a, f, batch, ztilde)?;
            a.scaled_add(-eta, &g);
            a = prox_fobos_l21(&a, eta, cfg.beta);
        }
        let obj = local_objective(&a, f, ztilde, cfg.beta);
        let (val, s) = score(&a, obj, &mut validate);
        trace.push(TraceRow { epoch, objective: obj, validation_error: val, nnz: nonzero_columns(&a) });
        if s < best.1 {
            best = (a.clone(), s, obj, epoch);
        }
        if val.is_some() && stopper.observe(s) {
            break;
        }
    }
    let (atilde, _, best_obj, best_epoch) = best;
    if best_obj > init_obj {
        return Ok(FobosOutcome { atilde: init.clone(), trace, best_epoch: 0, reverted: true });
    }
    Ok(FobosOutcome { atilde, trace, best_epoch, reverted: false })
}
