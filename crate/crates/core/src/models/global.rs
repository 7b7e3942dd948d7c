use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Result, ScmlError};
use crate::eval::projected_error_rate;
use crate::exec::Exec;
use crate::metric::{dist_global, triplet_features, BasisSet, Triplet, WeightVector};
use crate::optim::{rda_solve, Regularizer, TraceRow, TrainConfig};

/// Single sparse combination of basis elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GlobalJson", into = "GlobalJson")]
pub struct GlobalModel {
    pub basis: BasisSet,
    pub w: WeightVector,
    pub beta: f64,
    pub config: TrainConfig,
    pub trace: Vec<TraceRow>,
}

#[derive(Serialize, Deserialize)]
struct GlobalParams {
    w: WeightVector,
    beta: f64,
    nnz: usize,
}

#[derive(Serialize, Deserialize)]
struct GlobalJson {
    basis: BasisSet,
    params: GlobalParams,
    config: TrainConfig,
    #[serde(default)]
    trace: Vec<TraceRow>,
}

impl From<GlobalModel> for GlobalJson {
    fn from(m: GlobalModel) -> Self {
        let nnz = m.nnz();
        GlobalJson { basis: m.basis, params: GlobalParams { w: m.w, beta: m.beta, nnz }, config: m.config, trace: m.trace }
    }
}

impl TryFrom<GlobalJson> for GlobalModel {
    type Error = ScmlError;
    fn try_from(j: GlobalJson) -> Result<Self> {
        GlobalModel::new(j.basis, j.params.w, j.params.beta, j.config, j.trace)
    }
}

impl GlobalModel {
    pub fn new(basis: BasisSet, w: WeightVector, beta: f64, config: TrainConfig, trace: Vec<TraceRow>) -> Result<Self> {
        check_dim(basis.len(), w.len())?;
        Ok(GlobalModel { basis, w, beta, config, trace })
    }

    /// Number of basis elements with positive weight.
    pub fn nnz(&self) -> usize {
        self.w.nnz()
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        dist_global(&self.w, &self.basis, x, y)
    }
}

/// Learns `w >= 0` minimizing mean triplet hinge loss plus `beta * |w|_1`.
///
/// When `val` is given, the 3-NN validation error of each epoch drives early
/// stopping and is recorded in the trace.
pub fn fit_scml_global(
    train: &Dataset,
    basis: &BasisSet,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    val: Option<&Dataset>,
) -> Result<GlobalModel> {
    if triplets.is_empty() {
        return Err(ScmlError::Empty("triplet set"));
    }
    let features = triplet_features(train, basis, triplets)?;
    let val_proj = val.map(|v| basis.project_dataset(v)).transpose()?;
    let mut hook = |w: &Array2<f64>| -> f64 {
        let (v, vp) = (val.expect("hook only with val"), val_proj.as_ref().expect("projected"));
        projected_error_rate(features.projections(), train.labels(), vp, v.labels(), w, 3.min(train.n()), Exec::default())
            .unwrap_or(f64::INFINITY)
    };
    let validate: Option<&mut dyn FnMut(&Array2<f64>) -> f64> = if val.is_some() { Some(&mut hook) } else { None };
    let out = rda_solve(&[&features], Regularizer::L1, cfg, validate)?;
    let w = WeightVector::new(out.weights.row(0).to_vec())?;
    GlobalModel::new(basis.clone(), w, cfg.beta, cfg.clone(), out.trace)
}
