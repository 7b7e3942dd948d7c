use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Result, ScmlError};
use crate::eval::projected_error_rate;
use crate::exec::Exec;
use crate::metric::{triplet_features, BasisSet, Triplet, TripletFeatures, WeightVector};
use crate::optim::{rda_solve, Regularizer, TraceRow, TrainConfig};

/// One task's training material.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub train: &'a Dataset,
    pub triplets: &'a [Triplet],
    pub val: Option<&'a Dataset>,
}

/// Per-task weights over a shared basis, coupled by column-wise group sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MultiTaskJson", into = "MultiTaskJson")]
pub struct MultiTaskModel {
    pub basis: BasisSet,
    /// `T x K`, nonnegative.
    pub w: Array2<f64>,
    pub beta: f64,
    pub config: TrainConfig,
    pub trace: Vec<TraceRow>,
}

#[derive(Serialize, Deserialize)]
struct MultiTaskParams {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    beta: f64,
    selected_columns: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MultiTaskJson {
    basis: BasisSet,
    params: MultiTaskParams,
    config: TrainConfig,
    #[serde(default)]
    trace: Vec<TraceRow>,
}

impl From<MultiTaskModel> for MultiTaskJson {
    fn from(m: MultiTaskModel) -> Self {
        let selected_columns = m.selected_columns();
        MultiTaskJson {
            params: MultiTaskParams { w: m.w.rows().into_iter().map(|r| r.to_vec()).collect(), beta: m.beta, selected_columns },
            basis: m.basis,
            config: m.config,
            trace: m.trace,
        }
    }
}

impl TryFrom<MultiTaskJson> for MultiTaskModel {
    type Error = ScmlError;
    fn try_from(j: MultiTaskJson) -> Result<Self> {
        let t = j.params.w.len();
        let k = j.basis.len();
        let mut flat = Vec::with_capacity(t * k);
        for row in &j.params.w {
            check_dim(k, row.len())?;
            flat.extend_from_slice(row);
        }
        let w = Array2::from_shape_vec((t, k), flat).expect("shape checked");
        MultiTaskModel::new(j.basis, w, j.params.beta, j.config, j.trace)
    }
}

impl MultiTaskModel {
    pub fn new(basis: BasisSet, w: Array2<f64>, beta: f64, config: TrainConfig, trace: Vec<TraceRow>) -> Result<Self> {
        check_dim(basis.len(), w.ncols())?;
        if w.nrows() == 0 {
            return Err(ScmlError::Empty("task weights"));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(ScmlError::InvalidArgument("multi-task weights must be nonnegative".into()));
        }
        Ok(MultiTaskModel { basis, w, beta, config, trace })
    }

    pub fn n_tasks(&self) -> usize {
        self.w.nrows()
    }

    /// Columns with nonzero l2 norm, i.e. basis elements used by the tasks.
    pub fn selected_columns(&self) -> Vec<usize> {
        (0..self.w.ncols()).filter(|&j| self.w.column(j).iter().any(|&v| v > 0.0)).collect()
    }

    pub fn task_weights(&self, t: usize) -> Result<WeightVector> {
        if t >= self.n_tasks() {
            return Err(ScmlError::IndexOutOfRange { index: t, len: self.n_tasks() });
        }
        WeightVector::new(self.w.row(t).to_vec())
    }
}

/// Learns one weight row per task over the union of the task bases.
///
/// The objective is the sum of per-task mean hinge losses plus
/// `beta * |W|_{2,1}`. Validation (when every task has a validation set)
/// uses the mean 3-NN error across tasks.
pub fn fit_mt_scml(tasks: &[TaskData<'_>], bases: &[BasisSet], cfg: &TrainConfig) -> Result<MultiTaskModel> {
    if tasks.is_empty() {
        return Err(ScmlError::Empty("task list"));
    }
    let basis = BasisSet::concat(bases)?;
    fit_mt_scml_union(tasks, &basis, cfg)
}

/// As [`fit_mt_scml`], with the union basis already assembled.
pub fn fit_mt_scml_union(tasks: &[TaskData<'_>], basis: &BasisSet, cfg: &TrainConfig) -> Result<MultiTaskModel> {
    if tasks.is_empty() {
        return Err(ScmlError::Empty("task list"));
    }
    let features: Vec<TripletFeatures> = tasks
        .iter()
        .map(|t| {
            if t.triplets.is_empty() {
                return Err(ScmlError::Empty("task triplet set"));
            }
            triplet_features(t.train, basis, t.triplets)
        })
        .collect::<Result<_>>()?;
    let with_val = tasks.iter().all(|t| t.val.is_some());
    let val_proj: Vec<Array2<f64>> = if with_val {
        tasks.iter().map(|t| basis.project_dataset(t.val.expect("checked"))).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut hook = |w: &Array2<f64>| -> f64 {
        let mut total = 0.0;
        for (t, task) in tasks.iter().enumerate() {
            let row = w.slice(ndarray::s![t..t + 1, ..]).to_owned();
            let v = task.val.expect("checked");
            total += projected_error_rate(features[t].projections(), task.train.labels(), &val_proj[t], v.labels(), &row, 3.min(task.train.n()), Exec::default())
                .unwrap_or(f64::INFINITY);
        }
        total / tasks.len() as f64
    };
    let validate: Option<&mut dyn FnMut(&Array2<f64>) -> f64> = if with_val { Some(&mut hook) } else { None };
    let refs: Vec<&TripletFeatures> = features.iter().collect();
    let out = rda_solve(&refs, Regularizer::L21, cfg, validate)?;
    MultiTaskModel::new(basis.clone(), out.weights, cfg.beta, cfg.clone(), out.trace)
}
