//! Metric tensor `T(x) = sum_i (a_i^T z_x + c_i)^2 b_i b_i^T` over a
//! kernel-PCA embedding `z_x`.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::GlobalModel;
use crate::dataset::Dataset;
use crate::embed::{kpca_fit, kpca_transform, kpca_transform_dataset, median_bandwidth, KpcaModel};
use crate::error::{check_dim, Result, ScmlError};
use crate::eval::projected_error_rate;
use crate::exec::Exec;
use crate::metric::{dist_weighted, triplet_features, BasisSet, Triplet, WeightVector};
use crate::optim::{anchor_weights, fobos_solve, TraceRow, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalJson", into = "LocalJson")]
pub struct LocalModel {
    pub basis: BasisSet,
    /// `(D'+1) x K`: rows `0..D'` are `A^T`, the last row is `c`.
    pub atilde: Array2<f64>,
    pub embedding: KpcaModel,
    pub beta: f64,
    pub config: TrainConfig,
    pub trace: Vec<TraceRow>,
}

#[derive(Serialize, Deserialize)]
struct LocalParams {
    atilde: Vec<Vec<f64>>,
    beta: f64,
    selected_columns: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LocalJson {
    basis: BasisSet,
    params: LocalParams,
    embedding: KpcaModel,
    config: TrainConfig,
    #[serde(default)]
    trace: Vec<TraceRow>,
}

impl From<LocalModel> for LocalJson {
    fn from(m: LocalModel) -> Self {
        let selected_columns = m.selected_columns();
        LocalJson {
            params: LocalParams { atilde: m.atilde.rows().into_iter().map(|r| r.to_vec()).collect(), beta: m.beta, selected_columns },
            basis: m.basis,
            embedding: m.embedding,
            config: m.config,
            trace: m.trace,
        }
    }
}

impl TryFrom<LocalJson> for LocalModel {
    type Error = ScmlError;
    fn try_from(j: LocalJson) -> Result<Self> {
        let r = j.params.atilde.len();
        let k = j.basis.len();
        let mut flat = Vec::with_capacity(r * k);
        for row in &j.params.atilde {
            check_dim(k, row.len())?;
            flat.extend_from_slice(row);
        }
        let atilde = Array2::from_shape_vec((r, k), flat).expect("shape checked");
        LocalModel::new(j.basis, atilde, j.embedding, j.params.beta, j.config, j.trace)
    }
}

impl LocalModel {
    pub fn new(basis: BasisSet, atilde: Array2<f64>, embedding: KpcaModel, beta: f64, config: TrainConfig, trace: Vec<TraceRow>) -> Result<Self> {
        check_dim(basis.len(), atilde.ncols())?;
        check_dim(embedding.out_dim() + 1, atilde.nrows())?;
        check_dim(basis.dim(), embedding.in_dim())?;
        Ok(LocalModel { basis, atilde, embedding, beta, config, trace })
    }

    /// `A = 0`, `c_i = sqrt(w*_i)`: reproduces the global metric everywhere.
    pub fn from_global(warm: &GlobalModel, embedding: KpcaModel) -> Result<Self> {
        let rows = embedding.out_dim() + 1;
        let mut atilde = Array2::zeros((rows, warm.basis.len()));
        for (c, &w) in atilde.row_mut(rows - 1).iter_mut().zip(warm.w.as_slice()) {
            *c = w.sqrt();
        }
        LocalModel::new(warm.basis.clone(), atilde, embedding, 0.0, warm.config.clone(), Vec::new())
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.out_dim()
    }

    /// Columns of `A~` with nonzero norm.
    pub fn selected_columns(&self) -> Vec<usize> {
        (0..self.atilde.ncols()).filter(|&j| self.atilde.column(j).iter().any(|&v| v != 0.0)).collect()
    }

    /// `[z_x; 1]` for one point.
    pub fn embed_tilde(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = kpca_transform(&self.embedding, x)?;
        z.push(1.0);
        Ok(z)
    }

    /// Weight vector of the metric at `x`; defined for any point.
    pub fn weights_at(&self, x: &[f64]) -> Result<WeightVector> {
        let z = self.embed_tilde(x)?;
        let w = self
            .atilde
            .columns()
            .into_iter()
            .map(|a| {
                let s: f64 = a.iter().zip(&z).map(|(u, v)| u * v).sum();
                s * s
            })
            .collect();
        WeightVector::new(w)
    }
}

/// `[z_x; 1]` rows for every point of `ds`.
pub fn embed_tilde_dataset(embedding: &KpcaModel, ds: &Dataset) -> Result<Array2<f64>> {
    let z = kpca_transform_dataset(embedding, ds, Exec::default())?;
    let mut out = Array2::ones((ds.n(), z.ncols() + 1));
    out.slice_mut(s![.., ..z.ncols()]).assign(&z);
    Ok(out)
}

pub fn local_weights(model: &LocalModel, x: &[f64]) -> Result<WeightVector> {
    model.weights_at(x)
}

/// `(x - x')^T T(x) (x - x')`; the metric comes from the first argument.
pub fn dist_local(model: &LocalModel, x: &[f64], y: &[f64]) -> Result<f64> {
    let w = model.weights_at(x)?;
    dist_weighted(w.as_slice(), &model.basis, x, y)
}

/// Learns the metric tensor by forward-backward splitting, warm-started from
/// a global solution on the same basis.
///
/// The embedding is kernel PCA on the training rows with the RBF bandwidth set
/// to their median pairwise distance; `d_prime` is capped at the number of
/// training rows.
pub fn fit_scml_local(
    train: &Dataset,
    basis: &BasisSet,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    d_prime: usize,
    warm: &GlobalModel,
    val: Option<&Dataset>,
) -> Result<LocalModel> {
    if warm.basis != *basis {
        return Err(ScmlError::InvalidArgument("warm-start model uses a different basis".into()));
    }
    let sigma = median_bandwidth(train.features())?;
    let embedding = kpca_fit(train.features(), d_prime.min(train.n()), sigma)?;
    fit_scml_local_with_embedding(train, triplets, cfg, warm, embedding, val)
}

/// As [`fit_scml_local`] with a prefitted embedding.
pub fn fit_scml_local_with_embedding(
    train: &Dataset,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    warm: &GlobalModel,
    embedding: KpcaModel,
    val: Option<&Dataset>,
) -> Result<LocalModel> {
    if triplets.is_empty() {
        return Err(ScmlError::Empty("triplet set"));
    }
    let init = LocalModel::from_global(warm, embedding)?;
    let basis = &init.basis;
    let features = triplet_features(train, basis, triplets)?;
    let ztilde = embed_tilde_dataset(&init.embedding, train)?;
    let val_data = match val {
        Some(v) => Some((v, basis.project_dataset(v)?, embed_tilde_dataset(&init.embedding, v)?)),
        None => None,
    };
    let mut hook = |a: &Array2<f64>| -> f64 {
        let (v, vp, vz) = val_data.as_ref().expect("hook only with val");
        let w = anchor_weights(a, vz);
        projected_error_rate(features.projections(), train.labels(), vp, v.labels(), &w, 3.min(train.n()), Exec::default())
            .unwrap_or(f64::INFINITY)
    };
    let validate: Option<&mut dyn FnMut(&Array2<f64>) -> f64> = if val.is_some() { Some(&mut hook) } else { None };
    let out = fobos_solve(&init.atilde, &features, &ztilde, cfg, validate)?;
    if out.reverted {
        log::info!("local training did not improve on its initialization; keeping it");
    }
    LocalModel::new(init.basis, out.atilde, init.embedding, cfg.beta, cfg.clone(), out.trace)
}
