//! PCA preprocessing and the kernel-PCA embedding that drives local weights.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Result, ScmlError};
use crate::exec::Exec;
use crate::linalg::{sq_euclidean, sym_eigen_desc};

/// Relative eigenvalue floor below which a component is considered absent.
const EIG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D' x D`, orthonormal rows ordered by decreasing variance.
    pub components: Array2<f64>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn out_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        pca_transform(self, x)
    }

    pub fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        check_dim(self.mean.len(), ds.dim())?;
        let mut centered = ds.features().clone();
        for mut row in centered.rows_mut() {
            row.iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        ds.with_features(centered.dot(&self.components.t()))
    }
}

/// Top-`d_out` principal directions of the mean-centered rows of `x`.
pub fn pca_fit(x: &Array2<f64>, d_out: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if d_out == 0 || d_out > n.min(d) {
        return Err(ScmlError::InvalidArgument(format!("PCA dimension {d_out} outside [1, {}]", n.min(d))));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let xc = x - &mean;
    let nf = n as f64;
    let mut components = Array2::zeros((d_out, d));
    let mut variances = Vec::with_capacity(d_out);
    if d <= n {
        let cov = xc.t().dot(&xc) / nf;
        let (vals, vecs) = sym_eigen_desc(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]))?;
        for j in 0..d_out {
            for i in 0..d {
                components[[j, i]] = vecs[(i, j)];
            }
            variances.push(vals[j].max(0.0));
        }
    } else {
        // dual route through the n x n Gram matrix when D exceeds n
        let gram = xc.dot(&xc.t());
        let (vals, vecs) = sym_eigen_desc(DMatrix::from_fn(n, n, |i, j| gram[[i, j]]))?;
        for j in 0..d_out {
            if !(vals[j] > EIG_FLOOR * vals[0].max(f64::MIN_POSITIVE)) {
                return Err(ScmlError::Degenerate(format!("data span fewer than {d_out} directions")));
            }
            let s = vals[j].sqrt();
            for i in 0..d {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += xc[[r, i]] * vecs[(r, j)];
                }
                components[[j, i]] = acc / s;
            }
            variances.push(vals[j] / nf);
        }
    }
    Ok(PcaModel { mean: mean.to_vec(), components, variances })
}

pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.mean.len(), x.len())?;
    let centered: Vec<f64> = x.iter().zip(&model.mean).map(|(a, m)| a - m).collect();
    Ok(model
        .components
        .rows()
        .into_iter()
        .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
        .collect())
}

/// Median of all pairwise Euclidean distances between rows of `x`.
pub fn median_bandwidth(x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(ScmlError::InvalidArgument("median bandwidth needs at least two rows".into()));
    }
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_euclidean(&rows[i], &rows[j]).sqrt());
        }
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if !(median > 0.0) {
        return Err(ScmlError::Degenerate("median pairwise distance is zero".into()));
    }
    Ok(median)
}

fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-sq_euclidean(a, b) / (2.0 * sigma * sigma)).exp()
}

/// RBF Gram matrix `exp(-|x_i - x_j|^2 / (2 sigma^2))`.
pub fn rbf_gram_with(x: &Array2<f64>, sigma: f64, exec: Exec) -> Array2<f64> {
    let n = x.nrows();
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = x.rows().into_iter().map(|r| r.to_slice().expect("layout")).collect();
    let data = exec.map(n, |i| rows.iter().map(|r| rbf(rows[i], r, sigma)).collect::<Vec<f64>>());
    Array2::from_shape_vec((n, n), data.into_iter().flatten().collect()).expect("square")
}

/// Fitted kernel-PCA embedding `x -> z_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub train_points: Array2<f64>,
    pub sigma: f64,
    /// `n x D'` coefficients; embedding is `alphas^T` times the centered kernel row.
    pub centered_alphas: Array2<f64>,
    pub gram_row_means: Vec<f64>,
    pub gram_mean: f64,
    pub eigenvalues: Vec<f64>,
    /// Set when fewer positive eigenvalues than requested were available.
    pub requested_dim: Option<usize>,
}

impl KpcaModel {
    pub fn out_dim(&self) -> usize {
        self.centered_alphas.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.train_points.ncols()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        kpca_transform(self, x)
    }
}

/// Fits kernel PCA with an RBF kernel of bandwidth `sigma`.
///
/// Components are whitened: embedded training points have zero mean and unit
/// variance along every retained component. If the centered Gram matrix has
/// fewer than `d_out` positive eigenvalues the embedding is truncated and
/// `requested_dim` records the original request.
pub fn kpca_fit(x: &Array2<f64>, d_out: usize, sigma: f64) -> Result<KpcaModel> {
    kpca_fit_with(x, d_out, sigma, Exec::default())
}

pub fn kpca_fit_with(x: &Array2<f64>, d_out: usize, sigma: f64, exec: Exec) -> Result<KpcaModel> {
    let n = x.nrows();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ScmlError::InvalidArgument(format!("bandwidth must be positive, got {sigma}")));
    }
    if d_out == 0 || d_out > n {
        return Err(ScmlError::InvalidArgument(format!("kernel PCA dimension {d_out} outside [1, {n}]")));
    }
    let gram = rbf_gram_with(x, sigma, exec);
    let row_means: Vec<f64> = gram.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let centered = DMatrix::from_fn(n, n, |i, j| gram[[i, j]] - row_means[i] - row_means[j] + grand);
    let (vals, vecs) = sym_eigen_desc(centered)?;
    let top = vals[0];
    let available = if top > 0.0 { vals.iter().take_while(|&&l| l > EIG_FLOOR * top).count() } else { 0 };
    if available == 0 {
        return Err(ScmlError::Degenerate("centered kernel matrix has no positive eigenvalue".into()));
    }
    let keep = d_out.min(available);
    let requested_dim = if keep < d_out {
        log::warn!("kernel PCA truncated from {d_out} to {keep} components");
        Some(d_out)
    } else {
        None
    };
    let scale = (n as f64).sqrt();
    let alphas = Array2::from_shape_fn((n, keep), |(i, j)| scale * vecs[(i, j)] / vals[j]);
    Ok(KpcaModel {
        train_points: x.as_standard_layout().to_owned(),
        sigma,
        centered_alphas: alphas,
        gram_row_means: row_means,
        gram_mean: grand,
        eigenvalues: vals[..keep].to_vec(),
        requested_dim,
    })
}

pub fn kpca_transform(model: &KpcaModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.in_dim(), x.len())?;
    let n = model.train_points.nrows();
    let k: Vec<f64> = model
        .train_points
        .rows()
        .into_iter()
        .map(|r| rbf(x, r.as_slice().expect("layout"), model.sigma))
        .collect();
    let mean_k = k.iter().sum::<f64>() / n as f64;
    let mut z = vec![0.0; model.out_dim()];
    for (l, &kl) in k.iter().enumerate() {
        let c = kl - mean_k - model.gram_row_means[l] + model.gram_mean;
        for (zj, a) in z.iter_mut().zip(model.centered_alphas.row(l)) {
            *zj += c * a;
        }
    }
    Ok(z)
}

/// Embeds every row of `ds`.
pub fn kpca_transform_dataset(model: &KpcaModel, ds: &Dataset, exec: Exec) -> Result<Array2<f64>> {
    check_dim(model.in_dim(), ds.dim())?;
    let rows = exec.map(ds.n(), |i| kpca_transform(model, ds.row(i)));
    let mut out = Array2::zeros((ds.n(), model.out_dim()));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(r?));
    }
    Ok(out)
}
