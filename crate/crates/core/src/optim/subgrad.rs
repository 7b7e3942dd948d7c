use ndarray::Array2;

use crate::error::{check_dim, Result, ScmlError};
use crate::metric::TripletFeatures;

/// Averaged hinge-loss subgradient in `w` over the triplets `batch`.
///
/// Active triplets (margin `1 + <w, p - q>` strictly positive) contribute
/// `p - q`; a triplet sitting exactly on the kink contributes nothing.
pub fn subgrad_global(w: &[f64], f: &TripletFeatures, batch: &[usize]) -> Result<Vec<f64>> {
    check_dim(f.k(), w.len())?;
    if batch.is_empty() {
        return Err(ScmlError::Empty("subgradient batch"));
    }
    let k = f.k();
    let mut g = vec![0.0; k];
    let mut diff = vec![0.0; k];
    for &t in batch {
        if f.margin(t, w) > 0.0 {
            f.diff_into(t, &mut diff);
            g.iter_mut().zip(&diff).for_each(|(gi, di)| *gi += di);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|gi| *gi *= inv);
    Ok(g)
}

fn nonzero_columns(a: &Array2<f64>) -> Vec<usize> {
    (0..a.ncols()).filter(|&m| a.column(m).iter().any(|&v| v != 0.0)).collect()
}

/// `s_m = a~_m^T z~` for the listed columns.
fn column_scores(a: &Array2<f64>, cols: &[usize], z: &[f64]) -> Vec<f64> {
    cols.iter().map(|&m| a.column(m).iter().zip(z).map(|(x, y)| x * y).sum()).collect()
}

/// Margin of triplet `t` under the local metric of its anchor.
pub fn local_margin(atilde: &Array2<f64>, f: &TripletFeatures, t: usize, ztilde: &Array2<f64>) -> f64 {
    let cols = nonzero_columns(atilde);
    margin_with(atilde, &cols, f, t, ztilde).0
}

fn margin_with(a: &Array2<f64>, cols: &[usize], f: &TripletFeatures, t: usize, ztilde: &Array2<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let z = ztilde.row(f.anchor(t));
    let s = column_scores(a, cols, z.as_slice().expect("layout"));
    let tr = f.triplets()[t];
    let pr = f.projections();
    let mut diff = Vec::with_capacity(cols.len());
    let mut margin = 1.0;
    for (&m, &sm) in cols.iter().zip(&s) {
        let dj = pr[[tr.anchor, m]] - pr[[tr.target, m]];
        let dk = pr[[tr.anchor, m]] - pr[[tr.impostor, m]];
        let d = dj * dj - dk * dk;
        margin += sm * sm * d;
        diff.push(d);
    }
    (margin, s, diff)
}

/// Averaged subgradient of the local hinge loss in `A~` (shape `(D'+1) x K`).
///
/// `ztilde` holds `[z_x; 1]` for every point, indexed like the dataset the
/// triplets refer to. For an active triplet with anchor embedding `z~`,
/// column `m` receives `2 (a~_m^T z~)(p_m - q_m) z~`.
pub fn subgrad_local(atilde: &Array2<f64>, f: &TripletFeatures, batch: &[usize], ztilde: &Array2<f64>) -> Result<Array2<f64>> {
    check_dim(f.k(), atilde.ncols())?;
    check_dim(atilde.nrows(), ztilde.ncols())?;
    if batch.is_empty() {
        return Err(ScmlError::Empty("subgradient batch"));
    }
    let cols = nonzero_columns(atilde);
    let mut g = Array2::zeros(atilde.dim());
    for &t in batch {
        let (margin, s, diff) = margin_with(atilde, &cols, f, t, ztilde);
        if margin > 0.0 {
            let z = ztilde.row(f.anchor(t));
            for ((&m, &sm), &d) in cols.iter().zip(&s).zip(&diff) {
                let coef = 2.0 * sm * d;
                if coef != 0.0 {
                    g.column_mut(m).scaled_add(coef, &z);
                }
            }
        }
    }
    g /= batch.len() as f64;
    Ok(g)
}

/// Per-point local weights `w_{x,m} = (a~_m^T z~_x)^2`, as an `n x K` table.
pub fn anchor_weights(atilde: &Array2<f64>, ztilde: &Array2<f64>) -> Array2<f64> {
    let mut s = ztilde.dot(atilde);
    s.mapv_inplace(|v| v * v);
    s
}
