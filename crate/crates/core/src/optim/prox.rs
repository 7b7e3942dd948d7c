use ndarray::Array2;

/// Sum of column l2 norms.
pub fn l21_norm(a: &Array2<f64>) -> f64 {
    a.columns().into_iter().map(|c| c.dot(&c).sqrt()).sum()
}

/// Proximal map of `eta * beta * ||.||_{2,1}`: column-wise group soft-threshold.
///
/// Each column `a` becomes `(1 - eta*beta / |a|)_+ a`. No sign constraint.
pub fn prox_fobos_l21(a: &Array2<f64>, eta: f64, beta: f64) -> Array2<f64> {
    let thresh = eta * beta;
    let mut out = a.clone();
    if thresh <= 0.0 {
        return out;
    }
    for mut col in out.columns_mut() {
        let nrm = col.dot(&col).sqrt();
        if nrm <= thresh {
            col.fill(0.0);
        } else {
            let s = 1.0 - thresh / nrm;
            col.mapv_inplace(|v| v * s);
        }
    }
    out
}
