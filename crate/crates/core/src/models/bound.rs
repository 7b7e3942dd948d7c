use crate::error::{Result, ScmlError};

/// Robustness-based deviation bound between empirical and expected triplet loss:
///
/// `16 * gamma * R * K* / beta + 3 * U * sqrt((N ln 2 + ln(1/delta)) / (0.5 n))`
///
/// `gamma_cover` is the radius of a cover of the sample space of size `n_cover`,
/// `radius` bounds instance norms and `loss_bound` bounds the loss.
#[allow(clippy::too_many_arguments)]
pub fn robustness_bound(
    gamma_cover: f64,
    radius: f64,
    k_star: usize,
    beta: f64,
    loss_bound: f64,
    n_cover: f64,
    n: usize,
    delta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(ScmlError::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    if n == 0 {
        return Err(ScmlError::InvalidArgument("n must be >= 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ScmlError::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(n_cover >= 1.0) {
        return Err(ScmlError::InvalidArgument(format!("cover size must be >= 1, got {n_cover}")));
    }
    if !(gamma_cover >= 0.0) || !(radius >= 0.0) || !(loss_bound >= 0.0) {
        return Err(ScmlError::InvalidArgument("gamma, R and U must be >= 0".into()));
    }
    let sparsity = 16.0 * gamma_cover * radius * k_star as f64 / beta;
    let concentration = 3.0 * loss_bound * ((n_cover * std::f64::consts::LN_2 + (1.0 / delta).ln()) / (0.5 * n as f64)).sqrt();
    Ok(sparsity + concentration)
}
