//! Target-neighbor / impostor triplet mining.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, ScmlError};
use crate::exec::Exec;
use crate::linalg::sq_euclidean;
use crate::metric::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub n_targets: usize,
    pub n_impostors: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { n_targets: 3, n_impostors: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Anchors that had no same-class neighbor (singleton classes).
    pub anchors_without_targets: Vec<usize>,
}

/// The `k` smallest `(dist, index)` pairs in ascending order.
fn k_smallest(mut cands: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Vec::new();
    }
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_by(cmp);
    cands.into_iter().map(|(_, i)| i).collect()
}

/// Same-label and different-label Euclidean neighbors of `a`, nearest first.
pub fn neighbors(ds: &Dataset, a: usize, n_targets: usize, n_impostors: usize) -> (Vec<usize>, Vec<usize>) {
    let ya = ds.label(a);
    let xa = ds.row(a);
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..ds.n() {
        if i == a {
            continue;
        }
        let d = sq_euclidean(xa, ds.row(i));
        if ds.label(i) == ya {
            same.push((d, i));
        } else {
            diff.push((d, i));
        }
    }
    (k_smallest(same, n_targets), k_smallest(diff, n_impostors))
}

/// Every `(a, t, k)` with `t` among the nearest same-class points of `a` and
/// `k` among its nearest other-class points. Ties go to the smaller index;
/// output is ordered by anchor, then target rank, then impostor rank.
pub fn generate_triplets(ds: &Dataset, cfg: &TripletConfig) -> Result<TripletSet> {
    generate_triplets_with(ds, cfg, Exec::default())
}

pub fn generate_triplets_with(ds: &Dataset, cfg: &TripletConfig, exec: Exec) -> Result<TripletSet> {
    let present = ds.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(ScmlError::Degenerate(format!("triplets need >= 2 classes, found {present}")));
    }
    let per_anchor = exec.map(ds.n(), |a| {
        let (targets, impostors) = neighbors(ds, a, cfg.n_targets, cfg.n_impostors);
        let mut out = Vec::with_capacity(targets.len() * impostors.len());
        for &t in &targets {
            for &k in &impostors {
                out.push(Triplet { anchor: a, target: t, impostor: k });
            }
        }
        (targets.is_empty(), out)
    });
    let mut triplets = Vec::new();
    let mut lonely = Vec::new();
    for (a, (no_target, ts)) in per_anchor.into_iter().enumerate() {
        if no_target {
            lonely.push(a);
        }
        triplets.extend(ts);
    }
    if !lonely.is_empty() {
        log::info!("{} anchors have no same-class neighbor", lonely.len());
    }
    Ok(TripletSet { triplets, anchors_without_targets: lonely })
}
