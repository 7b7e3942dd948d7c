//! k-NN classification under learned metrics, data splits and model selection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Result, ScmlError};
use crate::exec::Exec;
use crate::linalg::sq_euclidean;
use crate::models::{GlobalModel, LocalModel, MultiTaskModel};

/// How to carve a dataset into train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    Ratios([f64; 3]),
    Counts([usize; 3]),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios([0.6, 0.2, 0.2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` over `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Stratified split, deterministic in `seed`.
///
/// Split sizes are fixed first (largest remainder over the whole set); each
/// class then receives its floor share per split plus at most one extra
/// element, so per-class counts stay within one of the proportional ideal
/// whenever the totals allow it.
pub fn split(ds: &Dataset, spec: SplitSpec, seed: u64) -> Result<SplitIndices> {
    let n = ds.n();
    // a fourth bucket absorbs rows unused by fixed counts
    let targets: Vec<usize> = match spec {
        SplitSpec::Ratios(r) => {
            if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(ScmlError::InvalidArgument(format!("split ratios {r:?} must be >= 0 and sum to 1")));
            }
            let mut t = apportion(n, &r);
            t.push(0);
            t
        }
        SplitSpec::Counts(c) => {
            let used: usize = c.iter().sum();
            if used > n {
                return Err(ScmlError::InvalidArgument(format!("split counts {c:?} exceed {n} rows")));
            }
            vec![c[0], c[1], c[2], n - used]
        }
    };
    let frac: Vec<f64> = targets.iter().map(|&t| t as f64 / n as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = ds.class_members();
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
    }
    let nb = targets.len();
    // per-class floor allocation, then distribute leftovers by largest remainder
    let mut alloc: Vec<Vec<usize>> = Vec::with_capacity(members.len());
    let mut remaining = targets.clone();
    let mut extras: Vec<(f64, usize, usize)> = Vec::new();
    let mut leftover = Vec::with_capacity(members.len());
    for (c, m) in members.iter().enumerate() {
        let ideal: Vec<f64> = frac.iter().map(|f| f * m.len() as f64).collect();
        let fl: Vec<usize> = ideal.iter().map(|v| (v + 1e-9).floor() as usize).collect();
        for b in 0..nb {
            remaining[b] -= fl[b].min(remaining[b]);
            extras.push((ideal[b] - fl[b] as f64, c, b));
        }
        leftover.push(m.len() - fl.iter().sum::<usize>());
        alloc.push(fl);
    }
    extras.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut open = vec![vec![false; nb]; members.len()];
    for &(f, c, b) in &extras {
        open[c][b] = f > 1e-9;
    }
    let mut extra = vec![vec![false; nb]; members.len()];
    for &(f, c, b) in &extras {
        if f > 1e-9 && leftover[c] > 0 && remaining[b] > 0 {
            extra[c][b] = true;
            leftover[c] -= 1;
            remaining[b] -= 1;
        }
    }
    // greedy can strand a unit; reroute along augmenting paths so every cell
    // stays within one of its ideal share
    for c in 0..members.len() {
        while leftover[c] > 0 {
            augment(c, &open, &mut extra, &mut remaining)
                .ok_or_else(|| ScmlError::Numerical("stratified rounding has no feasible assignment".into()))?;
            leftover[c] -= 1;
        }
    }
    for c in 0..members.len() {
        for b in 0..nb {
            alloc[c][b] += usize::from(extra[c][b]);
        }
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (c, m) in members.iter().enumerate() {
        let mut pos = 0;
        for b in 0..nb {
            buckets[b].extend_from_slice(&m[pos..pos + alloc[c][b]]);
            pos += alloc[c][b];
        }
    }
    for b in buckets.iter_mut() {
        b.sort_unstable();
    }
    let mut it = buckets.into_iter();
    Ok(SplitIndices { train: it.next().unwrap(), val: it.next().unwrap(), test: it.next().unwrap() })
}

/// Finds a path class `c` -> bucket with room, alternating between unused
/// and used `extra` cells, and flips it. Returns `None` if none exists.
fn augment(c: usize, open: &[Vec<bool>], extra: &mut [Vec<bool>], remaining: &mut [usize]) -> Option<()> {
    let (nc, nb) = (open.len(), remaining.len());
    // BFS over buckets; prev[b] = (class that enters b, bucket it left or None)
    let mut prev: Vec<Option<(usize, Option<usize>)>> = vec![None; nb];
    let mut queue = std::collections::VecDeque::new();
    for b in 0..nb {
        if open[c][b] && !extra[c][b] {
            prev[b] = Some((c, None));
            queue.push_back(b);
        }
    }
    while let Some(b) = queue.pop_front() {
        if remaining[b] > 0 {
            let mut cur = b;
            loop {
                let (cls, from) = prev[cur].expect("on path");
                extra[cls][cur] = true;
                match from {
                    Some(f) => {
                        extra[cls][f] = false;
                        cur = f;
                    }
                    None => break,
                }
            }
            remaining[b] -= 1;
            return Some(());
        }
        // some class holding an extra in b moves it elsewhere
        for c2 in 0..nc {
            if !extra[c2][b] {
                continue;
            }
            for b2 in 0..nb {
                if prev[b2].is_none() && open[c2][b2] && !extra[c2][b2] {
                    prev[b2] = Some((c2, Some(b)));
                    queue.push_back(b2);
                }
            }
        }
    }
    None
}

/// Distance used to rank training points for a query.
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Euclidean,
    Global(&'a GlobalModel),
    /// A multi-task model restricted to one task's weights.
    MultiTask(&'a MultiTaskModel, usize),
    /// Local metric tensor; the query point bears the metric.
    Local(&'a LocalModel),
}

/// Training side of a k-NN problem with its projections cached.
pub struct KnnIndex<'a> {
    metric: Metric<'a>,
    train: &'a Dataset,
    projections: Option<Array2<f64>>,
    global_weights: Option<Vec<f64>>,
}

impl<'a> KnnIndex<'a> {
    pub fn new(metric: Metric<'a>, train: &'a Dataset) -> Result<Self> {
        if train.n() == 0 {
            return Err(ScmlError::Empty("training set"));
        }
        let (projections, global_weights) = match metric {
            Metric::Euclidean => (None, None),
            Metric::Global(m) => (Some(m.basis.project_dataset(train)?), Some(m.w.as_slice().to_vec())),
            Metric::MultiTask(m, t) => {
                if t >= m.n_tasks() {
                    return Err(ScmlError::IndexOutOfRange { index: t, len: m.n_tasks() });
                }
                (Some(m.basis.project_dataset(train)?), Some(m.w.row(t).to_vec()))
            }
            Metric::Local(m) => (Some(m.basis.project_dataset(train)?), None),
        };
        Ok(KnnIndex { metric, train, projections, global_weights })
    }

    /// Distances from `x` to every training point.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.train.dim(), x.len())?;
        let n = self.train.n();
        match (&self.metric, &self.projections) {
            (Metric::Euclidean, _) => Ok((0..n).map(|i| sq_euclidean(x, self.train.row(i))).collect()),
            (Metric::Local(m), Some(p)) => {
                let w = m.weights_at(x)?;
                let q = m.basis.project(x);
                Ok(weighted_projected(p, &q, w.as_slice()))
            }
            (_, Some(p)) => {
                let basis = match self.metric {
                    Metric::Global(m) => &m.basis,
                    Metric::MultiTask(m, _) => &m.basis,
                    _ => unreachable!(),
                };
                let q = basis.project(x);
                Ok(weighted_projected(p, &q, self.global_weights.as_deref().expect("set with projections")))
            }
            _ => unreachable!("projections exist for every learned metric"),
        }
    }

    pub fn predict(&self, x: &[f64], k: usize, exclude: Option<usize>) -> Result<usize> {
        let d = self.distances(x)?;
        vote(&d, self.train.labels(), k, exclude)
    }
}

/// `sum_m w_m (q_m - P_{j,m})^2` for every row `j` of `p`, over nonzero `w_m`.
pub fn weighted_projected(p: &Array2<f64>, q: &[f64], w: &[f64]) -> Vec<f64> {
    let active: Vec<(usize, f64, f64)> = w.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(m, &v)| (m, v, q[m])).collect();
    p.rows()
        .into_iter()
        .map(|row| {
            let r = row.as_slice().expect("layout");
            active.iter().map(|&(m, wm, qm)| {
                let d = qm - r[m];
                wm * d * d
            }).sum()
        })
        .collect()
}

/// Majority vote among the `k` nearest (ties in distance by index, ties in
/// votes by summed distance, then by class id).
pub fn vote(dist: &[f64], labels: &[usize], k: usize, exclude: Option<usize>) -> Result<usize> {
    let mut cand: Vec<(f64, usize)> = dist.iter().copied().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(i, d)| (d, i)).collect();
    if cand.is_empty() {
        return Err(ScmlError::Empty("training set"));
    }
    if k == 0 || k > cand.len() {
        return Err(ScmlError::InvalidArgument(format!("k = {k} with {} candidates", cand.len())));
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    let mut tally: Vec<(usize, usize, f64)> = Vec::new();
    for &(d, i) in &cand {
        let y = labels[i];
        match tally.iter_mut().find(|t| t.0 == y) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((y, 1, d)),
        }
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
    Ok(tally[0].0)
}

pub fn knn_predict(metric: Metric<'_>, train: &Dataset, x: &[f64], k: usize) -> Result<usize> {
    KnnIndex::new(metric, train)?.predict(x, k, None)
}

pub fn error_rate(metric: Metric<'_>, train: &Dataset, eval: &Dataset, k: usize) -> Result<f64> {
    error_rate_with(metric, train, eval, k, Exec::default())
}

/// Fraction of `eval` misclassified by k-NN against `train`.
pub fn error_rate_with(metric: Metric<'_>, train: &Dataset, eval: &Dataset, k: usize, exec: Exec) -> Result<f64> {
    if eval.n() == 0 {
        return Err(ScmlError::Empty("evaluation set"));
    }
    let index = KnnIndex::new(metric, train)?;
    let preds = exec.map(eval.n(), |i| index.predict(eval.row(i), k, None));
    count_errors(preds, eval.labels())
}

/// Leave-one-out error of `train` against itself (each query skips its own row).
pub fn loo_error_rate(metric: Metric<'_>, train: &Dataset, k: usize) -> Result<f64> {
    let index = KnnIndex::new(metric, train)?;
    let preds = Exec::default().map(train.n(), |i| index.predict(train.row(i), k, Some(i)));
    count_errors(preds, train.labels())
}

fn count_errors(preds: Vec<Result<usize>>, labels: &[usize]) -> Result<f64> {
    let mut wrong = 0usize;
    for (p, &y) in preds.into_iter().zip(labels) {
        if p? != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Fast validation scoring on cached projections with per-query weights.
///
/// `query_weights` is either one row shared by every query or one row per
/// query (local metrics).
pub fn projected_error_rate(
    train_proj: &Array2<f64>,
    train_labels: &[usize],
    query_proj: &Array2<f64>,
    query_labels: &[usize],
    query_weights: &Array2<f64>,
    k: usize,
    exec: Exec,
) -> Result<f64> {
    check_dim(train_proj.ncols(), query_proj.ncols())?;
    check_dim(query_proj.nrows(), query_labels.len())?;
    let shared = query_weights.nrows() == 1;
    if !shared {
        check_dim(query_proj.nrows(), query_weights.nrows())?;
    }
    if query_labels.is_empty() {
        return Err(ScmlError::Empty("evaluation set"));
    }
    let preds = exec.map(query_proj.nrows(), |i| {
        let w = if shared { query_weights.row(0) } else { query_weights.row(i) };
        let d = weighted_projected(train_proj, query_proj.row(i).as_slice().expect("layout"), w.as_slice().expect("layout"));
        vote(&d, train_labels, k, None)
    });
    count_errors(preds, query_labels)
}

/// Result of a validation sweep over regularization strengths.
#[derive(Debug, Clone)]
pub struct Selection<M> {
    pub beta: f64,
    pub model: M,
    /// `(beta, validation error)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Fits one model per `beta` and keeps the one with the lowest validation
/// error; ties go to the larger `beta`.
pub fn select_beta<M, F, S>(grid: &[f64], mut fit: F, mut score: S) -> Result<Selection<M>>
where
    F: FnMut(f64) -> Result<M>,
    S: FnMut(&M) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(ScmlError::Empty("beta grid"));
    }
    let mut best: Option<(f64, f64, M)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &beta in grid {
        let model = fit(beta)?;
        let err = score(&model)?;
        scores.push((beta, err));
        let better = match &best {
            None => true,
            Some((b, e, _)) => err < *e || (err == *e && beta > *b),
        };
        if better {
            best = Some((beta, err, model));
        }
    }
    let (beta, _, model) = best.expect("grid nonempty");
    Ok(Selection { beta, model, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(apportion(7, &[0.6, 0.2, 0.2]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let ds = Dataset::new(x, (0..10).map(|i| i % 2).collect()).unwrap();
        let s = split(&ds, SplitSpec::default(), 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split(&ds, SplitSpec::default(), 4).unwrap());
        let c = split(&ds, SplitSpec::Counts([3, 2, 1]), 4).unwrap();
        assert_eq!((c.train.len(), c.val.len(), c.test.len()), (3, 2, 1));
        assert!(split(&ds, SplitSpec::Counts([8, 2, 1]), 4).is_err());
        assert!(split(&ds, SplitSpec::Ratios([0.5, 0.2, 0.2]), 4).is_err());
    }

    #[test]
    fn vote_tie_rules() {
        // two classes with one vote each among k=2: smaller summed distance wins
        assert_eq!(vote(&[1.0, 0.5, 9.0], &[0, 1, 0], 2, None).unwrap(), 1);
        // equal distances: smaller class id
        assert_eq!(vote(&[1.0, 1.0], &[1, 0], 2, None).unwrap(), 0);
        // distance tie at the cut: smaller index enters
        assert_eq!(vote(&[2.0, 1.0, 1.0], &[0, 1, 0], 1, None).unwrap(), 1);
        assert_eq!(vote(&[0.0, 3.0], &[0, 1], 1, Some(0)).unwrap(), 1);
        assert!(vote(&[1.0], &[0], 2, None).is_err());
    }

    #[test]
    fn knn_basic_contracts() {
        let train = Dataset::new(array![[0.0, 0.0]], vec![1]).unwrap();
        assert_eq!(knn_predict(Metric::Euclidean, &train, &[5.0, 5.0], 1).unwrap(), 1);
        let train = Dataset::new(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(knn_predict(Metric::Euclidean, &train, &[2.0], 1).unwrap(), 0);
        assert_eq!(error_rate(Metric::Euclidean, &train, &train, 1).unwrap(), 0.0);
        assert_eq!(loo_error_rate(Metric::Euclidean, &train, 1).unwrap(), 1.0);
    }

    #[test]
    fn select_beta_prefers_sparser_on_ties() {
        let sel = select_beta(&[0.1], |b| Ok(b), |_| Ok(0.5)).unwrap();
        assert_eq!(sel.beta, 0.1);
        let sel = select_beta(&[0.01, 0.1, 1.0], |b| Ok(b), |&b: &f64| Ok(if b < 0.5 { 0.2 } else { 0.6 })).unwrap();
        assert_eq!(sel.beta, 0.1);
        assert_eq!(sel.scores.len(), 3);
        assert!(select_beta::<f64, _, _>(&[], |b| Ok(b), |_| Ok(0.0)).is_err());
    }
}
