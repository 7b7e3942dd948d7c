//! Locally discriminative rank-one bases.
//!
//! The data are split into regions with k-means. Around each region center
//! the `J` nearest members of every class are gathered, and Fisher
//! discriminant analysis on that neighborhood yields up to `C - 1` unit
//! directions. Repeating over several `J` captures different scales.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, ScmlError};
use crate::exec::Exec;
use crate::kmeans::kmeans;
use crate::linalg::{dot, sq_euclidean, sym_eigen_desc};
use crate::metric::{BasisSet, Provenance};

/// Rows whose absolute cosine exceeds this are treated as the same atom.
const DEDUP_COS: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisGenConfig {
    /// Number of k-means regions; derived from the budget when unset.
    pub num_regions: Option<usize>,
    pub j_levels: Vec<usize>,
    /// Directions kept per FDA problem; `C - 1` when unset.
    pub max_directions_per_fda: Option<usize>,
    /// Within-class scatter ridge, relative to `trace(S_w) / D`.
    pub scatter_ridge: f64,
    pub basis_budget: Option<usize>,
    pub rng_seed: u64,
}

impl Default for BasisGenConfig {
    fn default() -> Self {
        BasisGenConfig {
            num_regions: None,
            j_levels: vec![10, 20, 50],
            max_directions_per_fda: None,
            scatter_ridge: 1e-6,
            basis_budget: Some(400),
            rng_seed: 0,
        }
    }
}

impl BasisGenConfig {
    /// Directions one FDA problem can contribute with `c` classes.
    pub fn directions_per_problem(&self, c: usize, d: usize) -> usize {
        let cap = c.saturating_sub(1).min(d);
        self.max_directions_per_fda.map_or(cap, |m| m.min(cap))
    }

    /// Region count: explicit, else `ceil(budget / (|J| * dirs))`, else 1.
    pub fn regions_for(&self, c: usize, d: usize, n: usize) -> usize {
        let m = match (self.num_regions, self.basis_budget) {
            (Some(m), _) => m,
            (None, Some(k)) => {
                let per = (self.j_levels.len() * self.directions_per_problem(c, d)).max(1);
                k.div_ceil(per)
            }
            (None, None) => 1,
        };
        m.clamp(1, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_levels.is_empty() || self.j_levels.contains(&0) {
            return Err(ScmlError::InvalidArgument("J levels must be nonempty and >= 1".into()));
        }
        if !(self.scatter_ridge >= 0.0) {
            return Err(ScmlError::InvalidArgument("scatter ridge must be >= 0".into()));
        }
        if self.basis_budget == Some(0) || self.num_regions == Some(0) {
            return Err(ScmlError::InvalidArgument("basis budget and region count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Between- and within-class scatter of a labeled sample.
pub fn scatter_matrices(x: ArrayView2<'_, f64>, y: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let c = y.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; c];
    let mut means = vec![vec![0.0; d]; c];
    let mut overall = vec![0.0; d];
    for (row, &lab) in x.rows().into_iter().zip(y) {
        counts[lab] += 1;
        for j in 0..d {
            means[lab][j] += row[j];
            overall[j] += row[j];
        }
    }
    for j in 0..d {
        overall[j] /= n as f64;
    }
    for (m, &k) in means.iter_mut().zip(&counts) {
        if k > 0 {
            m.iter_mut().for_each(|v| *v /= k as f64);
        }
    }
    let mut sb = DMatrix::zeros(d, d);
    for (m, &k) in means.iter().zip(&counts) {
        if k == 0 {
            continue;
        }
        let diff: Vec<f64> = m.iter().zip(&overall).map(|(a, b)| a - b).collect();
        for r in 0..d {
            for s in 0..d {
                sb[(r, s)] += k as f64 * diff[r] * diff[s];
            }
        }
    }
    let mut sw = DMatrix::zeros(d, d);
    for (row, &lab) in x.rows().into_iter().zip(y) {
        let diff: Vec<f64> = row.iter().zip(&means[lab]).map(|(a, b)| a - b).collect();
        for r in 0..d {
            for s in 0..d {
                sw[(r, s)] += diff[r] * diff[s];
            }
        }
    }
    (sb, sw)
}

/// Fisher discriminant directions of a local sample.
///
/// Solves `S_b v = lambda (S_w + eps I) v` with `eps = ridge * trace(S_w) / D`
/// and returns up to `min(C_local - 1, D, max_dirs)` unit vectors in order of
/// decreasing `lambda`. Fewer than two classes gives an empty list.
pub fn local_fda(x: ArrayView2<'_, f64>, y: &[usize], ridge: f64, max_dirs: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(ScmlError::DimensionMismatch { expected: n, got: y.len() });
    }
    let mut present: Vec<usize> = y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Ok(Vec::new());
    }
    let keep = (present.len() - 1).min(d).min(max_dirs.unwrap_or(usize::MAX));
    let (sb, sw) = scatter_matrices(x, y);
    let mut eps = ridge * sw.trace() / d as f64;
    if !(eps > 0.0) {
        eps = ridge * sb.trace() / d as f64;
    }
    if !(eps > 0.0) {
        eps = f64::EPSILON;
    }
    let mut reg = sw.clone();
    for i in 0..d {
        reg[(i, i)] += eps;
    }
    let chol = reg
        .cholesky()
        .ok_or_else(|| ScmlError::Numerical("regularized within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    // C = L^{-1} S_b L^{-T}
    let linv_sb = l.solve_lower_triangular(&sb).ok_or_else(|| ScmlError::Numerical("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&linv_sb.transpose())
        .ok_or_else(|| ScmlError::Numerical("triangular solve".into()))?;
    let (vals, vecs) = sym_eigen_desc(c)?;
    let top = vals.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Ok(Vec::new());
    }
    let lt = l.transpose();
    let mut out = Vec::with_capacity(keep);
    for (j, &lambda) in vals.iter().enumerate().take(keep) {
        if lambda <= 1e-10 * top {
            break;
        }
        let u = vecs.column(j).into_owned();
        let v = lt.solve_upper_triangular(&u).ok_or_else(|| ScmlError::Numerical("back substitution".into()))?;
        let nrm = v.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            continue;
        }
        let mut v: Vec<f64> = v.iter().map(|a| a / nrm).collect();
        canonical_sign(&mut v);
        out.push(v);
    }
    Ok(out)
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

/// Indices of the `j` members of `members` closest to `center` (ties by index).
fn nearest_members(ds: &Dataset, members: &[usize], center: &[f64], j: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = members.iter().map(|&i| (sq_euclidean(ds.row(i), center), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(j).map(|(_, i)| i).collect()
}

struct Candidate {
    vector: Vec<f64>,
    prov: Provenance,
    group: usize,
}

/// Builds the basis dictionary from a training set.
pub fn generate_basis(ds: &Dataset, cfg: &BasisGenConfig) -> Result<BasisSet> {
    generate_basis_with(ds, cfg, Exec::default())
}

pub fn generate_basis_with(ds: &Dataset, cfg: &BasisGenConfig, exec: Exec) -> Result<BasisSet> {
    cfg.validate()?;
    let members = ds.class_members();
    let present = members.iter().filter(|m| !m.is_empty()).count();
    if present < 2 {
        return Err(ScmlError::Degenerate(format!("basis generation needs >= 2 classes, found {present}")));
    }
    let d = ds.dim();
    let m = cfg.regions_for(present, d, ds.n());
    let centers = kmeans(ds.features(), m, cfg.rng_seed)?;
    let groups: Vec<(usize, usize)> = (0..m).flat_map(|r| cfg.j_levels.iter().map(move |&j| (r, j))).collect();
    let per_group = exec.map(groups.len(), |g| -> Result<Vec<Vec<f64>>> {
        let (r, j) = groups[g];
        let center = centers.row(r).to_vec();
        let mut idx = Vec::new();
        for cls in &members {
            idx.extend(nearest_members(ds, cls, &center, j));
        }
        let local = ds.subset(&idx)?;
        local_fda(local.features().view(), local.labels(), cfg.scatter_ridge, cfg.max_directions_per_fda)
    });

    let mut kept: Vec<Candidate> = Vec::new();
    for (g, dirs) in per_group.into_iter().enumerate() {
        let (region, j_level) = groups[g];
        for (rank, v) in dirs?.into_iter().enumerate() {
            if kept.iter().any(|c| dot(&c.vector, &v).abs() > DEDUP_COS) {
                continue;
            }
            kept.push(Candidate { vector: v, prov: Provenance { region, j_level, rank, task: 0 }, group: g });
        }
    }
    if kept.is_empty() {
        return Err(ScmlError::Degenerate("no discriminant direction found in any region".into()));
    }

    if let Some(budget) = cfg.basis_budget {
        if kept.len() > budget {
            // round-robin over (region, J) groups: every group's best direction first
            let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
            for (i, c) in kept.iter().enumerate() {
                by_group[c.group].push(i);
            }
            let mut selected = Vec::with_capacity(budget);
            let mut level = 0;
            while selected.len() < budget {
                for g in &by_group {
                    if let Some(&i) = g.get(level) {
                        selected.push(i);
                        if selected.len() == budget {
                            break;
                        }
                    }
                }
                level += 1;
            }
            selected.sort_unstable();
            let mut it = selected.into_iter().peekable();
            kept = kept
                .into_iter()
                .enumerate()
                .filter(|(i, _)| it.next_if_eq(i).is_some())
                .map(|(_, c)| c)
                .collect();
        }
    }

    let k = kept.len();
    let mut flat = Vec::with_capacity(k * d);
    let mut prov = Vec::with_capacity(k);
    for c in kept {
        flat.extend_from_slice(&c.vector);
        prov.push(c.prov);
    }
    BasisSet::new(Array2::from_shape_vec((k, d), flat).expect("shape"), prov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_blobs(n_per: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let cx = if c == 0 { -5.0 } else { 5.0 };
            for _ in 0..n_per {
                rows.push(cx + noise.sample(&mut rng));
                rows.push(noise.sample(&mut rng));
                labels.push(c);
            }
        }
        Dataset::new(Array2::from_shape_vec((2 * n_per, 2), rows).unwrap(), labels).unwrap()
    }

    /// Leading generalized eigenvector by power iteration on (S_w + eps I)^{-1} S_b.
    fn power_oracle(sb: &DMatrix<f64>, sw: &DMatrix<f64>, eps: f64) -> Vec<f64> {
        let d = sb.nrows();
        let reg = sw + DMatrix::identity(d, d) * eps;
        let inv = reg.try_inverse().unwrap();
        let op = inv * sb;
        let mut v = nalgebra::DVector::from_element(d, 1.0);
        for _ in 0..500 {
            v = &op * &v;
            v /= v.norm();
        }
        v.iter().copied().collect()
    }

    #[test]
    fn separating_axis_is_found() {
        let ds = two_blobs(30, 1);
        let dirs = local_fda(ds.features().view(), ds.labels(), 1e-6, None).unwrap();
        assert_eq!(dirs.len(), 1);
        let v = &dirs[0];
        assert!(v[0].abs() > 0.95, "{v:?}");
        let (sb, sw) = scatter_matrices(ds.features().view(), ds.labels());
        let eps = 1e-6 * sw.trace() / 2.0;
        let oracle = power_oracle(&sb, &sw, eps);
        let cos = dot(v, &oracle).abs() / crate::linalg::norm2(&oracle);
        assert!(cos > 1.0 - 1e-9, "cos = {cos}");
    }

    #[test]
    fn directions_are_unit_and_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((40, 5), |_| rng.random::<f64>());
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let dirs = local_fda(x.view(), &y, 1e-6, None).unwrap();
        assert_eq!(dirs.len(), 3);
        for v in &dirs {
            assert!((crate::linalg::norm2(v) - 1.0).abs() < 1e-9);
        }
        assert_eq!(local_fda(x.view(), &y, 1e-6, Some(2)).unwrap().len(), 2);
    }

    #[test]
    fn single_class_gives_nothing() {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
        assert!(local_fda(x.view(), &[3; 6], 1e-6, None).unwrap().is_empty());
    }

    #[test]
    fn two_classes_one_region_yields_at_most_one() {
        let ds = two_blobs(25, 3);
        let cfg = BasisGenConfig { num_regions: Some(1), j_levels: vec![10], ..Default::default() };
        assert!(generate_basis(&ds, &cfg).unwrap().len() <= 1);
    }

    #[test]
    fn identical_neighborhoods_are_deduplicated() {
        // 10 points per class: J=10 and J=20 gather the same neighborhood
        let ds = two_blobs(10, 4);
        let cfg = BasisGenConfig { num_regions: Some(1), j_levels: vec![10, 20], ..Default::default() };
        let b = generate_basis(&ds, &cfg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.provenance()[0].j_level, 10);
    }

    fn many_classes(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 700;
        let d = 19;
        let labels: Vec<usize> = (0..n).map(|i| i % 7).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| {
            let c = labels[i] as f64;
            (c * (j as f64 + 1.0)).sin() * 2.0 + rng.random::<f64>() * 1.5
        });
        Dataset::new(x, labels).unwrap()
    }

    #[test]
    fn budget_reached_when_supply_suffices() {
        let ds = many_classes(7);
        let cfg = BasisGenConfig { basis_budget: Some(400), rng_seed: 3, ..Default::default() };
        let m = cfg.regions_for(7, 19, ds.n());
        assert_eq!(m, 23);
        // enumerate the full supply with the same regions and no budget
        let unbounded = BasisGenConfig { num_regions: Some(m), basis_budget: None, ..cfg.clone() };
        let supply = generate_basis(&ds, &unbounded).unwrap().len();
        assert!(supply <= m * 3 * 6);
        let b = generate_basis(&ds, &cfg).unwrap();
        assert_eq!(b.len(), supply.min(400));
        for i in 0..b.len() {
            assert!(crate::metric::is_unit(b.vector(i)));
        }
    }

    #[test]
    fn generation_is_deterministic_across_strategies() {
        let ds = many_classes(8);
        let cfg = BasisGenConfig { basis_budget: Some(60), rng_seed: 5, ..Default::default() };
        let a = generate_basis_with(&ds, &cfg, Exec::Sequential).unwrap();
        let b = generate_basis_with(&ds, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
    }

    #[test]
    fn rejects_single_class_dataset() {
        let x = Array2::zeros((4, 2));
        let ds = Dataset::new(x, vec![0; 4]).unwrap();
        assert!(generate_basis(&ds, &BasisGenConfig::default()).is_err());
    }
}
