//! Composed metrics: rank-one bases, nonnegative weights and the triplet
//! quantities every trainer works from.
//!
//! A metric is `M = sum_i w_i b_i b_i^T` with unit `b_i` and `w >= 0`.
//! Distances are always evaluated through the projections `b_i^T (x - x')`;
//! the dense `M` is only assembled by [`compose_metric`] for diagnostics.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Result, ScmlError};
use crate::linalg::{dot, norm2};

const UNIT_NORM_TOL: f64 = 1e-9;

/// Where a basis vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub region: usize,
    pub j_level: usize,
    /// Position among the discriminant directions of its local problem.
    pub rank: usize,
    /// Task that generated the vector (0 for single-task bases).
    #[serde(default)]
    pub task: usize,
}

/// Ordered dictionary of unit-norm rank-one atoms, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    vectors: Array2<f64>,
    provenance: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct BasisSetJson {
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    vectors: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl BasisSet {
    pub fn new(vectors: Array2<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        let (k, d) = vectors.dim();
        if k == 0 || d == 0 {
            return Err(ScmlError::InvalidBasis(format!("shape {k}x{d} is empty")));
        }
        check_dim(k, provenance.len())?;
        for (i, row) in vectors.axis_iter(Axis(0)).enumerate() {
            let nrm = row.dot(&row).sqrt();
            if !nrm.is_finite() || (nrm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(ScmlError::InvalidBasis(format!("row {i} has norm {nrm}")));
            }
        }
        let vectors = if vectors.is_standard_layout() { vectors } else { vectors.as_standard_layout().to_owned() };
        Ok(BasisSet { vectors, provenance })
    }

    /// Normalizes each row to unit length; rows that are numerically zero are rejected.
    pub fn from_unnormalized(mut vectors: Array2<f64>) -> Result<Self> {
        for (i, mut row) in vectors.axis_iter_mut(Axis(0)).enumerate() {
            let nrm = row.dot(&row).sqrt();
            if !(nrm > 1e-300) || !nrm.is_finite() {
                return Err(ScmlError::InvalidBasis(format!("row {i} is zero")));
            }
            row.mapv_inplace(|v| v / nrm);
        }
        let k = vectors.nrows();
        let prov = (0..k).map(|rank| Provenance { region: 0, j_level: 0, rank, task: 0 }).collect();
        Self::new(vectors, prov)
    }

    /// Canonical basis `e_1..e_D`.
    pub fn identity(d: usize) -> Self {
        Self::from_unnormalized(Array2::eye(d)).expect("identity rows are unit")
    }

    /// Stacks several bases (same D) into one, tagging provenance with the task index.
    pub fn concat(bases: &[BasisSet]) -> Result<Self> {
        let first = bases.first().ok_or(ScmlError::Empty("basis list"))?;
        let d = first.dim();
        let mut rows = Vec::new();
        let mut prov = Vec::new();
        for (t, b) in bases.iter().enumerate() {
            check_dim(d, b.dim())?;
            rows.extend(b.vectors.iter().copied());
            prov.extend(b.provenance.iter().map(|p| Provenance { task: t, ..*p }));
        }
        let k = prov.len();
        let vectors = Array2::from_shape_vec((k, d), rows).expect("shape");
        Self::new(vectors, prov)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i).to_slice().expect("standard layout")
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// `[b_i^T x]_i`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.vectors.rows().into_iter().map(|b| dot(b.to_slice().expect("layout"), x)).collect()
    }

    /// `n x K` matrix of projections of every row of `ds`.
    pub fn project_dataset(&self, ds: &Dataset) -> Result<Array2<f64>> {
        check_dim(self.dim(), ds.dim())?;
        Ok(ds.features().dot(&self.vectors.t()))
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(ScmlError::IndexOutOfRange { index: bad, len: self.len() });
        }
        let vectors = self.vectors.select(Axis(0), rows);
        let prov = rows.iter().map(|&r| self.provenance[r]).collect();
        Self::new(vectors, prov)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let j = BasisSetJson {
            d: self.dim(),
            k: self.len(),
            vectors: self.vectors.rows().into_iter().map(|r| r.to_vec()).collect(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_value(j).expect("basis serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let j: BasisSetJson = serde_json::from_value(v)?;
        if j.vectors.len() != j.k {
            return Err(ScmlError::DimensionMismatch { expected: j.k, got: j.vectors.len() });
        }
        let mut flat = Vec::with_capacity(j.k * j.d);
        for row in &j.vectors {
            check_dim(j.d, row.len())?;
            flat.extend_from_slice(row);
        }
        let vectors = Array2::from_shape_vec((j.k, j.d), flat).expect("shape checked");
        Self::new(vectors, j.provenance)
    }
}

impl Serialize for BasisSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BasisSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        BasisSet::from_json_value(v).map_err(serde::de::Error::custom)
    }
}

/// Nonnegative combination weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(ScmlError::InvalidArgument(format!("weight {i} = {v} is not a finite nonnegative value")));
        }
        Ok(WeightVector(w))
    }

    pub fn zeros(k: usize) -> Self {
        WeightVector(vec![0.0; k])
    }

    pub fn ones(k: usize) -> Self {
        WeightVector(vec![1.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0.0).count()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = ScmlError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        WeightVector::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Vec<f64> {
        w.0
    }
}

/// "anchor is closer to target than to impostor".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub target: usize,
    pub impostor: usize,
}

/// `M = sum_i w_i b_i b_i^T` as a dense `D x D` matrix.
pub fn compose_metric(w: &WeightVector, basis: &BasisSet) -> Result<Array2<f64>> {
    check_dim(basis.len(), w.len())?;
    let d = basis.dim();
    let mut m = Array2::zeros((d, d));
    for (i, &wi) in w.as_slice().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let b = basis.vectors.row(i);
        for r in 0..d {
            let s = wi * b[r];
            for c in r..d {
                m[[r, c]] += s * b[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            m[[r, c]] = m[[c, r]];
        }
    }
    Ok(m)
}

/// Weighted squared projection distance `sum_i w_i (b_i^T (x - x'))^2`.
pub fn dist_weighted(w: &[f64], basis: &BasisSet, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(basis.len(), w.len())?;
    check_dim(basis.dim(), x.len())?;
    check_dim(basis.dim(), y.len())?;
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(w
        .iter()
        .enumerate()
        .filter(|(_, &wi)| wi != 0.0)
        .map(|(i, &wi)| {
            let p = dot(basis.vector(i), &diff);
            wi * p * p
        })
        .sum())
}

/// Squared Mahalanobis distance under the composed metric, without forming `M`.
pub fn dist_global(w: &WeightVector, basis: &BasisSet, x: &[f64], y: &[f64]) -> Result<f64> {
    dist_weighted(w.as_slice(), basis, x, y)
}

/// `[1 + <w, p> - <w, q>]_+`.
pub fn hinge_loss(w: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let margin = 1.0 + dot(w, p) - dot(w, q);
    margin.max(0.0)
}

/// Triplet constraints together with the basis projections of the points they
/// touch.
///
/// `p = [(b_i^T(x_a - x_t))^2]_i` and `q = [(b_i^T(x_a - x_k))^2]_i` are
/// produced on demand from a cached `n x K` projection table instead of being
/// stored per triplet; this keeps memory at `O(nK)` rather than `O(|C| K)`.
#[derive(Debug, Clone)]
pub struct TripletFeatures {
    projections: Array2<f64>,
    triplets: Vec<Triplet>,
}

impl TripletFeatures {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Number of basis elements.
    pub fn k(&self) -> usize {
        self.projections.ncols()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn anchor(&self, t: usize) -> usize {
        self.triplets[t].anchor
    }

    pub fn projections(&self) -> &Array2<f64> {
        &self.projections
    }

    fn proj(&self, i: usize) -> ArrayView1<'_, f64> {
        self.projections.row(i)
    }

    pub fn p(&self, t: usize) -> Vec<f64> {
        let tr = self.triplets[t];
        sq_diff(self.proj(tr.anchor), self.proj(tr.target))
    }

    pub fn q(&self, t: usize) -> Vec<f64> {
        let tr = self.triplets[t];
        sq_diff(self.proj(tr.anchor), self.proj(tr.impostor))
    }

    /// Writes `p - q` for triplet `t` into `out`.
    pub fn diff_into(&self, t: usize, out: &mut [f64]) {
        let tr = self.triplets[t];
        let a = self.proj(tr.anchor);
        let j = self.proj(tr.target);
        let k = self.proj(tr.impostor);
        for (((o, &a), &j), &k) in out.iter_mut().zip(a.iter()).zip(j.iter()).zip(k.iter()) {
            let dj = a - j;
            let dk = a - k;
            *o = dj * dj - dk * dk;
        }
    }

    /// `1 + sum_i w_i (p_i - q_i)`, skipping zero weights.
    pub fn margin(&self, t: usize, w: &[f64]) -> f64 {
        let tr = self.triplets[t];
        let a = self.proj(tr.anchor);
        let j = self.proj(tr.target);
        let k = self.proj(tr.impostor);
        let mut s = 1.0;
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                let dj = a[i] - j[i];
                let dk = a[i] - k[i];
                s += wi * (dj * dj - dk * dk);
            }
        }
        s
    }

    pub fn hinge(&self, t: usize, w: &[f64]) -> f64 {
        self.margin(t, w).max(0.0)
    }

    /// Mean hinge loss over all triplets.
    pub fn mean_hinge(&self, w: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|t| self.hinge(t, w)).sum::<f64>() / self.len() as f64
    }
}

fn sq_diff(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).collect()
}

/// Caches the basis projections needed to evaluate `p` and `q` for `triplets`.
pub fn triplet_features(ds: &Dataset, basis: &BasisSet, triplets: &[Triplet]) -> Result<TripletFeatures> {
    let n = ds.n();
    for t in triplets {
        for idx in [t.anchor, t.target, t.impostor] {
            if idx >= n {
                return Err(ScmlError::IndexOutOfRange { index: idx, len: n });
            }
        }
    }
    Ok(TripletFeatures { projections: basis.project_dataset(ds)?, triplets: triplets.to_vec() })
}

/// Mean hinge loss of a single triplet under weights `w`.
pub fn hinge_triplet_loss(w: &WeightVector, f: &TripletFeatures, t: usize) -> Result<f64> {
    check_dim(f.k(), w.len())?;
    Ok(f.hinge(t, w.as_slice()))
}

/// Whether `v` has unit length within the basis tolerance.
pub fn is_unit(v: &[f64]) -> bool {
    (norm2(v) - 1.0).abs() <= UNIT_NORM_TOL
}
