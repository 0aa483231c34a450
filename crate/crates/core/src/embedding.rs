//! Outcome metric spaces and their isometric maps into a Hilbert space.
//!
//! Each supported outcome type has an exact linear isometry into a finite
//! grid representation:
//!
//! * quantile functions under the Wasserstein-2 metric map to themselves on
//!   the midpoint probability grid, with the `1/M` quadrature inner product;
//! * SPD matrices under the Frobenius metric are vectorized;
//! * sphere points under the chordal metric keep their ambient coordinates.
//!
//! Objects whose metric has no such closed form (geodesic sphere distance,
//! arbitrary negative-type metrics) go through [`EmpiricalEmbedding`], which
//! builds a feature map from the pairwise distances of an in-sample set.
//!
//! The image of each map is a closed convex set; [`project_to_image`]
//! returns the nearest point of that set and [`pull_back`] inverts the map
//! after projecting.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, probability_grid};

/// Tolerance for symmetry and unit-norm checks on constructed objects.
pub const OBJECT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    ProbabilityGrid,
    MatrixCoords,
    AmbientCoords,
    EmpiricalFeature,
}

/// Element of the discretized Hilbert space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilbertVector {
    values: Vec<f64>,
    kind: GridKind,
}

impl HilbertVector {
    pub fn new(values: Vec<f64>, kind: GridKind) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "Hilbert vectors need at least 2 coordinates, got {}",
                values.len()
            )));
        }
        Ok(HilbertVector { values, kind })
    }

    pub fn zeros(len: usize, kind: GridKind) -> Self {
        HilbertVector {
            values: vec![0.0; len.max(2)],
            kind,
        }
    }

    pub fn constant(value: f64, len: usize, kind: GridKind) -> Self {
        HilbertVector {
            values: vec![value; len.max(2)],
            kind,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Quadrature weight applied to each coordinate product.
    pub fn weight(&self) -> f64 {
        match self.kind {
            GridKind::ProbabilityGrid => 1.0 / self.values.len() as f64,
            _ => 1.0,
        }
    }

    pub fn check_compatible(&self, other: &HilbertVector) -> Result<()> {
        if self.kind != other.kind || self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot combine {:?}[{}] with {:?}[{}]",
                self.kind,
                self.values.len(),
                other.kind,
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn inner(&self, other: &HilbertVector) -> Result<f64> {
        self.check_compatible(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.weight())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.weight()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &HilbertVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    pub fn sub(&self, other: &HilbertVector) -> Result<HilbertVector> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(HilbertVector {
            values,
            kind: self.kind,
        })
    }

    pub fn add(&self, other: &HilbertVector) -> Result<HilbertVector> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(HilbertVector {
            values,
            kind: self.kind,
        })
    }

    pub fn scale(&self, alpha: f64) -> HilbertVector {
        HilbertVector {
            values: self.values.iter().map(|v| alpha * v).collect(),
            kind: self.kind,
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &HilbertVector) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }
}

/// Quantile function sampled at `p_j = (j - 1/2) / M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFunction {
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidObject(
                "quantile function needs M >= 2".into(),
            ));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidObject(format!(
                "non-finite quantile at index {j}"
            )));
        }
        if let Some(j) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidObject(format!(
                "quantile function decreases at index {}: {} > {}",
                j + 1,
                values[j],
                values[j + 1]
            )));
        }
        Ok(QuantileFunction { values })
    }

    /// Discretizes a quantile function on the M-point midpoint grid.
    pub fn from_fn(m: usize, quantile: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(probability_grid(m).into_iter().map(quantile).collect())
    }

    pub fn normal(mean: f64, sd: f64, m: usize) -> Result<Self> {
        Self::from_fn(m, |p| mean + sd * normal_quantile(p))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Symmetric positive semi-definite matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SpdMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::InvalidObject(format!(
                "expected {dim}x{dim} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObject("non-finite matrix entry".into()));
        }
        let scale = entries.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (entries[i * dim + j] - entries[j * dim + i]).abs() > OBJECT_TOL * scale {
                    return Err(Error::InvalidObject(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let min_eig = SymmetricEigen::new(m).eigenvalues.min();
        if min_eig < -OBJECT_TOL * scale {
            return Err(Error::InvalidObject(format!(
                "matrix not positive semi-definite (eigenvalue {min_eig})"
            )));
        }
        Ok(SpdMatrix { dim, entries })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidObject("matrix is not square".into()));
        }
        let dim = m.nrows();
        let entries = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| m[(i, j)]))
            .collect();
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        SpdMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }
}

/// Point on the unit sphere in R^q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidObject(
                "sphere points need at least 2 coordinates".into(),
            ));
        }
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > OBJECT_TOL {
            return Err(Error::InvalidObject(format!(
                "sphere point has norm {norm}"
            )));
        }
        Ok(SpherePoint { coords })
    }

    /// Sphere point restricted to the nonnegative orthant (compositional data).
    pub fn compositional(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidObject(
                "compositional coordinates must be >= 0".into(),
            ));
        }
        Self::new(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Great-circle distance, the intrinsic metric of the sphere.
    pub fn geodesic_distance(&self, other: &SpherePoint) -> Result<f64> {
        if self.coords.len() != other.coords.len() {
            return Err(Error::DimensionMismatch("sphere dimensions differ".into()));
        }
        let dot: f64 = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum();
        Ok(dot.clamp(-1.0, 1.0).acos())
    }
}

/// Outcome object living in one of the supported metric spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricObject {
    Quantile(QuantileFunction),
    Spd(SpdMatrix),
    Sphere(SpherePoint),
}

/// Target space tag for projection and pull-back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Quantile,
    Spd,
    Sphere,
    CompositionalSphere,
}

impl ObjectKind {
    pub fn grid_kind(self) -> GridKind {
        match self {
            ObjectKind::Quantile => GridKind::ProbabilityGrid,
            ObjectKind::Spd => GridKind::MatrixCoords,
            ObjectKind::Sphere | ObjectKind::CompositionalSphere => GridKind::AmbientCoords,
        }
    }
}

impl MetricObject {
    pub fn kind(&self) -> ObjectKind {
        match self {
            MetricObject::Quantile(_) => ObjectKind::Quantile,
            MetricObject::Spd(_) => ObjectKind::Spd,
            MetricObject::Sphere(_) => ObjectKind::Sphere,
        }
    }

    pub fn as_quantile(&self) -> Option<&QuantileFunction> {
        match self {
            MetricObject::Quantile(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_spd(&self) -> Option<&SpdMatrix> {
        match self {
            MetricObject::Spd(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_sphere(&self) -> Option<&SpherePoint> {
        match self {
            MetricObject::Sphere(s) => Some(s),
            _ => None,
        }
    }
}

/// The isometric map ρ.
pub fn embed(obj: &MetricObject) -> HilbertVector {
    match obj {
        MetricObject::Quantile(q) => HilbertVector {
            values: q.values.clone(),
            kind: GridKind::ProbabilityGrid,
        },
        MetricObject::Spd(s) => HilbertVector {
            values: s.entries.clone(),
            kind: GridKind::MatrixCoords,
        },
        MetricObject::Sphere(s) => HilbertVector {
            values: s.coords.clone(),
            kind: GridKind::AmbientCoords,
        },
    }
}

/// Metric of the outcome space: Wasserstein-2 for quantile functions,
/// Frobenius for matrices, chordal for sphere points.
pub fn distance(a: &MetricObject, b: &MetricObject) -> Result<f64> {
    match (a, b) {
        (MetricObject::Quantile(x), MetricObject::Quantile(y)) => {
            if x.len() != y.len() {
                return Err(Error::DimensionMismatch("quantile grids differ".into()));
            }
            let ss: f64 = x
                .values
                .iter()
                .zip(&y.values)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            Ok((ss / x.len() as f64).sqrt())
        }
        (MetricObject::Spd(x), MetricObject::Spd(y)) => {
            if x.dim != y.dim {
                return Err(Error::DimensionMismatch("matrix dimensions differ".into()));
            }
            let ss: f64 = x
                .entries
                .iter()
                .zip(&y.entries)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            Ok(ss.sqrt())
        }
        (MetricObject::Sphere(x), MetricObject::Sphere(y)) => {
            if x.coords.len() != y.coords.len() {
                return Err(Error::DimensionMismatch("sphere dimensions differ".into()));
            }
            let ss: f64 = x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            Ok(ss.sqrt())
        }
        _ => Err(Error::DimensionMismatch(format!(
            "cannot measure distance between {:?} and {:?}",
            a.kind(),
            b.kind()
        ))),
    }
}

/// L2 projection onto the cone of nondecreasing vectors (pool adjacent
/// violators, equal weights).
pub fn pava(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count), merged while the last two are out of order
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len() - 1;
            if sums[k - 1] / counts[k - 1] as f64 > sums[k] / counts[k] as f64 {
                sums[k - 1] += sums[k];
                counts[k - 1] += counts[k];
                sums.pop();
                counts.pop();
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in sums.into_iter().zip(counts) {
        let level = s / c as f64;
        out.extend(std::iter::repeat_n(level, c));
    }
    out
}

/// Nearest PSD matrix in Frobenius norm: symmetrize, clip negative
/// eigenvalues to zero.
pub fn nearest_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let u = &eig.eigenvectors;
    let mut out = u * DMatrix::from_diagonal(&clipped) * u.transpose();
    // remove rounding asymmetry so the result passes SpdMatrix validation
    let t = out.transpose();
    out = (&out + t) * 0.5;
    out
}

fn square_dim(len: usize) -> Result<usize> {
    let k = (len as f64).sqrt().round() as usize;
    if k * k != len {
        return Err(Error::DimensionMismatch(format!(
            "{len} matrix coordinates do not form a square matrix"
        )));
    }
    Ok(k)
}

/// Nearest point of ρ(𝒴) to `v`.
pub fn project_to_image(v: &HilbertVector, target: ObjectKind) -> Result<HilbertVector> {
    if v.kind != target.grid_kind() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vector cannot be projected onto {:?} objects",
            v.kind, target
        )));
    }
    if !v.is_finite() {
        return Err(Error::Numerical(
            "cannot project a non-finite vector".into(),
        ));
    }
    let values = match target {
        ObjectKind::Quantile => pava(&v.values),
        ObjectKind::Spd => {
            let k = square_dim(v.len())?;
            let m = DMatrix::from_row_slice(k, k, &v.values);
            let p = nearest_psd(&m);
            (0..k)
                .flat_map(|i| (0..k).map(move |j| (i, j)))
                .map(|(i, j)| p[(i, j)])
                .collect()
        }
        ObjectKind::Sphere => normalize(&v.values)?,
        ObjectKind::CompositionalSphere => {
            let clipped: Vec<f64> = v.values.iter().map(|c| c.max(0.0)).collect();
            normalize(&clipped)?
        }
    };
    Ok(HilbertVector {
        values,
        kind: v.kind,
    })
}

fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let norm = values.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numerical(
            "zero vector has no unique nearest point on the sphere".into(),
        ));
    }
    Ok(values.iter().map(|c| c / norm).collect())
}

/// ρ⁻¹ ∘ projection.
pub fn pull_back(v: &HilbertVector, target: ObjectKind) -> Result<MetricObject> {
    let projected = project_to_image(v, target)?;
    match target {
        ObjectKind::Quantile => Ok(MetricObject::Quantile(QuantileFunction::new(
            projected.values,
        )?)),
        ObjectKind::Spd => {
            let k = square_dim(projected.len())?;
            let mut entries = projected.values;
            // exact symmetry for the constructor
            for i in 0..k {
                for j in (i + 1)..k {
                    let avg = 0.5 * (entries[i * k + j] + entries[j * k + i]);
                    entries[i * k + j] = avg;
                    entries[j * k + i] = avg;
                }
            }
            // clipped spectra may leave eigenvalues at -1e-17 scale
            let m = DMatrix::from_row_slice(k, k, &entries);
            let scale = entries.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            let min_eig = SymmetricEigen::new(m).eigenvalues.min();
            if min_eig < -OBJECT_TOL * scale {
                return Err(Error::Numerical(format!(
                    "projection left eigenvalue {min_eig}"
                )));
            }
            Ok(MetricObject::Spd(SpdMatrix { dim: k, entries }))
        }
        ObjectKind::Sphere => Ok(MetricObject::Sphere(SpherePoint {
            coords: projected.values,
        })),
        ObjectKind::CompositionalSphere => Ok(MetricObject::Sphere(SpherePoint {
            coords: projected.values,
        })),
    }
}

/// Feature map built from the pairwise distances of an in-sample set of
/// objects, via the kernel κ(z, z') = ½[d²(z, z₀) + d²(z', z₀) − d²(z, z')].
///
/// Rows of `factor` are the feature vectors; for a metric of negative type
/// their Euclidean distances reproduce the original distances.
#[derive(Debug, Clone)]
pub struct EmpiricalEmbedding<T> {
    pub anchors: Vec<T>,
    pub base_point_index: usize,
    pub gram: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub eig_floor: f64,
    /// Most negative eigenvalue of the gram matrix (0 if none).
    pub min_eigenvalue: f64,
    /// Set when the most negative eigenvalue is below `-1e-6 * trace`,
    /// i.e. the metric is likely not of negative type.
    pub negative_type_warning: bool,
}

impl<T> EmpiricalEmbedding<T> {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn reconstruction_tolerance(&self) -> f64 {
        (self.eig_floor * self.anchors.len() as f64).max(1e-8)
    }

    /// Frobenius norm of `gram - factor·factorᵀ`.
    pub fn reconstruction_error(&self) -> f64 {
        (&self.gram - &self.factor * self.factor.transpose()).norm()
    }

    /// Embedded feature vector of anchor `i`.
    pub fn feature(&self, i: usize) -> HilbertVector {
        HilbertVector {
            values: self.factor.row(i).iter().copied().collect(),
            kind: GridKind::EmpiricalFeature,
        }
    }

    pub fn feature_distance(&self, i: usize, j: usize) -> f64 {
        (self.factor.row(i) - self.factor.row(j)).norm()
    }
}

/// Builds the empirical embedding of `sample` under `metric`.
///
/// `eig_floor` defaults to `1e-10` times the largest eigenvalue; eigenvalues
/// at or below it are dropped from the factor.
pub fn build_empirical_embedding<T>(
    sample: Vec<T>,
    metric: impl Fn(&T, &T) -> Result<f64>,
    base_point_index: usize,
    eig_floor: Option<f64>,
) -> Result<EmpiricalEmbedding<T>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "empirical embedding needs at least 2 objects".into(),
        ));
    }
    if base_point_index >= n {
        return Err(Error::InvalidArgument(format!(
            "base point {base_point_index} out of range for {n} objects"
        )));
    }
    let mut d2 = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let dii = metric(&sample[i], &sample[i])?;
        if dii.abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "metric has nonzero diagonal d({i},{i}) = {dii}"
            )));
        }
        for j in (i + 1)..n {
            let dij = metric(&sample[i], &sample[j])?;
            let dji = metric(&sample[j], &sample[i])?;
            if !dij.is_finite() || dij < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "invalid distance d({i},{j}) = {dij}"
                )));
            }
            if (dij - dji).abs() > 1e-12 * dij.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "metric not symmetric at ({i},{j})"
                )));
            }
            d2[(i, j)] = dij * dij;
            d2[(j, i)] = dij * dij;
        }
    }
    let z0 = base_point_index;
    let gram = DMatrix::from_fn(n, n, |i, j| 0.5 * (d2[(i, z0)] + d2[(j, z0)] - d2[(i, j)]));

    let eig = SymmetricEigen::new(gram.clone());
    let largest = eig.eigenvalues.max();
    if largest <= 0.0 {
        return Err(Error::Numerical(
            "degenerate sample: no positive eigenvalue".into(),
        ));
    }
    let floor = eig_floor.unwrap_or(1e-10 * largest);
    let retained: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > floor).collect();
    if retained.is_empty() {
        return Err(Error::Numerical(
            "all eigenvalues clipped; degenerate sample".into(),
        ));
    }
    let min_eigenvalue = eig.eigenvalues.min().min(0.0);
    let trace = gram.trace();
    let negative_type_warning = min_eigenvalue < -1e-6 * trace;

    let cols = retained.len().max(2);
    let mut factor = DMatrix::<f64>::zeros(n, cols);
    for (c, &k) in retained.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for i in 0..n {
            factor[(i, c)] = eig.eigenvectors[(i, k)] * s;
        }
    }
    // exact zeros on the base row: κ(z₀, ·) = 0
    for c in 0..cols {
        factor[(z0, c)] = 0.0;
    }

    Ok(EmpiricalEmbedding {
        anchors: sample,
        base_point_index,
        gram,
        factor,
        eig_floor: floor,
        min_eigenvalue,
        negative_type_warning,
    })
}
