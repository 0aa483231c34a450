//! Nuisance estimators: the generalized propensity score f(t | x) and the
//! embedded outcome regression γ(t, x) = E[V | T = t, X = x].

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::embedding::{GridKind, HilbertVector};
use crate::error::{Error, Result};
use crate::kernel::reference_bandwidth;
use crate::linalg::least_squares;
use crate::stats::{normal_pdf, INV_SQRT_2PI};

/// Covariate index of X₃ in the simulation design; its square enters the
/// model-A outcome surface.
pub const MODEL_A_SQUARED_COLUMN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpsKind {
    /// Normal density around an OLS fit of T on (1, X).
    #[default]
    LinearGaussian,
    /// Kernel conditional density estimate.
    KernelConditional,
    /// f(t | x) ≡ `constant_density`; a deliberately wrong model.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsOptions {
    pub kind: GpsKind,
    /// Positivity trim: evaluations never fall below this value.
    pub floor: f64,
    /// Kernel-conditional bandwidths: treatment first, then one per used
    /// covariate. `None` selects normal-reference rules.
    pub bandwidths: Option<Vec<f64>>,
    /// Covariate columns entering the model; `None` uses all.
    pub covariates: Option<Vec<usize>>,
    pub constant_density: f64,
}

impl Default for GpsOptions {
    fn default() -> Self {
        GpsOptions {
            kind: GpsKind::LinearGaussian,
            floor: 1e-3,
            bandwidths: None,
            covariates: None,
            constant_density: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GpsParams {
    LinearGaussian {
        coef: Vec<f64>,
        sigma: f64,
    },
    KernelConditional {
        t_bandwidth: f64,
        x_bandwidths: Vec<f64>,
        discrete: Vec<bool>,
        train_t: Vec<f64>,
        train_x: Vec<Vec<f64>>,
    },
    Constant {
        density: f64,
    },
}

/// Fitted generalized propensity score.
#[derive(Debug)]
pub struct GpsModel {
    kind: GpsKind,
    floor: f64,
    columns: Vec<usize>,
    n_train: usize,
    params: GpsParams,
    trimmed: AtomicUsize,
}

impl Clone for GpsModel {
    fn clone(&self) -> Self {
        GpsModel {
            kind: self.kind,
            floor: self.floor,
            columns: self.columns.clone(),
            n_train: self.n_train,
            params: self.params.clone(),
            trimmed: AtomicUsize::new(self.trimmed.load(Ordering::Relaxed)),
        }
    }
}

fn select_columns(p: usize, requested: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    match requested {
        None => Ok((0..p).collect()),
        Some(cols) => {
            if let Some(c) = cols.iter().find(|&&c| c >= p) {
                return Err(Error::Config(format!(
                    "covariate column {c} out of range (p = {p})"
                )));
            }
            Ok(cols.clone())
        }
    }
}

pub fn fit_gps(data: &ObservationSet, options: &GpsOptions) -> Result<GpsModel> {
    if !(options.floor > 0.0) {
        return Err(Error::Config("gps.floor must be positive".into()));
    }
    let columns = select_columns(data.p(), &options.covariates)?;
    let n = data.n();
    let params = match options.kind {
        GpsKind::LinearGaussian => {
            let k = columns.len() + 1;
            if n < k + 1 {
                return Err(Error::Numerical(format!(
                    "linear Gaussian GPS needs n >= {} observations, got {n}",
                    k + 1
                )));
            }
            let design = DMatrix::from_fn(n, k, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    data.x(i)[columns[j - 1]]
                }
            });
            let response = DMatrix::from_column_slice(n, 1, data.treatment());
            let fit = least_squares(&design, &response)?;
            let fitted = &design * &fit.coef;
            let rss: f64 = (0..n)
                .map(|i| (data.treatment()[i] - fitted[(i, 0)]).powi(2))
                .sum();
            let sigma = (rss / (n - k) as f64).sqrt();
            if !(sigma > 0.0) {
                return Err(Error::Numerical(
                    "treatment is an exact linear function of covariates".into(),
                ));
            }
            GpsParams::LinearGaussian {
                coef: fit.coef.column(0).iter().copied().collect(),
                sigma,
            }
        }
        GpsKind::KernelConditional => {
            let (t_bandwidth, x_bandwidths) = match &options.bandwidths {
                Some(b) => {
                    if b.len() != columns.len() + 1 {
                        return Err(Error::Config(format!(
                            "gps.bandwidths needs {} entries (treatment + covariates)",
                            columns.len() + 1
                        )));
                    }
                    if b.iter().any(|v| !(*v > 0.0)) {
                        return Err(Error::Config("gps.bandwidths must be positive".into()));
                    }
                    (b[0], b[1..].to_vec())
                }
                None => {
                    let continuous = columns.iter().filter(|&&c| !data.discrete()[c]).count();
                    let tb = reference_bandwidth(data.treatment(), 1);
                    let xb = columns
                        .iter()
                        .map(|&c| {
                            let col: Vec<f64> = (0..n).map(|i| data.x(i)[c]).collect();
                            reference_bandwidth(&col, continuous)
                        })
                        .collect();
                    (tb, xb)
                }
            };
            GpsParams::KernelConditional {
                t_bandwidth,
                x_bandwidths,
                discrete: columns.iter().map(|&c| data.discrete()[c]).collect(),
                train_t: data.treatment().to_vec(),
                train_x: (0..n)
                    .map(|i| columns.iter().map(|&c| data.x(i)[c]).collect())
                    .collect(),
            }
        }
        GpsKind::Constant => {
            if !(options.constant_density > 0.0) {
                return Err(Error::Config(
                    "gps.constant_density must be positive".into(),
                ));
            }
            GpsParams::Constant {
                density: options.constant_density,
            }
        }
    };
    Ok(GpsModel {
        kind: options.kind,
        floor: options.floor,
        columns,
        n_train: n,
        params,
        trimmed: AtomicUsize::new(0),
    })
}

impl GpsModel {
    pub fn kind(&self) -> GpsKind {
        self.kind
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Residual scale of the linear Gaussian model.
    pub fn sigma(&self) -> Option<f64> {
        match &self.params {
            GpsParams::LinearGaussian { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    /// Linear Gaussian model with given intercept-first coefficients.
    pub fn linear_gaussian(coef: Vec<f64>, sigma: f64, floor: f64) -> Result<Self> {
        if coef.is_empty() || !(sigma > 0.0) || !(floor > 0.0) {
            return Err(Error::InvalidArgument(
                "invalid linear Gaussian parameters".into(),
            ));
        }
        Ok(GpsModel {
            kind: GpsKind::LinearGaussian,
            floor,
            columns: (0..coef.len() - 1).collect(),
            n_train: 0,
            params: GpsParams::LinearGaussian { coef, sigma },
            trimmed: AtomicUsize::new(0),
        })
    }

    /// Number of evaluations that hit the positivity floor.
    pub fn trimmed_count(&self) -> usize {
        self.trimmed.load(Ordering::Relaxed)
    }

    /// Conditional mean of T for the linear Gaussian model.
    pub fn conditional_mean(&self, x: &[f64]) -> Option<f64> {
        match &self.params {
            GpsParams::LinearGaussian { coef, .. } => Some(
                coef[0]
                    + self
                        .columns
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| coef[j + 1] * x[c])
                        .sum::<f64>(),
            ),
            _ => None,
        }
    }

    fn log_covariate_weights(&self, x: &[f64]) -> Option<Vec<f64>> {
        let GpsParams::KernelConditional {
            x_bandwidths,
            discrete,
            train_x,
            ..
        } = &self.params
        else {
            return None;
        };
        Some(
            train_x
                .iter()
                .map(|row| {
                    let mut lw = 0.0;
                    for (j, &c) in self.columns.iter().enumerate() {
                        let d = x[c] - row[j];
                        if discrete[j] {
                            if d != 0.0 {
                                return f64::NEG_INFINITY;
                            }
                        } else {
                            let z = d / x_bandwidths[j];
                            lw -= 0.5 * z * z;
                        }
                    }
                    lw
                })
                .collect(),
        )
    }

    /// Unfloored density estimates at several treatment values for one x.
    pub fn density_many(&self, ts: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        match &self.params {
            GpsParams::LinearGaussian { sigma, .. } => {
                let mu = self.conditional_mean(x).expect("linear model");
                Ok(ts
                    .iter()
                    .map(|t| normal_pdf((t - mu) / sigma) / sigma)
                    .collect())
            }
            GpsParams::Constant { density } => Ok(vec![*density; ts.len()]),
            GpsParams::KernelConditional {
                t_bandwidth,
                train_t,
                ..
            } => {
                let lw = self.log_covariate_weights(x).expect("kernel model");
                let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::ZeroWeight(
                        "no training covariate matches the query".into(),
                    ));
                }
                let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = w.iter().sum();
                Ok(ts
                    .iter()
                    .map(|&t| {
                        let s: f64 = w
                            .iter()
                            .zip(train_t)
                            .filter(|(wi, _)| **wi > 0.0)
                            .map(|(wi, ti)| {
                                let z = (ti - t) / t_bandwidth;
                                wi * INV_SQRT_2PI * (-0.5 * z * z).exp()
                            })
                            .sum();
                        s / (total * t_bandwidth)
                    })
                    .collect())
            }
        }
    }

    /// Unfloored density f̂(t | x).
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.density_many(&[t], x)?[0])
    }

    /// max(f̂(t | x), floor); zero-weight queries return the floor.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> f64 {
        self.evaluate_many(&[t], x)[0]
    }

    pub fn evaluate_many(&self, ts: &[f64], x: &[f64]) -> Vec<f64> {
        match self.density_many(ts, x) {
            Ok(d) => d
                .into_iter()
                .map(|v| {
                    if v < self.floor || !v.is_finite() {
                        self.trimmed.fetch_add(1, Ordering::Relaxed);
                        self.floor
                    } else {
                        v
                    }
                })
                .collect(),
            Err(_) => {
                self.trimmed.fetch_add(ts.len(), Ordering::Relaxed);
                vec![self.floor; ts.len()]
            }
        }
    }

    /// Mean log of the floored density at the observed pairs.
    pub fn mean_log_density(&self, data: &ObservationSet) -> f64 {
        let total: f64 = (0..data.n())
            .map(|i| self.evaluate(data.treatment()[i], data.x(i)).ln())
            .sum();
        total / data.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Coordinate-wise least squares on b(t, x) = (1, x, t, t², t³, t·x).
    #[default]
    GlobalBasis,
    /// Kernel-weighted linear regression on (1, x, T − t) at each t.
    LocalLinear,
    /// γ(t, x) ≡ `constant_value` in every coordinate; a deliberately wrong
    /// model.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeOptions {
    pub kind: OutcomeKind,
    /// Local-linear bandwidth; `None` selects 1.06 · sd(T) · n^(-1/5).
    pub bandwidth: Option<f64>,
    /// Adds x₃² and t·x₃² columns to the global basis.
    pub model_a_basis: bool,
    /// Covariate columns entering the model; `None` uses all.
    pub covariates: Option<Vec<usize>>,
    pub constant_value: f64,
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        OutcomeOptions {
            kind: OutcomeKind::GlobalBasis,
            bandwidth: None,
            model_a_basis: false,
            covariates: None,
            constant_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Basis {
    columns: Vec<usize>,
    squared_column: Option<usize>,
}

impl Basis {
    fn dim(&self) -> usize {
        1 + 2 * self.columns.len() + 3 + 2 * usize::from(self.squared_column.is_some())
    }

    fn features(&self, t: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend(self.columns.iter().map(|&c| x[c]));
        out.extend([t, t * t, t * t * t]);
        out.extend(self.columns.iter().map(|&c| t * x[c]));
        if let Some(c) = self.squared_column {
            out.push(x[c] * x[c]);
            out.push(t * x[c] * x[c]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum OutcomeParams {
    GlobalBasis {
        basis: Basis,
        coef: DMatrix<f64>,
    },
    LocalLinear {
        columns: Vec<usize>,
        bandwidth: f64,
        train_t: Vec<f64>,
        train_x: Vec<Vec<f64>>,
        train_v: DMatrix<f64>,
    },
    Constant {
        value: f64,
    },
}

/// Fitted embedded outcome regression γ̂(t, x).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    kind: OutcomeKind,
    grid_len: usize,
    grid_kind: GridKind,
    n_train: usize,
    params: OutcomeParams,
}

fn outcome_matrix(data: &ObservationSet) -> DMatrix<f64> {
    let m = data.grid_len();
    DMatrix::from_fn(data.n(), m, |i, j| data.outcomes()[i].values()[j])
}

fn basis_for(data: &ObservationSet, options: &OutcomeOptions) -> Result<Basis> {
    let columns = select_columns(data.p(), &options.covariates)?;
    let squared_column = if options.model_a_basis {
        if data.p() <= MODEL_A_SQUARED_COLUMN {
            return Err(Error::Config(
                "outcome.model_a_basis needs at least 3 covariates".into(),
            ));
        }
        Some(MODEL_A_SQUARED_COLUMN)
    } else {
        None
    };
    Ok(Basis {
        columns,
        squared_column,
    })
}

pub fn fit_outcome(data: &ObservationSet, options: &OutcomeOptions) -> Result<OutcomeModel> {
    let n = data.n();
    let params = match options.kind {
        OutcomeKind::GlobalBasis => {
            let basis = basis_for(data, options)?;
            let dim = basis.dim();
            if n <= dim {
                return Err(Error::Numerical(format!(
                    "global basis of dimension {dim} needs more than {n} observations"
                )));
            }
            let mut design = DMatrix::zeros(n, dim);
            let mut row = Vec::with_capacity(dim);
            for i in 0..n {
                basis.features(data.treatment()[i], data.x(i), &mut row);
                for (j, v) in row.iter().enumerate() {
                    design[(i, j)] = *v;
                }
            }
            let fit = least_squares(&design, &outcome_matrix(data))?;
            OutcomeParams::GlobalBasis {
                basis,
                coef: fit.coef,
            }
        }
        OutcomeKind::LocalLinear => {
            let columns = select_columns(data.p(), &options.covariates)?;
            let bandwidth = match options.bandwidth {
                Some(h) if h > 0.0 && h.is_finite() => h,
                Some(h) => {
                    return Err(Error::InvalidArgument(format!(
                        "outcome bandwidth must be positive, got {h}"
                    )))
                }
                None => reference_bandwidth(data.treatment(), 1),
            };
            OutcomeParams::LocalLinear {
                bandwidth,
                train_t: data.treatment().to_vec(),
                train_x: (0..n)
                    .map(|i| columns.iter().map(|&c| data.x(i)[c]).collect())
                    .collect(),
                train_v: outcome_matrix(data),
                columns,
            }
        }
        OutcomeKind::Constant => OutcomeParams::Constant {
            value: options.constant_value,
        },
    };
    Ok(OutcomeModel {
        kind: options.kind,
        grid_len: data.grid_len(),
        grid_kind: data.grid_kind(),
        n_train: n,
        params,
    })
}

/// Solves the kernel-weighted local linear problem at treatment `t`,
/// skipping training row `exclude`. Returns (1 + p) × M coefficients.
fn local_linear_at(
    t: f64,
    bandwidth: f64,
    train_t: &[f64],
    train_x: &[Vec<f64>],
    train_v: &DMatrix<f64>,
    exclude: Option<usize>,
) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = (0..train_t.len())
        .filter(|&i| Some(i) != exclude)
        .filter(|&i| ((train_t[i] - t) / bandwidth).abs() <= 5.0)
        .collect();
    if rows.is_empty() {
        return Err(Error::ZeroWeight(format!(
            "no observations within 5 bandwidths of t = {t}"
        )));
    }
    let p = train_x[0].len();
    let k = p + 2;
    let m = train_v.ncols();
    let mut design = DMatrix::zeros(rows.len(), k);
    let mut response = DMatrix::zeros(rows.len(), m);
    for (r, &i) in rows.iter().enumerate() {
        let z = (train_t[i] - t) / bandwidth;
        let sw = (-0.25 * z * z).exp();
        design[(r, 0)] = sw;
        for j in 0..p {
            design[(r, 1 + j)] = sw * train_x[i][j];
        }
        design[(r, p + 1)] = sw * (train_t[i] - t);
        for j in 0..m {
            response[(r, j)] = sw * train_v[(i, j)];
        }
    }
    let fit = least_squares(&design, &response)?;
    Ok(fit.coef.rows(0, p + 1).into_owned())
}

/// γ̂(t, ·) with the treatment fixed; cheap to evaluate at many x.
#[derive(Debug, Clone)]
pub enum TreatmentSlice<'a> {
    Global {
        model: &'a OutcomeModel,
        t: f64,
    },
    Linear {
        columns: &'a [usize],
        coef: DMatrix<f64>,
        kind: GridKind,
    },
    Constant {
        value: f64,
        len: usize,
        kind: GridKind,
    },
}

impl TreatmentSlice<'_> {
    pub fn evaluate(&self, x: &[f64]) -> HilbertVector {
        match self {
            TreatmentSlice::Global { model, t } => model.evaluate_global(*t, x),
            TreatmentSlice::Linear {
                columns,
                coef,
                kind,
            } => {
                let m = coef.ncols();
                let mut out = coef.row(0).iter().copied().collect::<Vec<f64>>();
                for (j, &c) in columns.iter().enumerate() {
                    let xv = x[c];
                    for (o, b) in out.iter_mut().zip(coef.row(j + 1).iter()) {
                        *o += xv * b;
                    }
                }
                debug_assert_eq!(out.len(), m);
                HilbertVector::new(out, *kind).expect("grid length >= 2")
            }
            TreatmentSlice::Constant { value, len, kind } => {
                HilbertVector::constant(*value, *len, *kind)
            }
        }
    }
}

impl OutcomeModel {
    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    /// Global-basis model with explicit coefficients (basis dim × M).
    pub fn global_basis(
        p: usize,
        model_a_basis: bool,
        coef: DMatrix<f64>,
        grid_kind: GridKind,
    ) -> Result<Self> {
        let basis = Basis {
            columns: (0..p).collect(),
            squared_column: model_a_basis.then_some(MODEL_A_SQUARED_COLUMN),
        };
        if coef.nrows() != basis.dim() || coef.ncols() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "coefficients must be {} x M, got {} x {}",
                basis.dim(),
                coef.nrows(),
                coef.ncols()
            )));
        }
        Ok(OutcomeModel {
            kind: OutcomeKind::GlobalBasis,
            grid_len: coef.ncols(),
            grid_kind,
            n_train: 0,
            params: OutcomeParams::GlobalBasis { basis, coef },
        })
    }

    /// Coefficient matrix of a global-basis model.
    pub fn coefficients(&self) -> Option<&DMatrix<f64>> {
        match &self.params {
            OutcomeParams::GlobalBasis { coef, .. } => Some(coef),
            _ => None,
        }
    }

    fn evaluate_global(&self, t: f64, x: &[f64]) -> HilbertVector {
        let OutcomeParams::GlobalBasis { basis, coef } = &self.params else {
            unreachable!("global evaluation on a non-global model")
        };
        let mut feats = Vec::with_capacity(basis.dim());
        basis.features(t, x, &mut feats);
        let mut out = vec![0.0; coef.ncols()];
        for (r, f) in feats.iter().enumerate() {
            if *f != 0.0 {
                for (o, b) in out.iter_mut().zip(coef.row(r).iter()) {
                    *o += f * b;
                }
            }
        }
        HilbertVector::new(out, self.grid_kind).expect("grid length >= 2")
    }

    /// Fixes the treatment at `t`.
    pub fn at_treatment(&self, t: f64) -> Result<TreatmentSlice<'_>> {
        match &self.params {
            OutcomeParams::GlobalBasis { .. } => Ok(TreatmentSlice::Global { model: self, t }),
            OutcomeParams::LocalLinear {
                columns,
                bandwidth,
                train_t,
                train_x,
                train_v,
            } => {
                let coef = local_linear_at(t, *bandwidth, train_t, train_x, train_v, None)?;
                Ok(TreatmentSlice::Linear {
                    columns,
                    coef,
                    kind: self.grid_kind,
                })
            }
            OutcomeParams::Constant { value } => Ok(TreatmentSlice::Constant {
                value: *value,
                len: self.grid_len,
                kind: self.grid_kind,
            }),
        }
    }

    /// γ̂(t, x), not projected onto the image of ρ.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<HilbertVector> {
        Ok(self.at_treatment(t)?.evaluate(x))
    }
}

/// Leave-one-out predictions γ̂₍₋ᵢ₎(T_i, X_i) for every training row.
///
/// Global-basis fits use the exact hat-matrix identity; local-linear fits
/// are re-solved without row i.
pub fn leave_one_out_outcome(
    data: &ObservationSet,
    options: &OutcomeOptions,
) -> Result<Vec<HilbertVector>> {
    let n = data.n();
    let kind = data.grid_kind();
    match options.kind {
        OutcomeKind::GlobalBasis => {
            let basis = basis_for(data, options)?;
            let dim = basis.dim();
            if n <= dim + 1 {
                return Err(Error::Numerical(
                    "too few observations for leave-one-out".into(),
                ));
            }
            let mut design = DMatrix::zeros(n, dim);
            let mut row = Vec::with_capacity(dim);
            for i in 0..n {
                basis.features(data.treatment()[i], data.x(i), &mut row);
                for (j, v) in row.iter().enumerate() {
                    design[(i, j)] = *v;
                }
            }
            let v = outcome_matrix(data);
            let fit = least_squares(&design, &v)?;
            let fitted = &design * &fit.coef;
            (0..n)
                .map(|i| {
                    let h = fit.leverage[i];
                    if h >= 1.0 - 1e-12 {
                        return Err(Error::Numerical(format!("observation {i} has leverage 1")));
                    }
                    let vals = (0..v.ncols())
                        .map(|j| {
                            let e = v[(i, j)] - fitted[(i, j)];
                            v[(i, j)] - e / (1.0 - h)
                        })
                        .collect();
                    HilbertVector::new(vals, kind)
                })
                .collect()
        }
        OutcomeKind::LocalLinear => {
            let model = fit_outcome(data, options)?;
            let OutcomeParams::LocalLinear {
                columns,
                bandwidth,
                train_t,
                train_x,
                train_v,
            } = &model.params
            else {
                unreachable!()
            };
            (0..n)
                .map(|i| {
                    let coef = local_linear_at(
                        train_t[i],
                        *bandwidth,
                        train_t,
                        train_x,
                        train_v,
                        Some(i),
                    )?;
                    let slice = TreatmentSlice::Linear {
                        columns,
                        coef,
                        kind,
                    };
                    Ok(slice.evaluate(data.x(i)))
                })
                .collect()
        }
        OutcomeKind::Constant => Ok(vec![
            HilbertVector::constant(
                options.constant_value,
                data.grid_len(),
                kind
            );
            n
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::std_normal;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy(n: usize, seed: u64, f: impl Fn(f64, &[f64]) -> f64) -> ObservationSet {
        let mut rng = crate::rng::substream(seed, 0);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![std_normal(&mut rng), rng.random_range(-1.0..1.0)])
            .collect();
        let ts: Vec<f64> = xs
            .iter()
            .map(|x| 0.5 * x[0] + std_normal(&mut rng) * 0.7f64)
            .collect();
        let vs = ts
            .iter()
            .zip(&xs)
            .map(|(t, x)| {
                let c = f(*t, x);
                HilbertVector::new(vec![c - 1.0, c, c + 1.0], GridKind::ProbabilityGrid).unwrap()
            })
            .collect();
        ObservationSet::new(xs, ts, vs).unwrap()
    }

    #[test]
    fn linear_gaussian_peak_and_symmetry() {
        let g = GpsModel::linear_gaussian(vec![0.0, 0.0], 1.0, 1e-3).unwrap();
        assert_abs_diff_eq!(g.evaluate(0.0, &[3.0]), 0.398_942_280_4, epsilon = 1e-4);
        let g = GpsModel::linear_gaussian(vec![0.5, 2.0], 0.8, 1e-3).unwrap();
        let mu = g.conditional_mean(&[1.0]).unwrap();
        assert_abs_diff_eq!(
            g.evaluate(mu + 0.3, &[1.0]),
            g.evaluate(mu - 0.3, &[1.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn floor_is_enforced_and_counted() {
        let g = GpsModel::linear_gaussian(vec![0.0, 0.0], 1.0, 1e-3).unwrap();
        assert_eq!(g.trimmed_count(), 0);
        assert_eq!(g.evaluate(10.0, &[0.0]), 1e-3);
        assert_eq!(g.trimmed_count(), 1);
        assert!(g.evaluate(0.0, &[0.0]) > 1e-3);
        assert_eq!(g.trimmed_count(), 1);
    }

    #[test]
    fn kernel_conditional_integrates_to_one() {
        let d = toy(300, 3, |t, _| t);
        let opts = GpsOptions {
            kind: GpsKind::KernelConditional,
            ..Default::default()
        };
        let g = fit_gps(&d, &opts).unwrap();
        let ts: Vec<f64> = (0..=4000).map(|k| -10.0 + k as f64 * 0.005).collect();
        for x in [[0.0, 0.0], [1.0, -0.5]] {
            let dens = g.density_many(&ts, &x).unwrap();
            let integral: f64 = dens.windows(2).map(|w| 0.5 * (w[0] + w[1]) * 0.005).sum();
            assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
        }
    }

    #[test]
    fn kernel_conditional_mode_at_constant_treatment() {
        let mut d = toy(50, 4, |t, _| t);
        let xs = d.covariates().to_vec();
        let outs = d.outcomes().to_vec();
        d = ObservationSet::new(xs, vec![1.5; 50], outs).unwrap();
        let opts = GpsOptions {
            kind: GpsKind::KernelConditional,
            bandwidths: Some(vec![0.1, 1.0, 1.0]),
            ..Default::default()
        };
        let g = fit_gps(&d, &opts).unwrap();
        let x = d.x(0).to_vec();
        let at = g.evaluate(1.5, &x);
        assert!(at >= g.evaluate(1.5 + 1.0, &x));
        assert!(at >= g.evaluate(1.5 - 1.0, &x));
    }

    #[test]
    fn discrete_mismatch_gives_zero_weight() {
        let d = toy(20, 5, |t, _| t).with_discrete(&[1]).unwrap();
        let opts = GpsOptions {
            kind: GpsKind::KernelConditional,
            ..Default::default()
        };
        let g = fit_gps(&d, &opts).unwrap();
        assert!(matches!(
            g.density(0.0, &[0.0, 99.0]),
            Err(Error::ZeroWeight(_))
        ));
        assert_eq!(g.evaluate(0.0, &[0.0, 99.0]), 1e-3);
    }

    #[test]
    fn linear_gps_needs_enough_rows() {
        let d = toy(3, 6, |t, _| t);
        assert!(fit_gps(&d, &GpsOptions::default()).is_err());
    }

    #[test]
    fn constant_outcome_is_recovered() {
        let d = toy(40, 7, |_, _| 2.0);
        let m = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        for (t, x) in [(0.0, [0.0, 0.0]), (1.3, [-2.0, 0.5])] {
            let v = m.evaluate(t, &x).unwrap();
            assert_abs_diff_eq!(v.values()[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(v.values()[2], 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn intercept_only_coefficients() {
        let mut coef = DMatrix::zeros(1 + 2 * 2 + 3, 3);
        coef[(0, 0)] = 0.5;
        coef[(0, 1)] = 1.5;
        coef[(0, 2)] = 2.5;
        let m = OutcomeModel::global_basis(2, false, coef, GridKind::ProbabilityGrid).unwrap();
        assert_eq!(
            m.evaluate(3.0, &[1.0, 2.0]).unwrap().values(),
            &[0.5, 1.5, 2.5]
        );
    }

    /// γ(t,x) + γ(t,x') − 2γ(t,(x+x')/2) vanishes for a basis linear in x at
    /// fixed t (the t·x interaction is also linear in x).
    #[test]
    fn basis_is_affine_in_x_at_fixed_t() {
        let d = toy(200, 8, |t, x| 1.0 + t * x[0] - x[1] + 0.3 * t * t);
        let m = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let (x, xp) = ([0.3, -0.7], [1.9, 0.4]);
        let mid = [(x[0] + xp[0]) / 2.0, (x[1] + xp[1]) / 2.0];
        for t in [-1.0, 0.5, 2.0] {
            let a = m.evaluate(t, &x).unwrap();
            let b = m.evaluate(t, &xp).unwrap();
            let c = m.evaluate(t, &mid).unwrap();
            for j in 0..3 {
                assert_abs_diff_eq!(
                    a.values()[j] + b.values()[j] - 2.0 * c.values()[j],
                    0.0,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn global_fit_is_least_squares_optimum() {
        let d = toy(120, 9, |t, x| (t * x[1]).sin() + x[0]);
        let m = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let sse = |model: &OutcomeModel| -> f64 {
            (0..d.n())
                .map(|i| {
                    let g = model.evaluate(d.treatment()[i], d.x(i)).unwrap();
                    d.outcomes()[i].sub(&g).unwrap().norm_sq()
                })
                .sum()
        };
        let base = sse(&m);
        let coef = m.coefficients().unwrap().clone();
        for r in 0..coef.nrows() {
            for delta in [1e-3, -1e-3] {
                let mut c = coef.clone();
                for j in 0..c.ncols() {
                    c[(r, j)] += delta;
                }
                let pert =
                    OutcomeModel::global_basis(2, false, c, GridKind::ProbabilityGrid).unwrap();
                assert!(sse(&pert) >= base);
            }
        }
    }

    #[test]
    fn local_linear_without_neighbors_fails() {
        let d = toy(60, 10, |t, _| t);
        let opts = OutcomeOptions {
            kind: OutcomeKind::LocalLinear,
            bandwidth: Some(0.05),
            ..Default::default()
        };
        let m = fit_outcome(&d, &opts).unwrap();
        assert!(matches!(
            m.evaluate(100.0, &[0.0, 0.0]),
            Err(Error::ZeroWeight(_))
        ));
        let bad = OutcomeOptions {
            kind: OutcomeKind::LocalLinear,
            bandwidth: Some(0.0),
            ..Default::default()
        };
        assert!(fit_outcome(&d, &bad).is_err());
    }

    #[test]
    fn local_linear_reproduces_linear_truth() {
        let d = toy(300, 11, |t, x| 0.5 + 2.0 * t - x[0] + 0.5 * x[1]);
        let opts = OutcomeOptions {
            kind: OutcomeKind::LocalLinear,
            bandwidth: Some(0.4),
            ..Default::default()
        };
        let m = fit_outcome(&d, &opts).unwrap();
        let v = m.evaluate(0.3, &[0.2, -0.4]).unwrap();
        assert_abs_diff_eq!(v.values()[1], 0.5 + 0.6 - 0.2 - 0.2, epsilon = 1e-9);
    }

    #[test]
    fn hat_matrix_loo_matches_refit() {
        let d = toy(40, 12, |t, x| (t + x[0]).cos());
        let opts = OutcomeOptions::default();
        let loo = leave_one_out_outcome(&d, &opts).unwrap();
        for i in [0usize, 17, 39] {
            let keep: Vec<usize> = (0..d.n()).filter(|&k| k != i).collect();
            let m = fit_outcome(&d.subset(&keep), &opts).unwrap();
            let direct = m.evaluate(d.treatment()[i], d.x(i)).unwrap();
            assert_abs_diff_eq!(direct.distance(&loo[i]).unwrap(), 0.0, epsilon = 1e-8);
        }
        let ll = OutcomeOptions {
            kind: OutcomeKind::LocalLinear,
            bandwidth: Some(0.8),
            ..Default::default()
        };
        let loo = leave_one_out_outcome(&d, &ll).unwrap();
        let keep: Vec<usize> = (1..d.n()).collect();
        let m = fit_outcome(&d.subset(&keep), &ll).unwrap();
        let direct = m.evaluate(d.treatment()[0], d.x(0)).unwrap();
        assert_abs_diff_eq!(direct.distance(&loo[0]).unwrap(), 0.0, epsilon = 1e-8);
    }
}
