//! Dose-response estimators: outcome regression (OR), inverse probability
//! weighting (IPW), doubly robust (DR) and cross-fitted doubly robust (CF).
//!
//! Every estimator returns ϑ̂_t ∈ H on a grid of treatment levels, together
//! with pointwise standard errors taken from the empirical variance of the
//! per-observation contributions.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::embedding::HilbertVector;
use crate::error::{Error, Result};
use crate::kernel::{default_bandwidth, Kernel, KernelFamily};
use crate::nuisance::{fit_gps, fit_outcome, GpsModel, GpsOptions, OutcomeModel, OutcomeOptions};
use crate::rng::substream;

/// Grid points with fewer effective observations than this are flagged.
pub const MIN_EFFECTIVE_SIZE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Or,
    Ipw,
    Dr,
    #[default]
    Cf,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Or => "or",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Dr => "dr",
            EstimatorKind::Cf => "cf",
        }
    }

    pub fn needs_gps(self) -> bool {
        !matches!(self, EstimatorKind::Or)
    }

    pub fn needs_outcome(self) -> bool {
        !matches!(self, EstimatorKind::Ipw)
    }
}

/// Kernel bandwidth: a fixed value or the undersmoothing rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) => Ok(Bandwidth::Fixed(h)),
            Raw::Int(h) => Ok(Bandwidth::Fixed(h as f64)),
            Raw::Str(s) if s == "auto" => Ok(Bandwidth::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "bandwidth must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub h: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            h: Bandwidth::Auto,
        }
    }
}

impl KernelSpec {
    pub fn resolve(&self, data: &ObservationSet) -> Result<Kernel> {
        let h = match self.h {
            Bandwidth::Auto => default_bandwidth(data.treatment())?,
            Bandwidth::Fixed(h) => h,
        };
        Kernel::new(self.family, h)
    }
}

/// Full description of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub gps: GpsOptions,
    pub outcome: OutcomeOptions,
    pub kernel: KernelSpec,
    /// Number of cross-fitting folds L.
    pub folds: usize,
    /// Evaluate the correction term's γ̂ at the observed T_i instead of t.
    pub corrector_at_observed_t: bool,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Cf,
            gps: GpsOptions::default(),
            outcome: OutcomeOptions::default(),
            kernel: KernelSpec::default(),
            folds: 5,
            corrector_at_observed_t: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// GPS evaluations raised to the positivity floor.
    pub trimmed: usize,
    /// Σ_i k((T_i − t)/h) / k(0) per grid point.
    pub effective_sample_size: Vec<f64>,
    /// Grid indices with effective size below [`MIN_EFFECTIVE_SIZE`].
    pub low_support: Vec<usize>,
    /// Grid indices where every kernel weight vanished (IPW undefined).
    pub zero_weight: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponseEstimate {
    pub estimator: EstimatorKind,
    pub t_grid: Vec<f64>,
    pub theta: Vec<HilbertVector>,
    /// Per grid point, per coordinate.
    pub pointwise_se: Vec<Vec<f64>>,
    pub bias_proxy: Option<Vec<HilbertVector>>,
    /// Kernel bandwidth, absent for OR.
    pub bandwidth: Option<f64>,
    pub kernel_family: Option<KernelFamily>,
    pub n: usize,
    pub diagnostics: Diagnostics,
}

impl DoseResponseEstimate {
    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(HilbertVector::is_finite)
    }

    pub fn kernel(&self) -> Option<Kernel> {
        Some(Kernel {
            family: self.kernel_family?,
            bandwidth: self.bandwidth?,
        })
    }
}

/// Random balanced partition of 0..n into L folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

pub fn make_fold_plan(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {folds} outside [2, {n}]"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, 0xF01D));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % folds;
    }
    Ok(FoldPlan {
        folds,
        assignments,
        seed,
    })
}

/// Nuisance models and which one serves each observation.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    pub gps: Vec<Option<GpsModel>>,
    pub outcome: Vec<Option<OutcomeModel>>,
    /// `assignment[i]` indexes the models used for observation i.
    pub assignment: Vec<usize>,
}

impl NuisanceSet {
    /// One pair of models serving every observation.
    pub fn full(n: usize, gps: Option<GpsModel>, outcome: Option<OutcomeModel>) -> Self {
        NuisanceSet {
            gps: vec![gps],
            outcome: vec![outcome],
            assignment: vec![0; n],
        }
    }

    pub fn groups(&self) -> usize {
        self.gps.len()
    }

    pub fn has_gps(&self) -> bool {
        self.gps.iter().all(Option::is_some)
    }

    pub fn has_outcome(&self) -> bool {
        self.outcome.iter().all(Option::is_some)
    }

    pub fn trimmed(&self) -> usize {
        self.gps.iter().flatten().map(GpsModel::trimmed_count).sum()
    }
}

/// Fits the requested nuisances on the full data.
pub fn fit_full_nuisances(
    data: &ObservationSet,
    spec: &EstimatorSpec,
    gps: bool,
    outcome: bool,
) -> Result<NuisanceSet> {
    let g = if gps {
        Some(fit_gps(data, &spec.gps)?)
    } else {
        None
    };
    let o = if outcome {
        Some(fit_outcome(data, &spec.outcome)?)
    } else {
        None
    };
    Ok(NuisanceSet::full(data.n(), g, o))
}

/// Fits γ̂⁽ˡ⁾ and f̂⁽ˡ⁾ on the complement of each fold.
pub fn fit_cross_fitted(
    data: &ObservationSet,
    plan: &FoldPlan,
    gps: &GpsOptions,
    outcome: &OutcomeOptions,
) -> Result<NuisanceSet> {
    if plan.assignments.len() != data.n() {
        return Err(Error::DimensionMismatch(
            "fold plan does not match data size".into(),
        ));
    }
    let fitted: Vec<Result<(GpsModel, OutcomeModel)>> = (0..plan.folds)
        .into_par_iter()
        .map(|l| {
            let train = data.subset(&plan.complement(l));
            let wrap = |e: Error| Error::Fold {
                fold: l,
                source: Box::new(e),
            };
            let g = fit_gps(&train, gps).map_err(wrap)?;
            let o = fit_outcome(&train, outcome).map_err(wrap)?;
            Ok((g, o))
        })
        .collect();
    let mut gs = Vec::with_capacity(plan.folds);
    let mut os = Vec::with_capacity(plan.folds);
    for r in fitted {
        let (g, o) = r?;
        gs.push(Some(g));
        os.push(Some(o));
    }
    Ok(NuisanceSet {
        gps: gs,
        outcome: os,
        assignment: plan.assignments.clone(),
    })
}

fn mean_and_se(contrib: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = contrib.len() as f64;
    let mut mean = vec![0.0; m];
    for c in contrib {
        for (a, v) in mean.iter_mut().zip(c) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= n;
    }
    let mut var = vec![0.0; m];
    for c in contrib {
        for j in 0..m {
            let d = c[j] - mean[j];
            var[j] += d * d;
        }
    }
    let se = if contrib.len() > 1 {
        var.iter().map(|v| (v / (n - 1.0) / n).sqrt()).collect()
    } else {
        vec![0.0; m]
    };
    (mean, se)
}

fn effective_sizes(
    data: &ObservationSet,
    kernel: &Kernel,
    t_grid: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let k0 = kernel.family.profile(0.0);
    let ess: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            data.treatment()
                .iter()
                .map(|&ti| kernel.unscaled(ti - t))
                .sum::<f64>()
                / k0
        })
        .collect();
    let low = (0..t_grid.len())
        .filter(|&g| ess[g] < MIN_EFFECTIVE_SIZE)
        .collect();
    (ess, low)
}

/// f̂(t | X_i) for every observation (rows) and grid point (columns).
fn gps_matrix(data: &ObservationSet, nuisances: &NuisanceSet, t_grid: &[f64]) -> Vec<Vec<f64>> {
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let g = nuisances.gps[nuisances.assignment[i]]
                .as_ref()
                .expect("gps present");
            g.evaluate_many(t_grid, data.x(i))
        })
        .collect()
}

/// ϑ̂ coordinates, pointwise se and zero-weight flag at one t.
type PointEstimate = (Vec<f64>, Vec<f64>, bool);

/// Assembles an estimate of the given kind from already-fitted nuisances.
///
/// For DR and CF the contribution of observation i at level t is
/// γ̂(t, X_i) + K_h(T_i − t) / f̂(t | X_i) · [V_i − γ̂(s, X_i)], with s = t,
/// or s = T_i when `corrector_at_observed_t` is set, using the models that
/// `nuisances.assignment[i]` points to. Contributions are averaged over all
/// n observations.
pub fn estimate_with_nuisances(
    data: &ObservationSet,
    nuisances: &NuisanceSet,
    kind: EstimatorKind,
    kernel: Option<&Kernel>,
    t_grid: &[f64],
    corrector_at_observed_t: bool,
) -> Result<DoseResponseEstimate> {
    if nuisances.assignment.len() != data.n() {
        return Err(Error::DimensionMismatch(
            "nuisance assignment does not match data size".into(),
        ));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty treatment grid".into()));
    }
    if kind.needs_gps() && !nuisances.has_gps() {
        return Err(Error::InvalidArgument(format!(
            "{} needs a propensity model",
            kind.name()
        )));
    }
    if kind.needs_outcome() && !nuisances.has_outcome() {
        return Err(Error::InvalidArgument(format!(
            "{} needs an outcome model",
            kind.name()
        )));
    }
    if let Some(o) = nuisances.outcome.iter().flatten().next() {
        if o.grid_len() != data.grid_len() {
            return Err(Error::DimensionMismatch(
                "outcome model grid differs from data grid".into(),
            ));
        }
    }
    let kernel = match kind {
        EstimatorKind::Or => None,
        _ => Some(
            *kernel
                .ok_or_else(|| Error::InvalidArgument(format!("{} needs a kernel", kind.name())))?,
        ),
    };
    let n = data.n();
    let m = data.grid_len();
    let grid_kind = data.grid_kind();
    let trimmed_before = nuisances.trimmed();

    let dens = if kind.needs_gps() {
        Some(gps_matrix(data, nuisances, t_grid))
    } else {
        None
    };
    let observed_gamma: Option<Vec<HilbertVector>> =
        if corrector_at_observed_t && matches!(kind, EstimatorKind::Dr | EstimatorKind::Cf) {
            Some(
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let o = nuisances.outcome[nuisances.assignment[i]]
                            .as_ref()
                            .expect("outcome present");
                        o.evaluate(data.treatment()[i], data.x(i))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

    let per_point: Vec<Result<PointEstimate>> = t_grid
        .par_iter()
        .enumerate()
        .map(|(g, &t)| {
            let slices = if kind.needs_outcome() {
                nuisances
                    .outcome
                    .iter()
                    .map(|o| o.as_ref().expect("outcome present").at_treatment(t))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let mut contrib: Vec<Vec<f64>> = Vec::with_capacity(n);
            match kind {
                EstimatorKind::Or => {
                    for i in 0..n {
                        contrib.push(
                            slices[nuisances.assignment[i]]
                                .evaluate(data.x(i))
                                .into_values(),
                        );
                    }
                }
                EstimatorKind::Ipw => {
                    let k = kernel.as_ref().expect("kernel");
                    let dens = dens.as_ref().expect("gps");
                    let w: Vec<f64> = (0..n)
                        .map(|i| k.weight(data.treatment()[i] - t) / dens[i][g])
                        .collect();
                    let total: f64 = w.iter().sum();
                    if !(total > 0.0) {
                        return Ok((vec![f64::NAN; m], vec![f64::NAN; m], true));
                    }
                    let mut theta = vec![0.0; m];
                    for i in 0..n {
                        let wi = w[i] / total;
                        if wi != 0.0 {
                            for (a, v) in theta.iter_mut().zip(data.outcomes()[i].values()) {
                                *a += wi * v;
                            }
                        }
                    }
                    // linearization of the ratio estimator
                    let mean_w = total / n as f64;
                    for i in 0..n {
                        let s = w[i] / mean_w;
                        contrib.push(
                            data.outcomes()[i]
                                .values()
                                .iter()
                                .zip(&theta)
                                .map(|(v, th)| s * (v - th))
                                .collect(),
                        );
                    }
                    let (_, se) = mean_and_se(&contrib, m);
                    return Ok((theta, se, false));
                }
                EstimatorKind::Dr | EstimatorKind::Cf => {
                    let k = kernel.as_ref().expect("kernel");
                    let dens = dens.as_ref().expect("gps");
                    for i in 0..n {
                        let plug = slices[nuisances.assignment[i]].evaluate(data.x(i));
                        let w = k.weight(data.treatment()[i] - t) / dens[i][g];
                        let base = match &observed_gamma {
                            Some(og) => &og[i],
                            None => &plug,
                        };
                        let row: Vec<f64> = plug
                            .values()
                            .iter()
                            .zip(data.outcomes()[i].values())
                            .zip(base.values())
                            .map(|((p, v), b)| p + w * (v - b))
                            .collect();
                        contrib.push(row);
                    }
                }
            }
            let (theta, se) = mean_and_se(&contrib, m);
            Ok((theta, se, false))
        })
        .collect();

    let mut theta = Vec::with_capacity(t_grid.len());
    let mut pointwise_se = Vec::with_capacity(t_grid.len());
    let mut zero_weight = Vec::new();
    for (g, r) in per_point.into_iter().enumerate() {
        let (th, se, zero) = r?;
        if zero {
            zero_weight.push(g);
        }
        theta.push(HilbertVector::new(th, grid_kind)?);
        pointwise_se.push(se);
    }
    let (effective_sample_size, low_support) = match &kernel {
        Some(k) => effective_sizes(data, k, t_grid),
        None => (vec![n as f64; t_grid.len()], Vec::new()),
    };
    Ok(DoseResponseEstimate {
        estimator: kind,
        t_grid: t_grid.to_vec(),
        theta,
        pointwise_se,
        bias_proxy: None,
        bandwidth: kernel.map(|k| k.bandwidth),
        kernel_family: kernel.map(|k| k.family),
        n,
        diagnostics: Diagnostics {
            trimmed: nuisances.trimmed() - trimmed_before,
            effective_sample_size,
            low_support,
            zero_weight,
        },
    })
}

/// ϑ̂_t = n⁻¹ Σ γ̂(t, X_i).
pub fn estimate_or(
    data: &ObservationSet,
    outcome: &OutcomeModel,
    t_grid: &[f64],
) -> Result<DoseResponseEstimate> {
    let set = NuisanceSet::full(data.n(), None, Some(outcome.clone()));
    estimate_with_nuisances(data, &set, EstimatorKind::Or, None, t_grid, false)
}

/// Self-normalized kernel IPW: Σ w_i V_i / Σ w_i with w_i = K_h(T_i − t) / f̂(t | X_i).
pub fn estimate_ipw(
    data: &ObservationSet,
    gps: &GpsModel,
    kernel: &Kernel,
    t_grid: &[f64],
) -> Result<DoseResponseEstimate> {
    let set = NuisanceSet::full(data.n(), Some(gps.clone()), None);
    estimate_with_nuisances(data, &set, EstimatorKind::Ipw, Some(kernel), t_grid, false)
}

/// Doubly robust estimator with both nuisances fitted on the same data.
pub fn estimate_dr(
    data: &ObservationSet,
    gps: &GpsModel,
    outcome: &OutcomeModel,
    kernel: &Kernel,
    t_grid: &[f64],
    corrector_at_observed_t: bool,
) -> Result<DoseResponseEstimate> {
    let set = NuisanceSet::full(data.n(), Some(gps.clone()), Some(outcome.clone()));
    estimate_with_nuisances(
        data,
        &set,
        EstimatorKind::Dr,
        Some(kernel),
        t_grid,
        corrector_at_observed_t,
    )
}

/// Cross-fitted doubly robust estimator.
pub fn estimate_cf(
    data: &ObservationSet,
    plan: &FoldPlan,
    gps: &GpsOptions,
    outcome: &OutcomeOptions,
    kernel: &Kernel,
    t_grid: &[f64],
    corrector_at_observed_t: bool,
) -> Result<DoseResponseEstimate> {
    let set = fit_cross_fitted(data, plan, gps, outcome)?;
    estimate_with_nuisances(
        data,
        &set,
        EstimatorKind::Cf,
        Some(kernel),
        t_grid,
        corrector_at_observed_t,
    )
}

/// An estimate together with the nuisances and kernel that produced it.
#[derive(Debug, Clone)]
pub struct FittedEstimate {
    pub estimate: DoseResponseEstimate,
    pub nuisances: NuisanceSet,
    pub kernel: Option<Kernel>,
    pub fold_plan: Option<FoldPlan>,
}

/// Fits nuisances per `spec` and assembles the estimate. `seed` drives the
/// cross-fitting partition.
pub fn run_estimator(
    data: &ObservationSet,
    spec: &EstimatorSpec,
    t_grid: &[f64],
    seed: u64,
) -> Result<FittedEstimate> {
    let kernel = match spec.kind {
        EstimatorKind::Or => None,
        _ => Some(spec.kernel.resolve(data)?),
    };
    let (nuisances, fold_plan) = match spec.kind {
        EstimatorKind::Cf => {
            let plan = make_fold_plan(data.n(), spec.folds, seed)?;
            (
                fit_cross_fitted(data, &plan, &spec.gps, &spec.outcome)?,
                Some(plan),
            )
        }
        kind => (
            fit_full_nuisances(data, spec, kind.needs_gps(), kind.needs_outcome())?,
            None,
        ),
    };
    let estimate = estimate_with_nuisances(
        data,
        &nuisances,
        spec.kind,
        kernel.as_ref(),
        t_grid,
        spec.corrector_at_observed_t,
    )?;
    Ok(FittedEstimate {
        estimate,
        nuisances,
        kernel,
        fold_plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::GridKind;
    use crate::nuisance::{GpsKind, OutcomeKind};
    use crate::stats::std_normal;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn dataset(n: usize, seed: u64, noise: f64) -> ObservationSet {
        let mut rng = substream(seed, 1);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![std_normal(&mut rng), rng.random_range(-1.0..1.0)])
            .collect();
        let ts: Vec<f64> = xs
            .iter()
            .map(|x| 0.4 * x[0] + 0.5 * std_normal(&mut rng))
            .collect();
        let vs = ts
            .iter()
            .zip(&xs)
            .map(|(t, x)| {
                let c = 1.0 + t - 0.5 * x[0] + 0.2 * t * x[1] + noise * std_normal(&mut rng);
                HilbertVector::new(vec![c - 1.0, c, c + 0.5], GridKind::ProbabilityGrid).unwrap()
            })
            .collect();
        ObservationSet::new(xs, ts, vs).unwrap()
    }

    fn constant_data(n: usize, c: f64) -> ObservationSet {
        let d = dataset(n, 3, 0.0);
        let outs = vec![HilbertVector::constant(c, 3, GridKind::ProbabilityGrid); n];
        ObservationSet::new(d.covariates().to_vec(), d.treatment().to_vec(), outs).unwrap()
    }

    #[test]
    fn fold_plans() {
        let p = make_fold_plan(10, 2, 1).unwrap();
        assert_eq!(p.sizes(), vec![5, 5]);
        let mut all: Vec<usize> = p.members(0).into_iter().chain(p.members(1)).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let mut s = make_fold_plan(7, 3, 9).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
        assert_eq!(
            make_fold_plan(50, 5, 4).unwrap(),
            make_fold_plan(50, 5, 4).unwrap()
        );
        assert!(make_fold_plan(5, 1, 0).is_err());
        assert!(make_fold_plan(5, 6, 0).is_err());
    }

    #[test]
    fn constant_outcomes_give_constant_estimates() {
        let d = constant_data(80, 2.5);
        let grid = [-0.5, 0.0, 0.5];
        let o = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let g = fit_gps(&d, &GpsOptions::default()).unwrap();
        let k = Kernel::gaussian(0.3).unwrap();
        let ests = [
            estimate_or(&d, &o, &grid).unwrap(),
            estimate_ipw(&d, &g, &k, &grid).unwrap(),
            estimate_dr(&d, &g, &o, &k, &grid, false).unwrap(),
            estimate_cf(
                &d,
                &make_fold_plan(80, 4, 2).unwrap(),
                &GpsOptions::default(),
                &OutcomeOptions::default(),
                &k,
                &grid,
                false,
            )
            .unwrap(),
        ];
        for e in &ests {
            for th in &e.theta {
                for v in th.values() {
                    assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn or_with_single_observation() {
        let d = dataset(30, 4, 0.1);
        let o = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let one = d.subset(&[7]);
        let e = estimate_or(&one, &o, &[0.3]).unwrap();
        assert_eq!(e.theta[0], o.evaluate(0.3, d.x(7)).unwrap());
    }

    #[test]
    fn ipw_single_observation_returns_its_outcome() {
        let d = dataset(30, 5, 0.1);
        let g = fit_gps(&d, &GpsOptions::default()).unwrap();
        let one = d.subset(&[3]);
        let e = estimate_ipw(
            &one,
            &g,
            &Kernel::gaussian(0.2).unwrap(),
            &[one.treatment()[0]],
        )
        .unwrap();
        assert_abs_diff_eq!(
            e.theta[0].distance(&one.outcomes()[0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ipw_zero_weight_is_reported() {
        let d = dataset(30, 6, 0.1);
        let g = fit_gps(&d, &GpsOptions::default()).unwrap();
        let k = Kernel::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        let e = estimate_ipw(&d, &g, &k, &[0.0, 50.0]).unwrap();
        assert_eq!(e.diagnostics.zero_weight, vec![1]);
        assert!(!e.theta[1].is_finite());
        assert!(e.diagnostics.low_support.contains(&1));
    }

    /// Exact γ̂ with the correction evaluated at the observed treatment
    /// makes every correction term vanish.
    #[test]
    fn dr_equals_or_when_outcome_model_is_exact() {
        let d = dataset(200, 7, 0.0);
        let o = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let g = fit_gps(&d, &GpsOptions::default()).unwrap();
        let k = Kernel::gaussian(0.2).unwrap();
        let grid = [-0.4, 0.1, 0.6];
        let or = estimate_or(&d, &o, &grid).unwrap();
        let dr = estimate_dr(&d, &g, &o, &k, &grid, true).unwrap();
        for (a, b) in or.theta.iter().zip(&dr.theta) {
            assert_abs_diff_eq!(a.distance(b).unwrap(), 0.0, epsilon = 1e-10);
        }
        // literal form: exact when every T_i equals t
        let t0 = 0.25;
        let same_t = ObservationSet::new(
            d.covariates().to_vec(),
            vec![t0; d.n()],
            (0..d.n())
                .map(|i| o.evaluate(t0, d.x(i)).unwrap())
                .collect(),
        )
        .unwrap();
        let g = GpsModel::linear_gaussian(vec![0.0, 0.0, 0.0], 1.0, 1e-3).unwrap();
        let or = estimate_or(&same_t, &o, &[t0]).unwrap();
        let dr = estimate_dr(&same_t, &g, &o, &k, &[t0], false).unwrap();
        assert_abs_diff_eq!(
            or.theta[0].distance(&dr.theta[0]).unwrap(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn cf_with_full_data_models_reproduces_dr() {
        let d = dataset(150, 8, 0.3);
        let o = fit_outcome(&d, &OutcomeOptions::default()).unwrap();
        let g = fit_gps(&d, &GpsOptions::default()).unwrap();
        let k = Kernel::gaussian(0.25).unwrap();
        let grid = [-0.5, 0.0, 0.5];
        let dr = estimate_dr(&d, &g, &o, &k, &grid, false).unwrap();
        for folds in [2, 3, 7] {
            let plan = make_fold_plan(d.n(), folds, 5).unwrap();
            let set = NuisanceSet {
                gps: vec![Some(g.clone()); folds],
                outcome: vec![Some(o.clone()); folds],
                assignment: plan.assignments.clone(),
            };
            let cf = estimate_with_nuisances(&d, &set, EstimatorKind::Cf, Some(&k), &grid, false)
                .unwrap();
            for (a, b) in cf.theta.iter().zip(&dr.theta) {
                assert_abs_diff_eq!(a.distance(b).unwrap(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn estimators_are_location_equivariant() {
        let d = dataset(120, 9, 0.4);
        let shift = HilbertVector::new(vec![0.7, -1.2, 3.0], GridKind::ProbabilityGrid).unwrap();
        let ds = d.shifted(&shift).unwrap();
        let grid = [-0.3, 0.2];
        for kind in [
            EstimatorKind::Or,
            EstimatorKind::Ipw,
            EstimatorKind::Dr,
            EstimatorKind::Cf,
        ] {
            let spec = EstimatorSpec {
                kind,
                folds: 3,
                ..Default::default()
            };
            let a = run_estimator(&d, &spec, &grid, 11).unwrap().estimate;
            let b = run_estimator(&ds, &spec, &grid, 11).unwrap().estimate;
            for (x, y) in a.theta.iter().zip(&b.theta) {
                let moved = x.add(&shift).unwrap();
                assert_abs_diff_eq!(moved.distance(y).unwrap(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fold_failure_names_the_fold() {
        let d = dataset(8, 10, 0.1);
        let spec = EstimatorSpec {
            kind: EstimatorKind::Cf,
            folds: 4,
            ..Default::default()
        };
        match run_estimator(&d, &spec, &[0.0], 1) {
            Err(Error::Fold { .. }) => {}
            other => panic!("expected fold error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_are_consistent() {
        let d = dataset(100, 11, 0.2);
        let spec = EstimatorSpec {
            kind: EstimatorKind::Dr,
            ..Default::default()
        };
        let e = run_estimator(&d, &spec, &[-3.0, 0.0], 1).unwrap().estimate;
        let ess = &e.diagnostics.effective_sample_size;
        assert!(ess[1] > 0.0 && ess[1] <= 100.0);
        assert!(ess[0] < ess[1]);
        assert!(e.pointwise_se.iter().flatten().all(|s| *s >= 0.0));
        assert_eq!(e.theta.len(), 2);
    }

    #[test]
    fn constant_misspecified_models_are_supported() {
        let d = dataset(100, 12, 0.2);
        let spec = EstimatorSpec {
            kind: EstimatorKind::Dr,
            gps: GpsOptions {
                kind: GpsKind::Constant,
                constant_density: 0.5,
                ..Default::default()
            },
            outcome: OutcomeOptions {
                kind: OutcomeKind::Constant,
                ..Default::default()
            },
            ..Default::default()
        };
        let e = run_estimator(&d, &spec, &[0.0], 1).unwrap();
        let k = e.kernel.unwrap();
        // γ̂ ≡ 0 and f̂ ≡ 0.5: ϑ̂ = 2 n⁻¹ Σ K_h(T_i) V_i
        let expect: f64 = (0..d.n())
            .map(|i| 2.0 * k.weight(d.treatment()[i]) * d.outcomes()[i].values()[1])
            .sum::<f64>()
            / d.n() as f64;
        assert_abs_diff_eq!(e.estimate.theta[0].values()[1], expect, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_config_parses() {
        #[derive(Deserialize)]
        struct W {
            h: Bandwidth,
        }
        let a: W = toml::from_str("h = \"auto\"").unwrap();
        assert_eq!(a.h, Bandwidth::Auto);
        let b: W = toml::from_str("h = 0.25").unwrap();
        assert_eq!(b.h, Bandwidth::Fixed(0.25));
        assert!(toml::from_str::<W>("h = \"wide\"").is_err());
    }
}
