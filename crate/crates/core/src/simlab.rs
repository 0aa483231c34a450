//! Simulation laboratory: covariate, treatment and outcome generators,
//! truth oracles, the Monte Carlo runner and its metrics.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::embedding::{project_to_image, GridKind, HilbertVector, ObjectKind, QuantileFunction};
use crate::error::{Error, Result};
use crate::estimators::{run_estimator, EstimatorKind, EstimatorSpec, FittedEstimate};
use crate::inference::{asymptotic_band, BandOptions};
use crate::nuisance::{leave_one_out_outcome, GpsKind, GpsOptions, OutcomeKind, OutcomeOptions};
use crate::rng::{child_seed, compensated_sum, substream};
use crate::stats::{linspace, normal_quantile, probability_grid, quantile, std_normal};

/// Coefficients of the cardinal function r(X) = −0.8 + aᵀX.
pub const CARDINAL: [f64; 6] = [0.1, 0.1, -0.1, 0.2, 0.1, 0.1];
/// Lower clamp for the argument of the scenario-3 logarithm.
pub const LOG_CLAMP: f64 = 0.05;
pub const COVARIATES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeModelKind {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub scenario: u8,
    pub model: OutcomeModelKind,
    pub n: usize,
    pub sigma: f64,
    /// Number of probability grid points M.
    pub grid_len: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            scenario: 1,
            model: OutcomeModelKind::A,
            n: 1000,
            sigma: 1.0,
            grid_len: 51,
            seed: 1,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(Error::Config(format!(
                "scenario must be 1, 2 or 3, got {}",
                self.scenario
            )));
        }
        if self.n < 10 {
            return Err(Error::Config(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        if self.grid_len < 2 {
            return Err(Error::Config("grid_len must be at least 2".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

pub fn cardinal(x: &[f64]) -> f64 {
    -0.8 + CARDINAL.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
}

/// n × 6 covariates: four standard normals, a uniform sign times 2, U(−3, 3).
pub fn gen_covariates(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, 1);
    (0..n)
        .map(|_| {
            let mut row = Vec::with_capacity(COVARIATES);
            for _ in 0..4 {
                row.push(std_normal(&mut rng));
            }
            row.push(if rng.random::<bool>() { 2.0 } else { -2.0 });
            row.push(rng.random_range(-3.0..3.0));
            row
        })
        .collect()
}

pub fn gen_treatment(x: &[Vec<f64>], scenario: u8, seed: u64) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|r| r.len() != COVARIATES) {
        return Err(Error::DimensionMismatch(format!(
            "covariate row {i} does not have 6 columns"
        )));
    }
    let mut rng = substream(seed, 2);
    let chi2 = ChiSquared::new(2.0).expect("valid degrees of freedom");
    x.iter()
        .map(|row| {
            let r = cardinal(row);
            match scenario {
                1 => Ok(0.9 * r + 1.0 + 0.5 * std_normal(&mut rng)),
                2 => {
                    let z = std_normal(&mut rng);
                    let c: f64 = chi2.sample(&mut rng);
                    Ok(0.5 * r + 0.2 + z / (c / 2.0).sqrt())
                }
                3 => Ok(0.7 * r.max(LOG_CLAMP).ln() + 1.3 + std_normal(&mut rng)),
                s => Err(Error::InvalidArgument(format!("unknown scenario {s}"))),
            }
        })
        .collect()
}

/// μ = γ(t, x) of the outcome generators.
pub fn gamma(t: f64, x: &[f64]) -> f64 {
    1.0 - (0.2 * x[0] + 0.2 * x[1] + 0.3 * x[2] - 0.1 * x[3] + 0.2 * x[4] + 0.2 * x[5])
        - t * (0.1 - 0.1 * x[0] + 0.1 * x[3] + 0.1 * x[4] + 0.1 * x[2] * x[2])
        + 0.1 * t.powi(3)
}

/// 𝒯_k(x) = x − sin(kπx)/|kπ|.
pub fn transport(k: i32, x: f64) -> f64 {
    let kp = k as f64 * PI;
    x - (kp * x).sin() / kp.abs()
}

pub fn gen_outcome(
    x: &[Vec<f64>],
    t: &[f64],
    model: OutcomeModelKind,
    sigma: f64,
    m: usize,
    seed: u64,
) -> Result<Vec<QuantileFunction>> {
    if x.len() != t.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows, {} treatments",
            x.len(),
            t.len()
        )));
    }
    if m < 2 {
        return Err(Error::InvalidArgument(
            "grid needs at least 2 points".into(),
        ));
    }
    let z: Vec<f64> = probability_grid(m)
        .into_iter()
        .map(normal_quantile)
        .collect();
    let mut rng = substream(seed, 3);
    x.iter()
        .zip(t)
        .map(|(row, &ti)| {
            let mu = gamma(ti, row);
            let values: Vec<f64> = match model {
                OutcomeModelKind::A => z.iter().map(|zj| mu + sigma * zj).collect(),
                OutcomeModelKind::B => {
                    let k = [-2, -1, 1, 2][rng.random_range(0..4)];
                    z.iter().map(|zj| transport(k, mu + sigma * zj)).collect()
                }
            };
            QuantileFunction::new(values)
        })
        .collect()
}

/// Draws one data set from the design.
pub fn generate(dgp: &DgpSpec) -> Result<ObservationSet> {
    dgp.validate()?;
    let x = gen_covariates(dgp.n, child_seed(dgp.seed, 1));
    let t = gen_treatment(&x, dgp.scenario, child_seed(dgp.seed, 2))?;
    let y = gen_outcome(
        &x,
        &t,
        dgp.model,
        dgp.sigma,
        dgp.grid_len,
        child_seed(dgp.seed, 3),
    )?;
    let v = y
        .into_iter()
        .map(|q| HilbertVector::new(q.values().to_vec(), GridKind::ProbabilityGrid))
        .collect::<Result<_>>()?;
    ObservationSet::new(x, t, v)?.with_discrete(&[4])
}

/// ρ(β_t) for model A: 1 − 0.2t + 0.1t³ + σΦ⁻¹(p_j).
pub fn true_theta(t: f64, model: OutcomeModelKind, sigma: f64, m: usize) -> Result<HilbertVector> {
    if model != OutcomeModelKind::A {
        return Err(Error::InvalidArgument(
            "model B has no closed-form truth; use the Monte Carlo oracle".into(),
        ));
    }
    let c = 1.0 - 0.2 * t + 0.1 * t.powi(3);
    HilbertVector::new(
        probability_grid(m)
            .into_iter()
            .map(|p| c + sigma * normal_quantile(p))
            .collect(),
        GridKind::ProbabilityGrid,
    )
}

/// Monte Carlo truth: average of ρ(Y_t) over `draws` independent (X, k).
pub fn oracle_theta(
    t: f64,
    model: OutcomeModelKind,
    sigma: f64,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<HilbertVector> {
    if draws == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs at least one draw".into(),
        ));
    }
    let x = gen_covariates(draws, child_seed(seed, 1));
    let ts = vec![t; draws];
    let y = gen_outcome(&x, &ts, model, sigma, m, child_seed(seed, 3))?;
    let values = (0..m)
        .map(|j| compensated_sum(y.iter().map(|q| q.values()[j])) / draws as f64)
        .collect();
    HilbertVector::new(values, GridKind::ProbabilityGrid)
}

/// Truth on a grid: analytic for model A, Monte Carlo for model B.
pub fn truth_curve(
    t_grid: &[f64],
    dgp: &DgpSpec,
    oracle_draws: usize,
    oracle_seed: u64,
) -> Result<Vec<HilbertVector>> {
    t_grid
        .par_iter()
        .map(|&t| match dgp.model {
            OutcomeModelKind::A => true_theta(t, dgp.model, dgp.sigma, dgp.grid_len),
            OutcomeModelKind::B => oracle_theta(
                t,
                dgp.model,
                dgp.sigma,
                dgp.grid_len,
                oracle_draws,
                oracle_seed,
            ),
        })
        .collect()
}

/// Population quantiles of T under a scenario, from `draws` simulated units.
pub fn population_treatment_quantiles(
    scenario: u8,
    probs: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let x = gen_covariates(draws, child_seed(seed, 1));
    let t = gen_treatment(&x, scenario, child_seed(seed, 2))?;
    Ok(probs.iter().map(|&p| quantile(&t, p)).collect())
}

pub const POPULATION_DRAWS: usize = 200_000;
pub const POPULATION_SEED: u64 = 20_240_601;

/// 20 equally spaced levels between the population 10% and 90% quantiles of T.
pub fn default_t_grid(scenario: u8) -> Result<Vec<f64>> {
    let q =
        population_treatment_quantiles(scenario, &[0.1, 0.9], POPULATION_DRAWS, POPULATION_SEED)?;
    Ok(linspace(q[0], q[1], 20))
}

/// Population median of T.
pub fn default_coverage_t(scenario: u8) -> Result<f64> {
    Ok(population_treatment_quantiles(scenario, &[0.5], POPULATION_DRAWS, POPULATION_SEED)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mise,
    LooMse,
    Coverage,
    BandWidth,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Mise,
        Metric::LooMse,
        Metric::Coverage,
        Metric::BandWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mise => "mise",
            Metric::LooMse => "loo_mse",
            Metric::Coverage => "coverage",
            Metric::BandWidth => "band_width",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedEstimator {
    pub name: String,
    pub spec: EstimatorSpec,
}

/// The four estimators of the simulation tables. CF uses correctly
/// specified nuisances; OR and IPW use nuisances without covariates.
pub fn table_estimators() -> Vec<NamedEstimator> {
    let correct_outcome = OutcomeOptions {
        model_a_basis: true,
        ..Default::default()
    };
    let blind_outcome = OutcomeOptions {
        covariates: Some(vec![]),
        ..Default::default()
    };
    let blind_gps = GpsOptions {
        covariates: Some(vec![]),
        ..Default::default()
    };
    vec![
        NamedEstimator {
            name: "or".into(),
            spec: EstimatorSpec {
                kind: EstimatorKind::Or,
                outcome: blind_outcome,
                ..Default::default()
            },
        },
        NamedEstimator {
            name: "ipw".into(),
            spec: EstimatorSpec {
                kind: EstimatorKind::Ipw,
                gps: blind_gps,
                ..Default::default()
            },
        },
        NamedEstimator {
            name: "dr".into(),
            spec: EstimatorSpec {
                kind: EstimatorKind::Dr,
                outcome: correct_outcome.clone(),
                ..Default::default()
            },
        },
        NamedEstimator {
            name: "cf".into(),
            spec: EstimatorSpec {
                kind: EstimatorKind::Cf,
                outcome: correct_outcome,
                ..Default::default()
            },
        },
    ]
}

/// Nuisance arms for checking double robustness.
pub fn robustness_estimators() -> Vec<NamedEstimator> {
    let correct_outcome = OutcomeOptions {
        model_a_basis: true,
        ..Default::default()
    };
    let zero_outcome = OutcomeOptions {
        kind: OutcomeKind::Constant,
        constant_value: 0.0,
        ..Default::default()
    };
    let wrong_gps = GpsOptions {
        kind: GpsKind::Constant,
        constant_density: 1.0,
        ..Default::default()
    };
    let arm = |name: &str, kind, gps: GpsOptions, outcome: OutcomeOptions| NamedEstimator {
        name: name.into(),
        spec: EstimatorSpec {
            kind,
            gps,
            outcome,
            ..Default::default()
        },
    };
    vec![
        arm(
            "dr_zero_outcome",
            EstimatorKind::Dr,
            GpsOptions::default(),
            zero_outcome.clone(),
        ),
        arm(
            "dr_wrong_gps",
            EstimatorKind::Dr,
            wrong_gps.clone(),
            correct_outcome.clone(),
        ),
        arm(
            "or_zero_outcome",
            EstimatorKind::Or,
            GpsOptions::default(),
            zero_outcome,
        ),
        arm(
            "ipw_wrong_gps",
            EstimatorKind::Ipw,
            wrong_gps,
            correct_outcome,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub estimators: Vec<NamedEstimator>,
    pub metrics: Vec<Metric>,
    pub replications: usize,
    /// Defaults to [`default_t_grid`].
    pub t_grid: Option<Vec<f64>>,
    pub alpha: f64,
    /// Treatment level for coverage; defaults to the population median of T.
    pub coverage_t: Option<f64>,
    /// Probability-grid index for coverage; defaults to (M − 1)/2.
    pub coverage_index: Option<usize>,
    pub oracle_draws: usize,
    /// Also keep ϑ̂ at these levels in each row.
    pub record_t: Vec<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dgp: DgpSpec::default(),
            estimators: table_estimators(),
            metrics: vec![
                Metric::Mise,
                Metric::LooMse,
                Metric::Coverage,
                Metric::BandWidth,
            ],
            replications: 100,
            t_grid: None,
            alpha: 0.05,
            coverage_t: None,
            coverage_index: None,
            oracle_draws: POPULATION_DRAWS,
            record_t: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub replication: usize,
    pub estimator: String,
    pub mise: Option<f64>,
    pub loo_mse: Option<f64>,
    pub coverage: Option<f64>,
    pub band_width: Option<f64>,
    /// ϑ̂ at each `record_t` level.
    pub recorded: Vec<HilbertVector>,
    pub error: Option<String>,
}

impl McRow {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mise => self.mise,
            Metric::LooMse => self.loo_mse,
            Metric::Coverage => self.coverage,
            Metric::BandWidth => self.band_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimator: String,
    pub metric: Metric,
    pub mean: Option<f64>,
    /// Absent when fewer than two replications contribute.
    pub sd: Option<f64>,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: DgpSpec,
    pub t_grid: Vec<f64>,
    pub coverage_t: f64,
    pub coverage_index: usize,
    pub replications: usize,
    pub rows: Vec<McRow>,
    pub summaries: Vec<McSummary>,
}

impl McReport {
    pub fn summary(&self, estimator: &str, metric: Metric) -> Option<&McSummary> {
        self.summaries
            .iter()
            .find(|s| s.estimator == estimator && s.metric == metric)
    }
}

/// Mean and sd (n − 1 denominator) with compensated sums in slice order.
pub fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let sd = (values.len() > 1).then(|| {
        (compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)).sqrt()
    });
    (Some(mean), sd)
}

pub fn summarize_rows(rows: &[McRow], estimators: &[String], metrics: &[Metric]) -> Vec<McSummary> {
    let mut out = Vec::new();
    for e in estimators {
        let mine: Vec<&McRow> = rows.iter().filter(|r| &r.estimator == e).collect();
        let failures = mine.iter().filter(|r| r.error.is_some()).count();
        for &m in metrics {
            let vals: Vec<f64> = mine
                .iter()
                .filter(|r| r.error.is_none())
                .filter_map(|r| r.metric(m))
                .collect();
            let (mean, sd) = summarize(&vals);
            out.push(McSummary {
                estimator: e.clone(),
                metric: m,
                mean,
                sd,
                count: vals.len(),
                failures,
            });
        }
    }
    out
}

/// Mean over the grid of ‖ϑ̂_t − truth_t‖²_H.
pub fn mise(estimate: &[HilbertVector], truth: &[HilbertVector]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::DimensionMismatch(
            "estimate and truth grids differ".into(),
        ));
    }
    let terms = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| a.distance(b).map(|d| d * d))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(terms) / estimate.len() as f64)
}

/// n⁻¹ Σ d²(Y_i, Ŷ₍ᵢ₎), with predictions pulled back onto quantile functions.
pub fn loo_mse(
    data: &ObservationSet,
    spec: &EstimatorSpec,
    fitted: &FittedEstimate,
) -> Result<f64> {
    let preds = loo_predictions(data, spec, fitted)?;
    let terms = preds
        .iter()
        .zip(data.outcomes())
        .map(|(p, y)| {
            let q = project_to_image(p, ObjectKind::Quantile)?;
            q.distance(y).map(|d| d * d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(terms) / data.n() as f64)
}

fn loo_predictions(
    data: &ObservationSet,
    spec: &EstimatorSpec,
    fitted: &FittedEstimate,
) -> Result<Vec<HilbertVector>> {
    let n = data.n();
    match spec.kind {
        EstimatorKind::Or | EstimatorKind::Dr => leave_one_out_outcome(data, &spec.outcome),
        EstimatorKind::Cf => (0..n)
            .into_par_iter()
            .map(|i| {
                let o = fitted.nuisances.outcome[fitted.nuisances.assignment[i]]
                    .as_ref()
                    .expect("outcome present");
                o.evaluate(data.treatment()[i], data.x(i))
            })
            .collect(),
        EstimatorKind::Ipw => {
            let kernel = fitted
                .kernel
                .ok_or_else(|| Error::InvalidArgument("IPW fit has no kernel".into()))?;
            let gps = fitted.nuisances.gps[0].as_ref().expect("gps present");
            let m = data.grid_len();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let t = data.treatment()[i];
                    let mut acc = vec![0.0; m];
                    let mut total = 0.0;
                    for j in (0..n).filter(|&j| j != i) {
                        let w = kernel.weight(data.treatment()[j] - t);
                        if w == 0.0 {
                            continue;
                        }
                        let w = w / gps.density(t, data.x(j))?.max(gps.floor());
                        total += w;
                        for (a, v) in acc.iter_mut().zip(data.outcomes()[j].values()) {
                            *a += w * v;
                        }
                    }
                    if !(total > 0.0) {
                        return Err(Error::ZeroWeight(format!(
                            "no neighbours for leave-one-out unit {i}"
                        )));
                    }
                    HilbertVector::new(
                        acc.into_iter().map(|a| a / total).collect(),
                        data.grid_kind(),
                    )
                })
                .collect()
        }
    }
}

struct Shared<'a> {
    config: &'a McConfig,
    t_grid: &'a [f64],
    eval_grid: Vec<f64>,
    truth: &'a [HilbertVector],
    coverage_truth: f64,
    coverage_index: usize,
}

/// MISE, LOO MSE, coverage, band width and the recorded estimates.
type Evaluation = (
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Vec<HilbertVector>,
);

fn evaluate_one(
    shared: &Shared<'_>,
    data: &ObservationSet,
    est: &NamedEstimator,
    seed: u64,
) -> Result<Evaluation> {
    let cfg = shared.config;
    let g = shared.t_grid.len();
    let fitted = run_estimator(data, &est.spec, &shared.eval_grid, seed)?;
    let theta = &fitted.estimate.theta;
    if !theta.iter().all(HilbertVector::is_finite) {
        return Err(Error::Numerical("non-finite estimate".into()));
    }
    let wants = |m| cfg.metrics.contains(&m);
    let mise_v = if wants(Metric::Mise) {
        Some(mise(&theta[..g], shared.truth)?)
    } else {
        None
    };
    let loo = if wants(Metric::LooMse) {
        Some(loo_mse(data, &est.spec, &fitted)?)
    } else {
        None
    };
    let (mut cov, mut width) = (None, None);
    if (wants(Metric::Coverage) || wants(Metric::BandWidth)) && fitted.kernel.is_some() {
        let band = asymptotic_band(
            data,
            &fitted.estimate,
            &fitted.nuisances,
            cfg.alpha,
            &BandOptions::default(),
        )?;
        if wants(Metric::Coverage) {
            cov = Some(
                if band.covers(g, shared.coverage_index, shared.coverage_truth) {
                    1.0
                } else {
                    0.0
                },
            );
        }
        if wants(Metric::BandWidth) {
            let w = band.widths();
            width = Some(compensated_sum(w[..g].iter().copied()) / g as f64);
        }
    }
    let recorded = theta[g + 1..].to_vec();
    Ok((mise_v, loo, cov, width, recorded))
}

/// Runs every estimator on `replications` independent data sets.
///
/// Replication r draws its data from seed child_seed(dgp.seed, r); estimator
/// failures are recorded in the row and excluded from the summaries.
pub fn run_monte_carlo(config: &McConfig) -> Result<McReport> {
    config.dgp.validate()?;
    if config.replications == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    if config.estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {}",
            config.alpha
        )));
    }
    let dgp = config.dgp;
    let t_grid = match &config.t_grid {
        Some(g) if g.is_empty() => return Err(Error::Config("t_grid is empty".into())),
        Some(g) => g.clone(),
        None => default_t_grid(dgp.scenario)?,
    };
    let coverage_t = match config.coverage_t {
        Some(t) => t,
        None => default_coverage_t(dgp.scenario)?,
    };
    let coverage_index = config.coverage_index.unwrap_or((dgp.grid_len - 1) / 2);
    if coverage_index >= dgp.grid_len {
        return Err(Error::Config(format!(
            "coverage_index {coverage_index} outside grid of {}",
            dgp.grid_len
        )));
    }
    let oracle_seed = child_seed(dgp.seed, 0x0AC1E);
    let truth = truth_curve(&t_grid, &dgp, config.oracle_draws, oracle_seed)?;
    let coverage_truth = truth_curve(&[coverage_t], &dgp, config.oracle_draws, oracle_seed)?[0]
        .values()[coverage_index];
    let mut eval_grid = t_grid.clone();
    eval_grid.push(coverage_t);
    eval_grid.extend(&config.record_t);
    let shared = Shared {
        config,
        t_grid: &t_grid,
        eval_grid,
        truth: &truth,
        coverage_truth,
        coverage_index,
    };

    let per_rep: Vec<Vec<McRow>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = child_seed(dgp.seed, r as u64);
            let data = generate(&DgpSpec {
                seed: rep_seed,
                ..dgp
            });
            config
                .estimators
                .iter()
                .enumerate()
                .map(|(e, est)| {
                    let outcome = data
                        .as_ref()
                        .map_err(|err| Error::Data(err.to_string()))
                        .and_then(|d| {
                            evaluate_one(&shared, d, est, child_seed(rep_seed, 1000 + e as u64))
                        });
                    match outcome {
                        Ok((mise, loo_mse, coverage, band_width, recorded)) => McRow {
                            replication: r,
                            estimator: est.name.clone(),
                            mise,
                            loo_mse,
                            coverage,
                            band_width,
                            recorded,
                            error: None,
                        },
                        Err(err) => McRow {
                            replication: r,
                            estimator: est.name.clone(),
                            mise: None,
                            loo_mse: None,
                            coverage: None,
                            band_width: None,
                            recorded: Vec::new(),
                            error: Some(err.to_string()),
                        },
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<McRow> = per_rep.into_iter().flatten().collect();
    let names: Vec<String> = config.estimators.iter().map(|e| e.name.clone()).collect();
    let summaries = summarize_rows(&rows, &names, &config.metrics);
    Ok(McReport {
        dgp,
        t_grid,
        coverage_t,
        coverage_index,
        replications: config.replications,
        rows,
        summaries,
    })
}
