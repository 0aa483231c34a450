//! Pointwise asymptotic bands and HulC intervals for effect maps.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::embedding::HilbertVector;
use crate::error::{Error, Result};
use crate::estimators::{run_estimator, DoseResponseEstimate, EstimatorSpec, NuisanceSet};
use crate::kernel::Kernel;
use crate::rng::{child_seed, substream};
use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HulcOptions {
    /// Assumed maximum median bias Δ.
    pub delta_bias: f64,
    /// Largest admissible number of subsamples.
    pub cap: usize,
}

impl Default for HulcOptions {
    fn default() -> Self {
        HulcOptions {
            delta_bias: 0.0,
            cap: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandOptions {
    /// Attach the plug-in h²B̂_t bias proxy to the band.
    pub bias_diagnostic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub hulc: HulcOptions,
    pub band: BandOptions,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            alpha: 0.05,
            hulc: HulcOptions::default(),
            band: BandOptions::default(),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticBand {
    pub t_grid: Vec<f64>,
    pub center: Vec<HilbertVector>,
    pub lower: Vec<HilbertVector>,
    pub upper: Vec<HilbertVector>,
    pub alpha: f64,
    /// Σ̂_t diagonal, per grid point and coordinate.
    pub sigma_hat: Vec<Vec<f64>>,
    /// Standard error used for the envelopes.
    pub se: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub bias_proxy: Option<Vec<HilbertVector>>,
}

impl AsymptoticBand {
    /// ‖upper_t − lower_t‖_H per grid point.
    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.distance(u).expect("same grid"))
            .collect()
    }

    pub fn mean_width(&self) -> f64 {
        let w = self.widths();
        w.iter().sum::<f64>() / w.len() as f64
    }

    /// Whether `truth` lies inside the band at grid index `g`, coordinate `j`.
    pub fn covers(&self, g: usize, j: usize, truth: f64) -> bool {
        self.lower[g].values()[j] <= truth && truth <= self.upper[g].values()[j]
    }
}

/// Coordinate-wise band ϑ̂_t ± z_{1−α/2}·se around a kernel estimate.
///
/// Σ̂_t,j = (∫k²)·n⁻¹ Σ_i K_h(T_i − t)·r_ij² / f̂(t | X_i)², with r_ij the
/// residual of V_ij against γ̂_j at the observed (T_i, X_i); for estimates
/// without an outcome model r_ij = V_ij − ϑ̂_t,j. The standard error is
/// se² = Σ̂_t,j/(nh) + Var_n(γ̂_j(t, X_i))/n, the second term being the
/// spread of the plug-in average.
pub fn asymptotic_band(
    data: &ObservationSet,
    estimate: &DoseResponseEstimate,
    nuisances: &NuisanceSet,
    alpha: f64,
    options: &BandOptions,
) -> Result<AsymptoticBand> {
    check_alpha(alpha)?;
    let kernel = estimate.kernel().ok_or_else(|| {
        Error::InvalidArgument("estimate carries no bandwidth; bands need h".into())
    })?;
    if !nuisances.has_gps() {
        return Err(Error::InvalidArgument(
            "bands need a propensity model".into(),
        ));
    }
    if nuisances.assignment.len() != data.n() || estimate.n != data.n() {
        return Err(Error::DimensionMismatch(
            "estimate, nuisances and data disagree on n".into(),
        ));
    }
    let n = data.n();
    let nf = n as f64;
    let m = data.grid_len();
    let h = kernel.bandwidth;
    let roughness = kernel.family.roughness();
    let z = normal_quantile(1.0 - alpha / 2.0);
    let with_outcome = nuisances.has_outcome();

    let observed_residual: Option<Vec<Vec<f64>>> = if with_outcome {
        Some(
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let o = nuisances.outcome[nuisances.assignment[i]]
                        .as_ref()
                        .expect("outcome present");
                    let fit = o.evaluate(data.treatment()[i], data.x(i))?;
                    Ok(data.outcomes()[i]
                        .values()
                        .iter()
                        .zip(fit.values())
                        .map(|(v, f)| v - f)
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let per_point: Vec<Result<(Vec<f64>, Vec<f64>)>> = estimate
        .t_grid
        .par_iter()
        .enumerate()
        .map(|(g, &t)| {
            let theta = estimate.theta[g].values();
            let mut sigma = vec![0.0; m];
            for i in 0..n {
                let w = kernel.weight(data.treatment()[i] - t);
                if w == 0.0 {
                    continue;
                }
                let gps = nuisances.gps[nuisances.assignment[i]]
                    .as_ref()
                    .expect("gps present");
                let f = gps.evaluate(t, data.x(i));
                let c = w / (f * f);
                match &observed_residual {
                    Some(r) => {
                        for (s, e) in sigma.iter_mut().zip(&r[i]) {
                            *s += c * e * e;
                        }
                    }
                    None => {
                        for ((s, v), th) in
                            sigma.iter_mut().zip(data.outcomes()[i].values()).zip(theta)
                        {
                            *s += c * (v - th) * (v - th);
                        }
                    }
                }
            }
            for s in &mut sigma {
                *s *= roughness / nf;
            }
            let mut var: Vec<f64> = sigma.iter().map(|s| s / (nf * h)).collect();
            if with_outcome && n > 1 {
                let slices = nuisances
                    .outcome
                    .iter()
                    .map(|o| o.as_ref().expect("outcome present").at_treatment(t))
                    .collect::<Result<Vec<_>>>()?;
                let plug: Vec<HilbertVector> = (0..n)
                    .map(|i| slices[nuisances.assignment[i]].evaluate(data.x(i)))
                    .collect();
                for (j, v) in var.iter_mut().enumerate() {
                    let mean = plug.iter().map(|p| p.values()[j]).sum::<f64>() / nf;
                    let ss = plug
                        .iter()
                        .map(|p| (p.values()[j] - mean).powi(2))
                        .sum::<f64>();
                    *v += ss / (nf - 1.0) / nf;
                }
            }
            Ok((sigma, var.into_iter().map(f64::sqrt).collect()))
        })
        .collect();

    let kind = data.grid_kind();
    let mut sigma_hat = Vec::with_capacity(per_point.len());
    let mut se = Vec::with_capacity(per_point.len());
    let mut lower = Vec::with_capacity(per_point.len());
    let mut upper = Vec::with_capacity(per_point.len());
    for (g, r) in per_point.into_iter().enumerate() {
        let (s, e) = r?;
        let th = estimate.theta[g].values();
        lower.push(HilbertVector::new(
            th.iter().zip(&e).map(|(a, b)| a - z * b).collect(),
            kind,
        )?);
        upper.push(HilbertVector::new(
            th.iter().zip(&e).map(|(a, b)| a + z * b).collect(),
            kind,
        )?);
        sigma_hat.push(s);
        se.push(e);
    }
    let bias_proxy = if options.bias_diagnostic && with_outcome {
        Some(bias_diagnostic(data, nuisances, &kernel, &estimate.t_grid)?)
    } else {
        None
    };
    Ok(AsymptoticBand {
        t_grid: estimate.t_grid.clone(),
        center: estimate.theta.clone(),
        lower,
        upper,
        alpha,
        sigma_hat,
        se,
        bandwidth: h,
        bias_proxy,
    })
}

/// Plug-in smoothing bias h²·μ₂·n⁻¹ Σ_i [½∂²γ̂ + ∂γ̂·∂f̂/f̂](t, X_i), by
/// central finite differences in t.
pub fn bias_diagnostic(
    data: &ObservationSet,
    nuisances: &NuisanceSet,
    kernel: &Kernel,
    t_grid: &[f64],
) -> Result<Vec<HilbertVector>> {
    let n = data.n();
    let m = data.grid_len();
    let h = kernel.bandwidth;
    let mu2 = kernel.family.second_moment();
    let kind = data.grid_kind();
    t_grid
        .iter()
        .map(|&t| {
            let d = 0.25 * h;
            let mut acc = vec![0.0; m];
            let at = |s: f64| -> Result<Vec<_>> {
                nuisances
                    .outcome
                    .iter()
                    .map(|o| o.as_ref().expect("outcome present").at_treatment(s))
                    .collect()
            };
            let (lo, mid, hi) = (at(t - d)?, at(t)?, at(t + d)?);
            for i in 0..n {
                let a = nuisances.assignment[i];
                let x = data.x(i);
                let gps = nuisances.gps[a].as_ref().expect("gps present");
                let f0 = gps.density(t, x)?.max(gps.floor());
                let df = (gps.density(t + d, x)? - gps.density(t - d, x)?) / (2.0 * d);
                let (gl, gm, gh) = (lo[a].evaluate(x), mid[a].evaluate(x), hi[a].evaluate(x));
                for j in 0..m {
                    let (l, c, u) = (gl.values()[j], gm.values()[j], gh.values()[j]);
                    let second = (u - 2.0 * c + l) / (d * d);
                    let first = (u - l) / (2.0 * d);
                    acc[j] += 0.5 * second + first * df / f0;
                }
            }
            HilbertVector::new(
                acc.into_iter()
                    .map(|v| h * h * mu2 * v / n as f64)
                    .collect(),
                kind,
            )
        })
        .collect()
}

/// P(B; Δ) = (½ − Δ)^B + (½ + Δ)^B.
pub fn hulc_miscoverage(b: usize, delta: f64) -> f64 {
    (0.5 - delta).powi(b as i32) + (0.5 + delta).powi(b as i32)
}

/// Smallest B with P(B; Δ) ≤ α and the randomization weight
/// τ = (α − P(B))/(P(B−1) − P(B)).
pub fn hulc_b(alpha: f64, delta_bias: f64, cap: usize) -> Result<(usize, f64)> {
    check_alpha(alpha)?;
    if !(0.0..0.5).contains(&delta_bias) {
        return Err(Error::InvalidArgument(format!(
            "median bias must lie in [0, 0.5), got {delta_bias}"
        )));
    }
    let mut b = 1;
    while hulc_miscoverage(b, delta_bias) > alpha {
        b += 1;
        if b > cap {
            return Err(Error::InvalidArgument(format!(
                "alpha = {alpha} needs more than {cap} subsamples"
            )));
        }
    }
    let p = hulc_miscoverage(b, delta_bias);
    let prev = hulc_miscoverage(b - 1, delta_bias);
    Ok((b, (alpha - p) / (prev - p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HulcInterval {
    pub alpha: f64,
    pub delta_bias: f64,
    pub t: f64,
    pub t_prime: f64,
    pub b: usize,
    pub tau: f64,
    pub u: f64,
    pub b_star: usize,
    /// Δ̂^b = ϑ̂_{b;t} − ϑ̂_{b;t′} for each subsample.
    pub estimates: Vec<HilbertVector>,
    pub lower: HilbertVector,
    pub upper: HilbertVector,
    pub seed: u64,
}

impl HulcInterval {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.lower.values()[j] <= value && value <= self.upper.values()[j]
    }
}

/// HulC interval for the effect map Δ_{t,t′} = ϑ_t − ϑ_{t′}.
#[allow(clippy::too_many_arguments)]
pub fn hulc_interval(
    data: &ObservationSet,
    spec: &EstimatorSpec,
    t: f64,
    t_prime: f64,
    alpha: f64,
    options: &HulcOptions,
    seed: u64,
) -> Result<HulcInterval> {
    let (b, tau) = hulc_b(alpha, options.delta_bias, options.cap)?;
    let mut rng = substream(seed, 0x4C);
    let u: f64 = rng.random();
    let b_star = if u <= tau { b } else { b - 1 };
    let n = data.n();
    if b_star == 0 || n < b_star * 2 {
        return Err(Error::Data(format!(
            "{n} observations cannot form {b_star} subsamples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let chunks: Vec<Vec<usize>> = (0..b_star)
        .map(|k| {
            let lo = k * n / b_star;
            let hi = (k + 1) * n / b_star;
            let mut idx = order[lo..hi].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    let estimates: Vec<Result<HilbertVector>> = chunks
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            let sub = data.subset(idx);
            let est = run_estimator(&sub, spec, &[t, t_prime], child_seed(seed, k as u64 + 1))
                .map_err(|e| Error::Data(format!("subsample {k} of size {}: {e}", idx.len())))?
                .estimate;
            est.theta[0].sub(&est.theta[1])
        })
        .collect();
    let estimates = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let m = data.grid_len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for e in &estimates {
        for (j, v) in e.values().iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite subsample estimate".into()));
    }
    let kind = data.grid_kind();
    Ok(HulcInterval {
        alpha,
        delta_bias: options.delta_bias,
        t,
        t_prime,
        b,
        tau,
        u,
        b_star,
        estimates,
        lower: HilbertVector::new(lo, kind)?,
        upper: HilbertVector::new(hi, kind)?,
        seed,
    })
}
