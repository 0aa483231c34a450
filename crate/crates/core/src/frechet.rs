//! Fréchet means and causal effect maps, computed through the embedding.

use serde::{Deserialize, Serialize};

use crate::embedding::{distance, embed, project_to_image, pull_back, HilbertVector, MetricObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetMeanResult {
    pub mean_embedded: HilbertVector,
    pub mean_object: MetricObject,
    /// n⁻¹ Σ d²(Y_i, mean_object), unweighted.
    pub objective: f64,
}

/// Difference of two embedded dose-response values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectMap {
    pub t_low: f64,
    pub t_high: f64,
    /// ϑ(t_high) − ϑ(t_low).
    pub delta: HilbertVector,
    pub magnitude: f64,
}

/// Average squared distance from `center` to the sample.
pub fn frechet_objective(sample: &[MetricObject], center: &MetricObject) -> Result<f64> {
    let mut total = 0.0;
    for y in sample {
        let d = distance(y, center)?;
        total += d * d;
    }
    Ok(total / sample.len() as f64)
}

pub fn frechet_mean(sample: &[MetricObject]) -> Result<FrechetMeanResult> {
    weighted_frechet_mean(sample, &vec![1.0; sample.len()])
}

/// Projection of Σ w_i ρ(Y_i) / Σ w_i onto the image of ρ, pulled back.
pub fn weighted_frechet_mean(
    sample: &[MetricObject],
    weights: &[f64],
) -> Result<FrechetMeanResult> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument(
            "Fréchet mean of an empty sample".into(),
        ));
    }
    if weights.len() != sample.len() {
        return Err(Error::DimensionMismatch(
            "one weight per object required".into(),
        ));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let kind = sample[0].kind();
    if sample.iter().any(|y| y.kind() != kind) {
        return Err(Error::DimensionMismatch("sample mixes object types".into()));
    }
    let first = embed(&sample[0]);
    let mut acc = HilbertVector::zeros(first.len(), first.kind());
    for (y, &w) in sample.iter().zip(weights) {
        if w > 0.0 {
            acc.axpy(w / total, &embed(y))?;
        }
    }
    let mean_embedded = project_to_image(&acc, kind)?;
    let mean_object = pull_back(&mean_embedded, kind)?;
    let objective = frechet_objective(sample, &mean_object)?;
    Ok(FrechetMeanResult {
        mean_embedded,
        mean_object,
        objective,
    })
}

pub fn effect_map(
    theta_low: &HilbertVector,
    theta_high: &HilbertVector,
    t_low: f64,
    t_high: f64,
) -> Result<EffectMap> {
    let delta = theta_high.sub(theta_low)?;
    let magnitude = delta.norm();
    Ok(EffectMap {
        t_low,
        t_high,
        delta,
        magnitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{QuantileFunction, SpdMatrix};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn qf(v: Vec<f64>) -> MetricObject {
        MetricObject::Quantile(QuantileFunction::new(v).unwrap())
    }

    fn random_quantiles(rng: &mut impl Rng, count: usize, m: usize) -> Vec<MetricObject> {
        (0..count)
            .map(|_| {
                let mu: f64 = rng.random_range(-2.0..2.0);
                let sd: f64 = rng.random_range(0.2..2.0);
                MetricObject::Quantile(QuantileFunction::normal(mu, sd, m).unwrap())
            })
            .collect()
    }

    #[test]
    fn single_object_is_its_own_mean() {
        let a = qf(vec![0.0, 1.0, 3.0]);
        let r = frechet_mean(std::slice::from_ref(&a)).unwrap();
        assert_eq!(r.mean_object, a);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn two_quantile_functions_average() {
        let a = qf(vec![0.0, 1.0, 3.0]);
        let b = qf(vec![2.0, 2.0, 5.0]);
        let r = frechet_mean(&[a, b]).unwrap();
        assert_eq!(
            r.mean_object.as_quantile().unwrap().values(),
            &[1.0, 1.5, 4.0]
        );
    }

    #[test]
    fn empty_and_mixed_samples_fail() {
        assert!(frechet_mean(&[]).is_err());
        let a = qf(vec![0.0, 1.0, 2.0, 3.0]);
        let b = MetricObject::Spd(SpdMatrix::identity(2));
        assert!(frechet_mean(&[a, b]).is_err());
    }

    #[test]
    fn weight_contract() {
        let a = qf(vec![0.0, 1.0]);
        let b = qf(vec![5.0, 6.0]);
        let r = weighted_frechet_mean(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
        assert_eq!(r.mean_object, a);
        assert!(weighted_frechet_mean(&[a.clone(), b.clone()], &[0.0, 0.0]).is_err());
        assert!(weighted_frechet_mean(&[a.clone(), b.clone()], &[1.0, -1.0]).is_err());
        let eq = weighted_frechet_mean(&[a.clone(), b.clone()], &[2.0, 2.0]).unwrap();
        assert_eq!(eq, frechet_mean(&[a, b]).unwrap());
    }

    #[test]
    fn weighted_spd_mean_is_convex_combination() {
        let a = SpdMatrix::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let b = SpdMatrix::new(2, vec![1.0, -0.2, -0.2, 3.0]).unwrap();
        let r = weighted_frechet_mean(
            &[MetricObject::Spd(a.clone()), MetricObject::Spd(b.clone())],
            &[1.0, 3.0],
        )
        .unwrap();
        let got = r.mean_object.as_spd().unwrap();
        for k in 0..4 {
            let expect = (a.entries()[k] + 3.0 * b.entries()[k]) / 4.0;
            assert_abs_diff_eq!(got.entries()[k], expect, epsilon = 1e-12);
        }
    }

    /// Brute-force oracle: perturb the mean along shift and tilt directions
    /// (keeping monotonicity) and confirm nothing beats it.
    #[test]
    fn mean_beats_perturbation_grid() {
        let mut rng = crate::rng::substream(11, 0);
        let m = 40;
        let sample = random_quantiles(&mut rng, 5, m);
        let r = frechet_mean(&sample).unwrap();
        let base = r.mean_object.as_quantile().unwrap().values().to_vec();
        let mut best = f64::INFINITY;
        for a in -20..=20 {
            for b in -20..=20 {
                let cand: Vec<f64> = base
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v + a as f64 * 0.01 + b as f64 * 0.01 * (j as f64 / m as f64 - 0.5)
                    })
                    .collect();
                if let Ok(q) = QuantileFunction::new(cand) {
                    best =
                        best.min(frechet_objective(&sample, &MetricObject::Quantile(q)).unwrap());
                }
            }
        }
        assert!(r.objective <= best + 1e-6);
        for y in &sample {
            assert!(r.objective <= frechet_objective(&sample, y).unwrap());
        }
    }

    /// Overall mean embedding equals the average of equal-size stratum means.
    #[test]
    fn stratified_means_average_to_overall_mean() {
        let mut rng = crate::rng::substream(12, 0);
        let sample = random_quantiles(&mut rng, 12, 20);
        let overall = frechet_mean(&sample).unwrap();
        let mut acc = HilbertVector::zeros(20, crate::embedding::GridKind::ProbabilityGrid);
        for stratum in sample.chunks(4) {
            acc.axpy(1.0 / 3.0, &frechet_mean(stratum).unwrap().mean_embedded)
                .unwrap();
        }
        assert_abs_diff_eq!(
            acc.distance(&overall.mean_embedded).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn effect_map_properties() {
        let m = crate::embedding::GridKind::ProbabilityGrid;
        let a = HilbertVector::new(vec![0.0, 1.0, 2.0], m).unwrap();
        let b = HilbertVector::new(vec![0.4, 1.4, 2.4], m).unwrap();
        let c = HilbertVector::new(vec![-1.0, 0.0, 5.0], m).unwrap();
        let zero = effect_map(&a, &a, 0.0, 0.0).unwrap();
        assert_eq!(zero.magnitude, 0.0);
        let ab = effect_map(&a, &b, 0.0, 2.0).unwrap();
        assert_abs_diff_eq!(ab.magnitude, 0.4, epsilon = 1e-12);
        let ba = effect_map(&b, &a, 2.0, 0.0).unwrap();
        assert_eq!(ba.delta, ab.delta.scale(-1.0));
        let ac = effect_map(&a, &c, 0.0, 1.0).unwrap().magnitude;
        let cb = effect_map(&c, &b, 1.0, 2.0).unwrap().magnitude;
        assert!(ab.magnitude <= ac + cb + 1e-12);
    }
}
