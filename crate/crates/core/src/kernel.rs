//! Smoothing kernels K_h(u) = k(u / h) / h.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::INV_SQRT_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    /// Unit-bandwidth profile k(u).
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// ∫ k²(u) du.
    pub fn roughness(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5 / std::f64::consts::PI.sqrt(),
            KernelFamily::Epanechnikov => 0.6,
        }
    }

    /// ∫ u² k(u) du.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Epanechnikov => 0.2,
        }
    }

    /// Half-width of an interval carrying all (or numerically all) mass.
    pub fn effective_radius(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 12.0,
            KernelFamily::Epanechnikov => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

/// Numerically integrated moments of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    pub mass: f64,
    pub first: f64,
    pub second: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Kernel { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    /// K_h(u).
    pub fn weight(&self, u: f64) -> f64 {
        self.family.profile(u / self.bandwidth) / self.bandwidth
    }

    /// k(u / h), the weight without the 1/h factor.
    pub fn unscaled(&self, u: f64) -> f64 {
        self.family.profile(u / self.bandwidth)
    }

    /// Composite Simpson integration of K_h, u·K_h and u²·K_h over its
    /// effective support, with breakpoints at the support edges.
    pub fn numeric_moments(&self, intervals: usize) -> KernelMoments {
        let r = self.family.effective_radius() * self.bandwidth;
        let n = intervals.max(2) & !1;
        let step = 2.0 * r / n as f64;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let u = -r + i as f64 * step;
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let k = self.weight(u);
            m0 += c * k;
            m1 += c * u * k;
            m2 += c * u * u * k;
        }
        let s = step / 3.0;
        KernelMoments {
            mass: m0 * s,
            first: m1 * s,
            second: m2 * s,
        }
    }
}

/// Undersmoothing bandwidth h = sd(T) · n^(-0.3).
pub fn default_bandwidth(treatment: &[f64]) -> Result<f64> {
    let n = treatment.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "bandwidth rule needs at least 2 treatments".into(),
        ));
    }
    let sd = crate::stats::sample_sd(treatment).unwrap_or(0.0);
    if !(sd > 0.0) {
        return Err(Error::Data("treatment has zero variance".into()));
    }
    Ok(sd * (n as f64).powf(-0.3))
}

/// Normal-reference rule 1.06 · sd · n^(-1/(4+d)), used for nuisance smoothers.
pub fn reference_bandwidth(values: &[f64], dim: usize) -> f64 {
    let n = values.len().max(2) as f64;
    let sd = crate::stats::sample_sd(values).unwrap_or(0.0);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    1.06 * sd * n.powf(-1.0 / (4.0 + dim as f64))
}
