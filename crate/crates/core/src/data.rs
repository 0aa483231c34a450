//! Aligned observation columns (X, T, V).

use serde::{Deserialize, Serialize};

use crate::embedding::{GridKind, HilbertVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    units: Vec<String>,
    covariates: Vec<Vec<f64>>,
    treatment: Vec<f64>,
    outcomes: Vec<HilbertVector>,
    groups: Option<Vec<String>>,
    discrete: Vec<bool>,
}

impl ObservationSet {
    /// `covariates` holds one row of length p per unit.
    pub fn new(
        covariates: Vec<Vec<f64>>,
        treatment: Vec<f64>,
        outcomes: Vec<HilbertVector>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n == 0 {
            return Err(Error::Data("empty observation set".into()));
        }
        if covariates.len() != n || outcomes.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate rows, {} treatments, {} outcomes",
                covariates.len(),
                n,
                outcomes.len()
            )));
        }
        let p = covariates[0].len();
        if let Some(i) = covariates.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "covariate row {i} has wrong length"
            )));
        }
        for (i, o) in outcomes.iter().enumerate().skip(1) {
            o.check_compatible(&outcomes[0])
                .map_err(|e| Error::DimensionMismatch(format!("outcome {i}: {e}")))?;
        }
        if let Some(i) = treatment.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite treatment at row {i}")));
        }
        if covariates.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite covariate value".into()));
        }
        Ok(ObservationSet {
            units: (0..n).map(|i| i.to_string()).collect(),
            covariates,
            treatment,
            outcomes,
            groups: None,
            discrete: vec![false; p],
        })
    }

    pub fn with_units(mut self, units: Vec<String>) -> Result<Self> {
        if units.len() != self.n() {
            return Err(Error::DimensionMismatch(
                "unit ids do not match row count".into(),
            ));
        }
        self.units = units;
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(Error::DimensionMismatch(
                "group labels do not match row count".into(),
            ));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    /// Flags covariate columns that take discrete values.
    pub fn with_discrete(mut self, columns: &[usize]) -> Result<Self> {
        for &c in columns {
            if c >= self.p() {
                return Err(Error::InvalidArgument(format!(
                    "discrete column {c} out of range"
                )));
            }
            self.discrete[c] = true;
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.covariates[0].len()
    }

    pub fn grid_len(&self) -> usize {
        self.outcomes[0].len()
    }

    pub fn grid_kind(&self) -> GridKind {
        self.outcomes[0].kind()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i]
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcomes(&self) -> &[HilbertVector] {
        &self.outcomes
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn discrete(&self) -> &[bool] {
        &self.discrete
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> ObservationSet {
        ObservationSet {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            covariates: indices
                .iter()
                .map(|&i| self.covariates[i].clone())
                .collect(),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i].clone()).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i].clone()).collect()),
            discrete: self.discrete.clone(),
        }
    }

    /// Distinct group labels in first-appearance order.
    pub fn group_labels(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        if let Some(g) = &self.groups {
            for label in g {
                if !seen.contains(label) {
                    seen.push(label.clone());
                }
            }
        }
        seen
    }

    pub fn group_indices(&self, label: &str) -> Vec<usize> {
        match &self.groups {
            Some(g) => (0..self.n()).filter(|&i| g[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// Replaces every outcome by `V_i + shift`.
    pub fn shifted(&self, shift: &HilbertVector) -> Result<ObservationSet> {
        let outcomes = self
            .outcomes
            .iter()
            .map(|v| v.add(shift))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservationSet {
            outcomes,
            ..self.clone()
        })
    }

    pub fn treatment_sd(&self) -> f64 {
        crate::stats::sample_sd(&self.treatment).unwrap_or(0.0)
    }
}
