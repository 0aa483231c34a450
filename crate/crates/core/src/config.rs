//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::GridKind;
use crate::error::{Error, Result};
use crate::estimators::{Bandwidth, EstimatorKind, EstimatorSpec};
use crate::inference::InferenceOptions;
use crate::ingest::LifeTableOptions;
use crate::simlab::{table_estimators, DgpSpec, Metric, NamedEstimator, POPULATION_DRAWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    #[default]
    Estimate,
    Infer,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::Infer => "infer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    #[default]
    LifeTable,
    Embedded,
}

/// Geometry of pre-embedded coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSpace {
    #[default]
    Quantile,
    Vector,
}

impl OutcomeSpace {
    pub fn grid_kind(self) -> GridKind {
        match self {
            OutcomeSpace::Quantile => GridKind::ProbabilityGrid,
            OutcomeSpace::Vector => GridKind::EmpiricalFeature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub format: InputFormat,
    pub life_table: LifeTableOptions,
    pub space: OutcomeSpace,
    /// Zero-based covariate columns matched exactly by kernel GPS fits.
    pub discrete: Vec<usize>,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec {
            path: PathBuf::new(),
            format: InputFormat::LifeTable,
            life_table: LifeTableOptions::default(),
            space: OutcomeSpace::Quantile,
            discrete: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub replications: usize,
    pub metrics: Vec<Metric>,
    pub t_grid: Option<Vec<f64>>,
    pub coverage_t: Option<f64>,
    pub coverage_index: Option<usize>,
    pub oracle_draws: usize,
    pub estimators: Vec<NamedEstimator>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            replications: 100,
            metrics: Metric::ALL.to_vec(),
            t_grid: None,
            coverage_t: None,
            coverage_index: None,
            oracle_draws: POPULATION_DRAWS,
            estimators: table_estimators(),
        }
    }
}

/// Treatment levels for `estimate` and `infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Explicit levels; otherwise `count` points between the sample
    /// quantiles `range` of T.
    pub t_grid: Option<Vec<f64>>,
    pub count: usize,
    pub range: [f64; 2],
    /// Sample percentiles of T compared pairwise as effect maps.
    pub contrasts: Vec<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            t_grid: None,
            count: 20,
            range: [0.1, 0.9],
            contrasts: vec![0.05, 0.5, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Simulation design; also the data source of `estimate`/`infer` when no
    /// input is given. Its `seed` is replaced by the master seed.
    pub dgp: DgpSpec,
    pub simulate: SimulateOptions,
    pub input: Option<InputSpec>,
    pub estimator: EstimatorSpec,
    pub grid: GridOptions,
    pub inference: InferenceOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Estimate,
            seed: 1,
            out: PathBuf::from("out"),
            dgp: DgpSpec::default(),
            simulate: SimulateOptions::default(),
            input: None,
            estimator: EstimatorSpec::default(),
            grid: GridOptions::default(),
            inference: InferenceOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Configuration as recorded in artifacts: the output directory is
    /// dropped so that identical runs written to different places match,
    /// and `dgp.seed` shows the master seed that synthetic data is drawn with.
    pub fn artifact_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.dgp.seed = c.seed;
        c.to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let a = self.inference.alpha;
        if !(a > 0.0 && a < 1.0) {
            return cfg(format!("inference.alpha must lie in (0, 1), got {a}"));
        }
        let d = self.inference.hulc.delta_bias;
        if !(0.0..0.5).contains(&d) {
            return cfg(format!(
                "inference.hulc.delta_bias must lie in [0, 0.5), got {d}"
            ));
        }
        if self.inference.hulc.cap < 2 {
            return cfg("inference.hulc.cap must be at least 2".into());
        }
        validate_spec(&self.estimator, "estimator")?;
        match self.mode {
            Mode::Simulate => {
                self.dgp.validate()?;
                if self.simulate.replications == 0 {
                    return cfg("simulate.replications must be positive".into());
                }
                if self.simulate.estimators.is_empty() {
                    return cfg("simulate.estimators is empty".into());
                }
                let mut names: Vec<&str> = self
                    .simulate
                    .estimators
                    .iter()
                    .map(|e| e.name.as_str())
                    .collect();
                names.sort_unstable();
                if names.windows(2).any(|w| w[0] == w[1]) {
                    return cfg("simulate.estimators names must be unique".into());
                }
                for e in &self.simulate.estimators {
                    validate_spec(&e.spec, &e.name)?;
                }
            }
            Mode::Estimate | Mode::Infer => {
                match &self.input {
                    Some(i) if i.path.as_os_str().is_empty() => {
                        return cfg("input.path is empty".into())
                    }
                    Some(_) => {}
                    None => self.dgp.validate()?,
                }
                if self.mode == Mode::Infer && self.estimator.kind == EstimatorKind::Or {
                    return cfg("infer needs a kernel estimator (ipw, dr or cf)".into());
                }
                let g = &self.grid;
                if let Some(t) = &g.t_grid {
                    if t.is_empty() || t.iter().any(|v| !v.is_finite()) {
                        return cfg("grid.t_grid must be a nonempty list of finite levels".into());
                    }
                } else {
                    if g.count < 1 {
                        return cfg("grid.count must be positive".into());
                    }
                    if !(0.0 <= g.range[0] && g.range[0] <= g.range[1] && g.range[1] <= 1.0) {
                        return cfg("grid.range must satisfy 0 <= lo <= hi <= 1".into());
                    }
                }
                if g.contrasts.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return cfg("grid.contrasts must be percentiles in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

/// Markdown page listing every key with its default, as generated from
/// [`RunConfig::default`].
pub fn reference_page() -> Result<String> {
    let mut c = RunConfig::default();
    let estimate = c.to_toml()?;
    c.input = Some(InputSpec {
        path: "tables.csv".into(),
        ..Default::default()
    });
    let input = toml::to_string(&InputSpecDoc {
        input: c.input.as_ref().expect("set"),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    Ok(format!(
        "# Run configuration reference\n\n\
         Generated from the built-in defaults; `frechet-dose <verb> --dump-config` prints the same\n\
         document with any flags applied. Unknown keys are rejected. Command-line flags override\n\
         the file given with `--config`.\n\n\
         ## Defaults\n\n```toml\n{estimate}```\n\n\
         ## Input section\n\n\
         Absent by default, in which case `estimate` and `infer` draw data from `[dgp]`.\n\
         `format` is `life_table` or `embedded`; `space` (embedded input only) is `quantile` or `vector`;\n\
         `discrete` lists zero-based covariate columns matched exactly by kernel GPS fits.\n\n\
         ```toml\n{input}```\n"
    ))
}

#[derive(Serialize)]
struct InputSpecDoc<'a> {
    input: &'a InputSpec,
}

fn validate_spec(spec: &EstimatorSpec, name: &str) -> Result<()> {
    if spec.kind == EstimatorKind::Cf && spec.folds < 2 {
        return Err(Error::Config(format!("{name}: folds must be at least 2")));
    }
    if let Bandwidth::Fixed(h) = spec.kernel.h {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!(
                "{name}: kernel.h must be positive, got {h}"
            )));
        }
    }
    if !(spec.gps.floor > 0.0) {
        return Err(Error::Config(format!("{name}: gps.floor must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let s = RunConfig {
            mode: Mode::Simulate,
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml(&s.to_toml().unwrap()).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("sed = 3"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("[estimator]\nfoldz = 3").is_err());
        assert!(RunConfig::from_toml("[inference.hulc]\ncapp = 3").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml(
            "mode = \"infer\"\nseed = 7\n[estimator]\nkind = \"dr\"\n[estimator.kernel]\nh = 0.3\n[inference]\nalpha = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Infer);
        assert_eq!(c.seed, 7);
        assert_eq!(c.estimator.kind, EstimatorKind::Dr);
        assert_eq!(c.estimator.kernel.h, Bandwidth::Fixed(0.3));
        assert_eq!(c.inference.alpha, 0.1);
        assert_eq!(c.estimator.folds, 5);
        c.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.inference.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig {
            mode: Mode::Infer,
            ..Default::default()
        };
        c.estimator.kind = EstimatorKind::Or;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.grid.range = [0.9, 0.1];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.dgp.scenario = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reference_page_is_current() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../docs/config-reference.md"
        );
        let page = reference_page().unwrap();
        if std::env::var_os("UPDATE_REFERENCE").is_some() {
            std::fs::write(path, &page).unwrap();
        }
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            page,
            "rerun with UPDATE_REFERENCE=1"
        );
    }

    #[test]
    fn artifact_config_ignores_output_directory() {
        let a = RunConfig {
            out: "x".into(),
            ..Default::default()
        };
        let b = RunConfig {
            out: "y".into(),
            ..Default::default()
        };
        assert_eq!(a.artifact_toml().unwrap(), b.artifact_toml().unwrap());
    }
}
