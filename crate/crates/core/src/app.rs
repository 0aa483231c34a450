//! Runs a configuration end to end and writes its artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{InputFormat, Mode, RunConfig};
use crate::data::ObservationSet;
use crate::embedding::{project_to_image, GridKind, HilbertVector, ObjectKind};
use crate::error::{Error, Result};
use crate::estimators::{run_estimator, DoseResponseEstimate};
use crate::frechet::{effect_map, EffectMap};
use crate::inference::{asymptotic_band, hulc_interval, AsymptoticBand, HulcInterval};
use crate::ingest::{ingest_embedded, ingest_life_tables};
use crate::output::{
    emit_plot_data, num, write_effects, write_json, write_manifest, write_mc_rows,
    write_mc_summary, EffectRow, Manifest, PlotSeries,
};
use crate::rng::child_seed;
use crate::simlab::{generate, run_monte_carlo, DgpSpec, McConfig, McReport};
use crate::stats::{linspace, quantile};

/// Label of the analysis that pools every unit.
pub const ALL_UNITS: &str = "all";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

pub fn load_data(config: &RunConfig) -> Result<ObservationSet> {
    let data = match &config.input {
        Some(input) => {
            let d = match input.format {
                InputFormat::LifeTable => ingest_life_tables(&input.path, &input.life_table)?,
                InputFormat::Embedded => ingest_embedded(&input.path, input.space.grid_kind())?,
            };
            d.with_discrete(&input.discrete)?
        }
        None => generate(&DgpSpec {
            seed: config.seed,
            ..config.dgp
        })?,
    };
    Ok(data)
}

/// Treatment grid and contrast levels from the pooled sample.
pub fn treatment_levels(config: &RunConfig, data: &ObservationSet) -> (Vec<f64>, Vec<f64>) {
    let t = data.treatment();
    let g = &config.grid;
    let grid = match &g.t_grid {
        Some(levels) => levels.clone(),
        None => linspace(quantile(t, g.range[0]), quantile(t, g.range[1]), g.count),
    };
    let contrasts = g.contrasts.iter().map(|&p| quantile(t, p)).collect();
    (grid, contrasts)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupResult {
    pub group: String,
    pub n: usize,
    pub estimate: DoseResponseEstimate,
    /// ϑ̂ projected onto quantile functions (or left as is for vectors).
    pub projected: Vec<HilbertVector>,
    pub contrast_levels: Vec<f64>,
    pub effects: Vec<EffectMap>,
    pub band: Option<AsymptoticBand>,
    pub hulc: Vec<HulcInterval>,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateDocument<'a> {
    mode: &'a str,
    seed: u64,
    config: &'a str,
    t_grid: &'a [f64],
    groups: &'a [GroupResult],
}

#[derive(Debug, Clone, Serialize)]
struct SimulateDocument<'a> {
    mode: &'a str,
    seed: u64,
    config: &'a str,
    report: &'a McReport,
}

fn analyse_group(
    config: &RunConfig,
    label: &str,
    data: &ObservationSet,
    grid: &[f64],
    levels: &[f64],
    seed: u64,
) -> Result<GroupResult> {
    let wrap = |e: Error| match e {
        Error::Data(m) => Error::Data(format!("group {label}: {m}")),
        other => other,
    };
    let mut eval = grid.to_vec();
    eval.extend_from_slice(levels);
    let fitted = run_estimator(data, &config.estimator, &eval, seed).map_err(wrap)?;
    let g = grid.len();
    let full = &fitted.estimate;
    let estimate = DoseResponseEstimate {
        t_grid: grid.to_vec(),
        theta: full.theta[..g].to_vec(),
        pointwise_se: full.pointwise_se[..g].to_vec(),
        diagnostics: crate::estimators::Diagnostics {
            trimmed: full.diagnostics.trimmed,
            effective_sample_size: full.diagnostics.effective_sample_size[..g].to_vec(),
            low_support: full
                .diagnostics
                .low_support
                .iter()
                .copied()
                .filter(|&i| i < g)
                .collect(),
            zero_weight: full
                .diagnostics
                .zero_weight
                .iter()
                .copied()
                .filter(|&i| i < g)
                .collect(),
        },
        ..full.clone()
    };
    let projected = estimate
        .theta
        .iter()
        .map(|v| match v.kind() {
            GridKind::ProbabilityGrid if v.is_finite() => project_to_image(v, ObjectKind::Quantile),
            _ => Ok(v.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    let at_level = &full.theta[g..];
    let mut effects = Vec::new();
    let mut pairs = Vec::new();
    for a in 0..levels.len() {
        for b in (a + 1)..levels.len() {
            effects.push(effect_map(
                &at_level[a],
                &at_level[b],
                levels[a],
                levels[b],
            )?);
            pairs.push((a, b));
        }
    }
    let (band, hulc) = if config.mode == Mode::Infer {
        let band_full = asymptotic_band(
            data,
            full,
            &fitted.nuisances,
            config.inference.alpha,
            &config.inference.band,
        )?;
        let band = AsymptoticBand {
            t_grid: grid.to_vec(),
            center: band_full.center[..g].to_vec(),
            lower: band_full.lower[..g].to_vec(),
            upper: band_full.upper[..g].to_vec(),
            sigma_hat: band_full.sigma_hat[..g].to_vec(),
            se: band_full.se[..g].to_vec(),
            bias_proxy: band_full.bias_proxy.map(|b| b[..g].to_vec()),
            ..band_full
        };
        let hulc = pairs
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                hulc_interval(
                    data,
                    &config.estimator,
                    levels[b],
                    levels[a],
                    config.inference.alpha,
                    &config.inference.hulc,
                    child_seed(seed, 0x100 + k as u64),
                )
                .map_err(wrap)
            })
            .collect::<Result<Vec<_>>>()?;
        (Some(band), hulc)
    } else {
        (None, Vec::new())
    };
    Ok(GroupResult {
        group: label.to_string(),
        n: data.n(),
        estimate,
        projected,
        contrast_levels: levels.to_vec(),
        effects,
        band,
        hulc,
    })
}

/// Fits every group: the pooled sample first, then each labelled subgroup.
pub fn analyse(config: &RunConfig, data: &ObservationSet) -> Result<(Vec<f64>, Vec<GroupResult>)> {
    let (grid, levels) = treatment_levels(config, data);
    let mut groups = vec![(ALL_UNITS.to_string(), data.clone())];
    for label in data.group_labels() {
        groups.push((label.clone(), data.subset(&data.group_indices(&label))));
    }
    let results = groups
        .iter()
        .enumerate()
        .map(|(k, (label, d))| {
            analyse_group(
                config,
                label,
                d,
                &grid,
                &levels,
                child_seed(config.seed, k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, results))
}

fn write_estimate_csv(results: &[GroupResult], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "group",
        "estimator",
        "t",
        "index",
        "value",
        "projected",
        "se",
        "effective_sample_size",
    ])?;
    for r in results {
        let e = &r.estimate;
        for (g, &t) in e.t_grid.iter().enumerate() {
            for j in 0..e.theta[g].len() {
                w.write_record([
                    r.group.clone(),
                    e.estimator.name().to_string(),
                    num(t),
                    j.to_string(),
                    num(e.theta[g].values()[j]),
                    num(r.projected[g].values()[j]),
                    num(e.pointwise_se[g][j]),
                    num(e.diagnostics.effective_sample_size[g]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run_simulate(config: &RunConfig, toml: &str) -> Result<Vec<PathBuf>> {
    let s = &config.simulate;
    let mc = McConfig {
        dgp: DgpSpec {
            seed: config.seed,
            ..config.dgp
        },
        estimators: s.estimators.clone(),
        metrics: s.metrics.clone(),
        replications: s.replications,
        t_grid: s.t_grid.clone(),
        alpha: config.inference.alpha,
        coverage_t: s.coverage_t,
        coverage_index: s.coverage_index,
        oracle_draws: s.oracle_draws,
        record_t: Vec::new(),
    };
    let report = run_monte_carlo(&mc)?;
    let out = &config.out;
    write_mc_rows(&report, &out.join("mc_rows.csv"))?;
    write_mc_summary(&report, &out.join("mc_summary.csv"))?;
    write_json(
        &out.join("mc_report.json"),
        &SimulateDocument {
            mode: config.mode.name(),
            seed: config.seed,
            config: toml,
            report: &report,
        },
    )?;
    Ok(vec![
        "mc_rows.csv".into(),
        "mc_summary.csv".into(),
        "mc_report.json".into(),
    ])
}

fn run_estimate(config: &RunConfig, toml: &str) -> Result<Vec<PathBuf>> {
    let data = load_data(config)?;
    let (grid, results) = analyse(config, &data)?;
    let out = &config.out;
    let mut files: Vec<PathBuf> = vec![
        "estimate.csv".into(),
        "effects.csv".into(),
        "plot.csv".into(),
    ];
    write_estimate_csv(&results, &out.join("estimate.csv"))?;
    let rows: Vec<EffectRow<'_>> = results
        .iter()
        .flat_map(|r| {
            r.effects.iter().enumerate().map(move |(k, e)| EffectRow {
                group: &r.group,
                t_low: e.t_low,
                t_high: e.t_high,
                delta: &e.delta,
                lower: r.hulc.get(k).map(|h| &h.lower),
                upper: r.hulc.get(k).map(|h| &h.upper),
            })
        })
        .collect();
    write_effects(&rows, &out.join("effects.csv"))?;
    let series: Vec<PlotSeries> = results
        .iter()
        .map(|r| PlotSeries {
            group: r.group.clone(),
            estimator: r.estimate.estimator.name().to_string(),
            t_grid: r.estimate.t_grid.clone(),
            center: r.projected.clone(),
            lower: r.band.as_ref().map(|b| b.lower.clone()),
            upper: r.band.as_ref().map(|b| b.upper.clone()),
        })
        .collect();
    emit_plot_data(&series, &out.join("plot.csv"))?;
    let name = if config.mode == Mode::Infer {
        "infer.json"
    } else {
        "estimate.json"
    };
    write_json(
        &out.join(name),
        &EstimateDocument {
            mode: config.mode.name(),
            seed: config.seed,
            config: toml,
            t_grid: &grid,
            groups: &results,
        },
    )?;
    files.push(name.into());
    if config.mode == Mode::Infer {
        let bands: Vec<_> = results
            .iter()
            .map(|r| serde_json::json!({ "group": r.group, "band": r.band }))
            .collect();
        let hulc: Vec<_> = results
            .iter()
            .map(|r| serde_json::json!({ "group": r.group, "intervals": r.hulc }))
            .collect();
        write_json(&out.join("band.json"), &bands)?;
        write_json(&out.join("hulc.json"), &hulc)?;
        files.push("band.json".into());
        files.push("hulc.json".into());
    }
    Ok(files)
}

/// Validates `config`, computes, and writes all artifacts plus
/// `manifest.json` into `config.out`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let toml = config.artifact_toml()?;
    std::fs::create_dir_all(&config.out)?;
    let files = match config.mode {
        Mode::Simulate => run_simulate(config, &toml)?,
        Mode::Estimate | Mode::Infer => run_estimate(config, &toml)?,
    };
    let manifest = write_manifest(&config.out, config.mode.name(), config.seed, &toml, &files)?;
    Ok(RunOutcome {
        out: config.out.clone(),
        files,
        manifest,
    })
}
