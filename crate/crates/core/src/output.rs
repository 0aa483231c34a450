//! Result files: long-format CSV, JSON, plot data and the run manifest.
//!
//! Floats are written with shortest round-trip formatting (see [`num`]).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{GridKind, HilbertVector};
use crate::error::{Error, Result};
use crate::simlab::{McReport, Metric};
use crate::stats::probability_grid;

/// Slope floor for inverse-slope density recovery.
pub const SLOPE_FLOOR: f64 = 1e-6;

/// Shortest round-trip decimal; exponent notation outside [1e-5, 1e16).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Density values 1/Q′(p_j) at the quantiles Q(p_j), with Q′ from central
/// differences (one-sided at the ends) and floored at [`SLOPE_FLOOR`].
pub fn quantile_density(q: &[f64]) -> Vec<f64> {
    let m = q.len();
    let p = probability_grid(m);
    (0..m)
        .map(|j| {
            let (a, b) = match j {
                0 => (0, 1),
                j if j == m - 1 => (m - 2, m - 1),
                j => (j - 1, j + 1),
            };
            let slope = (q[b] - q[a]) / (p[b] - p[a]);
            1.0 / slope.max(SLOPE_FLOOR)
        })
        .collect()
}

/// One curve over a treatment grid, optionally with envelopes.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub group: String,
    pub estimator: String,
    pub t_grid: Vec<f64>,
    pub center: Vec<HilbertVector>,
    pub lower: Option<Vec<HilbertVector>>,
    pub upper: Option<Vec<HilbertVector>>,
}

/// Long-format rows `t,p,value,lower,upper,group,estimator,density`.
///
/// `p` is the probability level for quantile outcomes and the coordinate
/// index otherwise; `density` is filled for quantile outcomes only.
pub fn emit_plot_data(series: &[PlotSeries], path: &Path) -> Result<usize> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "t",
        "p",
        "value",
        "lower",
        "upper",
        "group",
        "estimator",
        "density",
    ])?;
    let mut rows = 0;
    for s in series {
        if s.center.len() != s.t_grid.len() {
            return Err(Error::DimensionMismatch(
                "series center and grid differ".into(),
            ));
        }
        for (g, &t) in s.t_grid.iter().enumerate() {
            let c = &s.center[g];
            let m = c.len();
            let quantile = c.kind() == GridKind::ProbabilityGrid;
            let p: Vec<String> = if quantile {
                probability_grid(m).iter().map(|&p| num(p)).collect()
            } else {
                (0..m).map(|j| j.to_string()).collect()
            };
            let dens = if quantile {
                Some(quantile_density(c.values()))
            } else {
                None
            };
            for j in 0..m {
                let v = c.values()[j];
                let lo = s.lower.as_ref().map_or(v, |l| l[g].values()[j]);
                let hi = s.upper.as_ref().map_or(v, |u| u[g].values()[j]);
                w.write_record([
                    num(t),
                    p[j].clone(),
                    num(v),
                    num(lo),
                    num(hi),
                    s.group.clone(),
                    s.estimator.clone(),
                    opt(dens.as_ref().map(|d| d[j])),
                ])?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

pub fn write_mc_rows(report: &McReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "replication",
        "estimator",
        "mise",
        "loo_mse",
        "coverage",
        "band_width",
        "error",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.replication.to_string(),
            r.estimator.clone(),
            opt(r.mise),
            opt(r.loo_mse),
            opt(r.coverage),
            opt(r.band_width),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mc_summary(report: &McReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["estimator", "metric", "mean", "sd", "count", "failures"])?;
    for s in &report.summaries {
        w.write_record([
            s.estimator.clone(),
            Metric::name(s.metric).to_string(),
            opt(s.mean),
            opt(s.sd),
            s.count.to_string(),
            s.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long rows `group,t_low,t_high,p,delta,lower,upper` for effect maps.
pub struct EffectRow<'a> {
    pub group: &'a str,
    pub t_low: f64,
    pub t_high: f64,
    pub delta: &'a HilbertVector,
    pub lower: Option<&'a HilbertVector>,
    pub upper: Option<&'a HilbertVector>,
}

pub fn write_effects(rows: &[EffectRow<'_>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["group", "t_low", "t_high", "p", "delta", "lower", "upper"])?;
    for r in rows {
        let m = r.delta.len();
        let p = probability_grid(m);
        for j in 0..m {
            let label = if r.delta.kind() == GridKind::ProbabilityGrid {
                num(p[j])
            } else {
                j.to_string()
            };
            w.write_record([
                r.group.to_string(),
                num(r.t_low),
                num(r.t_high),
                label,
                num(r.delta.values()[j]),
                opt(r.lower.map(|v| v.values()[j])),
                opt(r.upper.map(|v| v.values()[j])),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration document.
    pub config_hash: String,
    pub config: String,
    pub files: Vec<ManifestEntry>,
}

/// Hashes `files` (relative to `dir`) and writes `manifest.json`.
pub fn write_manifest(
    dir: &Path,
    mode: &str,
    seed: u64,
    config: &str,
    files: &[PathBuf],
) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::read(dir.join(f))?;
        entries.push(ManifestEntry {
            path: f.to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode: mode.into(),
        seed,
        config_hash: sha256_hex(config.as_bytes()),
        config: config.into(),
        files: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::true_theta;
    use crate::simlab::OutcomeModelKind;
    use crate::stats::normal_pdf;

    #[test]
    fn density_of_model_a_truth_is_normal() {
        let m = 400;
        let q = true_theta(0.0, OutcomeModelKind::A, 1.0, m).unwrap();
        let d = quantile_density(q.values());
        let worst = q
            .values()
            .iter()
            .zip(&d)
            .map(|(x, f)| (f - normal_pdf(x - 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.01, "{worst}");
    }

    #[test]
    fn flat_quantiles_hit_the_slope_floor() {
        let d = quantile_density(&[1.0, 1.0, 1.0]);
        assert!(d.iter().all(|v| *v == 1.0 / SLOPE_FLOOR));
    }

    #[test]
    fn plot_rows_and_zero_width_bands() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        let c: Vec<HilbertVector> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&t| true_theta(t, OutcomeModelKind::A, 1.0, 5).unwrap())
            .collect();
        let s = PlotSeries {
            group: "all".into(),
            estimator: "cf".into(),
            t_grid: vec![0.0, 1.0, 2.0],
            center: c.clone(),
            lower: Some(c.clone()),
            upper: Some(c),
        };
        let rows = emit_plot_data(
            &[
                s.clone(),
                PlotSeries {
                    group: "g".into(),
                    ..s
                },
            ],
            &path,
        )
        .unwrap();
        assert_eq!(rows, 2 * 3 * 5);
        let mut r = csv::Reader::from_path(&path).unwrap();
        let mut count = 0;
        for rec in r.records() {
            let rec = rec.unwrap();
            assert_eq!(rec[2], rec[3]);
            assert_eq!(rec[2], rec[4]);
            count += 1;
        }
        assert_eq!(count, 30);
    }

    #[test]
    fn floats_round_trip() {
        for v in [
            0.1 + 0.2,
            1.0 / 3.0,
            -2.5e-300,
            1234567.891,
            4.6e-30,
            1e16,
            0.0,
            f64::MAX,
        ] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(4.6e-30), "4.6e-30");
        assert_eq!(num(0.25), "0.25");
    }

    #[test]
    fn manifest_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let m = write_manifest(
            dir.path(),
            "estimate",
            3,
            "seed = 3\n",
            &[PathBuf::from("a.txt")],
        )
        .unwrap();
        assert_eq!(
            m.files[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m.config_hash, sha256_hex(b"seed = 3\n"));
    }
}
