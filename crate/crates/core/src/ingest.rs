//! Dataset ingestion: cohort life tables and pre-embedded outcome vectors.
//!
//! Life-table CSV, one row per age bin:
//! `unit,age_lo,deaths,treatment,x1..xp[,group]`.
//! Pre-embedded CSV, one row per unit:
//! `unit,treatment,x1..xp[,group],q1..qM`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSet;
use crate::embedding::{GridKind, HilbertVector};
use crate::error::{Error, Result};
use crate::output::num;
use crate::stats::{normal_cdf, normal_pdf, probability_grid};

/// Width of the last bin when a unit has a single bin.
pub const DEFAULT_BIN_WIDTH: f64 = 5.0;
const CDF_NODES: usize = 8192;
/// Beyond this many bandwidths a bin's smoothed mass is fully on one side.
const FAR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifeTableOptions {
    /// Gaussian smoothing bandwidth in years; 0 keeps the raw histogram.
    pub bandwidth: f64,
    /// Probability grid size M.
    pub grid_len: usize,
    /// Support [lo, hi] of the smoothed density; defaults to the unit's bin range.
    pub age_range: Option<[f64; 2]>,
}

impl Default for LifeTableOptions {
    fn default() -> Self {
        LifeTableOptions {
            bandwidth: 2.0,
            grid_len: 51,
            age_range: None,
        }
    }
}

/// One unit's histogram and attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableRecord {
    pub unit: String,
    pub age_lo: Vec<f64>,
    pub deaths: Vec<f64>,
    pub treatment: f64,
    pub covariates: Vec<f64>,
    pub group: Option<String>,
}

impl LifeTableRecord {
    /// Bin edges: lower edges plus the implied upper edge of the last bin.
    pub fn edges(&self) -> Vec<f64> {
        let mut e = self.age_lo.clone();
        let k = e.len();
        let last = if k >= 2 {
            e[k - 1] - e[k - 2]
        } else {
            DEFAULT_BIN_WIDTH
        };
        e.push(e[k - 1] + last);
        e
    }

    pub fn validate(&self) -> Result<()> {
        let unit = &self.unit;
        if self.age_lo.is_empty() {
            return Err(Error::Data(format!("unit {unit}: no bins")));
        }
        if self.age_lo.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Data(format!(
                "unit {unit}: bin edges are not strictly increasing"
            )));
        }
        if self.deaths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Data(format!(
                "unit {unit}: death counts must be finite and nonnegative"
            )));
        }
        if !(self.deaths.iter().sum::<f64>() > 0.0) {
            return Err(Error::Data(format!(
                "unit {unit}: total death count is zero"
            )));
        }
        Ok(())
    }

    /// Quantile function of the smoothed age-at-death density on the
    /// M-point grid p_j = (j − ½)/M.
    pub fn quantiles(&self, options: &LifeTableOptions) -> Result<Vec<f64>> {
        self.validate()?;
        if options.grid_len < 2 {
            return Err(Error::Config("grid_len must be at least 2".into()));
        }
        let bw = options.bandwidth;
        if !(bw >= 0.0 && bw.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing bandwidth must be nonnegative, got {bw}"
            )));
        }
        let edges = self.edges();
        let [lo, hi] = options
            .age_range
            .unwrap_or([edges[0], edges[edges.len() - 1]]);
        if !(lo < hi) {
            return Err(Error::Config(format!("age range [{lo}, {hi}] is empty")));
        }
        let total: f64 = self.deaths.iter().sum();
        let weights: Vec<f64> = self.deaths.iter().map(|d| d / total).collect();
        let probs = probability_grid(options.grid_len);
        if bw == 0.0 {
            return histogram_quantiles(&edges, &weights, lo, hi, &probs, &self.unit);
        }
        // antiderivative of the bin-uniform density convolved with N(0, bw²)
        let psi = |z: f64| z * normal_cdf(z) + normal_pdf(z);
        let cdf = |a: f64| -> f64 {
            let mut s = 0.0;
            for (b, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let (l, u) = (edges[b], edges[b + 1]);
                if a - u > FAR * bw {
                    s += w;
                } else if l - a < FAR * bw {
                    s += w * bw / (u - l) * (psi((a - l) / bw) - psi((a - u) / bw));
                }
            }
            s
        };
        let nodes: Vec<f64> = (0..=CDF_NODES)
            .map(|k| lo + (hi - lo) * k as f64 / CDF_NODES as f64)
            .collect();
        let raw: Vec<f64> = nodes.iter().map(|&a| cdf(a)).collect();
        let base = raw[0];
        let mass = raw[CDF_NODES] - base;
        if !(mass > 0.0) {
            return Err(Error::Data(format!(
                "unit {}: no smoothed mass inside [{lo}, {hi}]",
                self.unit
            )));
        }
        let f: Vec<f64> = raw.iter().map(|v| (v - base) / mass).collect();
        if f.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(Error::Data(format!(
                "unit {}: smoothed CDF is not monotone",
                self.unit
            )));
        }
        Ok(invert_on_nodes(&nodes, &f, &probs))
    }
}

fn invert_on_nodes(nodes: &[f64], cdf: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    let mut k = 0;
    for &p in probs {
        while k + 1 < cdf.len() - 1 && cdf[k + 1] < p {
            k += 1;
        }
        let (f0, f1) = (cdf[k], cdf[k + 1]);
        let frac = if f1 > f0 {
            ((p - f0) / (f1 - f0)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        out.push(nodes[k] + frac * (nodes[k + 1] - nodes[k]));
    }
    // rounding in the interpolation cannot be allowed to break monotonicity
    for j in 1..out.len() {
        if out[j] < out[j - 1] {
            out[j] = out[j - 1];
        }
    }
    out
}

/// Exact quantiles of the piecewise-uniform histogram restricted to [lo, hi].
fn histogram_quantiles(
    edges: &[f64],
    weights: &[f64],
    lo: f64,
    hi: f64,
    probs: &[f64],
    unit: &str,
) -> Result<Vec<f64>> {
    let mut nodes = vec![lo];
    let mut cum = vec![0.0];
    for (b, w) in weights.iter().enumerate() {
        let (l, u) = (edges[b].max(lo), edges[b + 1].min(hi));
        if u <= l {
            continue;
        }
        let inside = w * (u - l) / (edges[b + 1] - edges[b]);
        if l > *nodes.last().expect("nonempty") {
            nodes.push(l);
            cum.push(*cum.last().expect("nonempty"));
        }
        nodes.push(u);
        cum.push(cum.last().expect("nonempty") + inside);
    }
    let mass = *cum.last().expect("nonempty");
    if !(mass > 0.0) || nodes.len() < 2 {
        return Err(Error::Data(format!(
            "unit {unit}: no mass inside [{lo}, {hi}]"
        )));
    }
    let f: Vec<f64> = cum.iter().map(|c| c / mass).collect();
    Ok(invert_on_nodes(&nodes, &f, probs))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}: {what} {field:?} is not a number")))
}

struct Header {
    x_cols: Vec<usize>,
    group_col: Option<usize>,
    q_cols: Vec<usize>,
    index: HashMap<String, usize>,
}

fn numbered(headers: &csv::StringRecord, prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let h = h.trim();
            let rest = h.strip_prefix(prefix)?;
            rest.parse::<usize>().ok().map(|k| (k, i))
        })
        .collect();
    found.sort_unstable();
    for (pos, (k, _)) in found.iter().enumerate() {
        if *k != pos + 1 {
            return Err(Error::Data(format!(
                "columns {prefix}1..{prefix}K must be numbered consecutively"
            )));
        }
    }
    Ok(found.into_iter().map(|(_, i)| i).collect())
}

fn read_header(headers: &csv::StringRecord, required: &[&str]) -> Result<Header> {
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    for r in required {
        if !index.contains_key(*r) {
            return Err(Error::Data(format!("missing column {r:?}")));
        }
    }
    Ok(Header {
        x_cols: numbered(headers, 'x')?,
        group_col: index.get("group").copied(),
        q_cols: numbered(headers, 'q')?,
        index,
    })
}

pub fn read_life_tables(path: &Path) -> Result<Vec<LifeTableRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = read_header(
        reader.headers()?,
        &["unit", "age_lo", "deaths", "treatment"],
    )?;
    let (cu, ca, cd, ct) = (
        header.index["unit"],
        header.index["age_lo"],
        header.index["deaths"],
        header.index["treatment"],
    );
    let mut order: Vec<String> = Vec::new();
    let mut records: HashMap<String, LifeTableRecord> = HashMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let unit = rec.get(cu).unwrap_or("").to_string();
        if unit.is_empty() {
            return Err(Error::Data(format!("line {line}: empty unit id")));
        }
        let age = parse_f64(&rec[ca], "age_lo", line)?;
        let deaths = parse_f64(&rec[cd], "deaths", line)?;
        let treatment = parse_f64(&rec[ct], "treatment", line)?;
        let covariates = header
            .x_cols
            .iter()
            .map(|&c| parse_f64(&rec[c], "covariate", line))
            .collect::<Result<Vec<_>>>()?;
        let group = header.group_col.map(|c| rec[c].to_string());
        match records.get_mut(&unit) {
            Some(r) => {
                if r.treatment != treatment || r.covariates != covariates || r.group != group {
                    return Err(Error::Data(format!(
                        "line {line}: unit {unit} changes its treatment, covariates or group between bins"
                    )));
                }
                r.age_lo.push(age);
                r.deaths.push(deaths);
            }
            None => {
                order.push(unit.clone());
                records.insert(
                    unit.clone(),
                    LifeTableRecord {
                        unit,
                        age_lo: vec![age],
                        deaths: vec![deaths],
                        treatment,
                        covariates,
                        group,
                    },
                );
            }
        }
    }
    if order.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())));
    }
    Ok(order
        .into_iter()
        .map(|u| records.remove(&u).expect("recorded unit"))
        .collect())
}

/// Embeds life-table records into the quantile Hilbert space.
pub fn life_tables_to_observations(
    records: &[LifeTableRecord],
    options: &LifeTableOptions,
) -> Result<ObservationSet> {
    let outcomes = records
        .par_iter()
        .map(|r| HilbertVector::new(r.quantiles(options)?, GridKind::ProbabilityGrid))
        .collect::<Result<Vec<_>>>()?;
    assemble(
        records.iter().map(|r| r.unit.clone()).collect(),
        records.iter().map(|r| r.covariates.clone()).collect(),
        records.iter().map(|r| r.treatment).collect(),
        outcomes,
        records.iter().map(|r| r.group.clone()).collect(),
    )
}

pub fn ingest_life_tables(path: &Path, options: &LifeTableOptions) -> Result<ObservationSet> {
    life_tables_to_observations(&read_life_tables(path)?, options)
}

fn assemble(
    units: Vec<String>,
    covariates: Vec<Vec<f64>>,
    treatment: Vec<f64>,
    outcomes: Vec<HilbertVector>,
    groups: Vec<Option<String>>,
) -> Result<ObservationSet> {
    let mut set = ObservationSet::new(covariates, treatment, outcomes)?.with_units(units)?;
    if groups.iter().all(Option::is_some) && !groups.is_empty() {
        set = set.with_groups(groups.into_iter().map(|g| g.expect("checked")).collect())?;
    } else if groups.iter().any(Option::is_some) {
        return Err(Error::Data(
            "group labels must be given for every unit or none".into(),
        ));
    }
    Ok(set)
}

/// Reads `unit,treatment,x1..xp[,group],q1..qM`.
pub fn ingest_embedded(path: &Path, kind: GridKind) -> Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = read_header(reader.headers()?, &["unit", "treatment"])?;
    if header.q_cols.len() < 2 {
        return Err(Error::Data(
            "embedded CSV needs at least columns q1, q2".into(),
        ));
    }
    let (cu, ct) = (header.index["unit"], header.index["treatment"]);
    let (mut units, mut xs, mut ts, mut vs, mut gs) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        units.push(rec[cu].to_string());
        ts.push(parse_f64(&rec[ct], "treatment", line)?);
        xs.push(
            header
                .x_cols
                .iter()
                .map(|&c| parse_f64(&rec[c], "covariate", line))
                .collect::<Result<Vec<_>>>()?,
        );
        let q = header
            .q_cols
            .iter()
            .map(|&c| parse_f64(&rec[c], "coordinate", line))
            .collect::<Result<Vec<_>>>()?;
        if kind == GridKind::ProbabilityGrid && q.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data(format!(
                "line {line}: quantile values decrease"
            )));
        }
        vs.push(HilbertVector::new(q, kind)?);
        gs.push(header.group_col.map(|c| rec[c].to_string()));
    }
    if units.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())));
    }
    assemble(units, xs, ts, vs, gs)
}

/// Writes an observation set in the pre-embedded schema.
pub fn write_embedded(data: &ObservationSet, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string(), "treatment".to_string()];
    header.extend((1..=data.p()).map(|k| format!("x{k}")));
    if data.groups().is_some() {
        header.push("group".into());
    }
    header.extend((1..=data.grid_len()).map(|k| format!("q{k}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.units()[i].clone(), num(data.treatment()[i])];
        row.extend(data.x(i).iter().map(|&v| num(v)));
        if let Some(g) = data.groups() {
            row.push(g[i].clone());
        }
        row.extend(data.outcomes()[i].values().iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn record(age_lo: Vec<f64>, deaths: Vec<f64>) -> LifeTableRecord {
        LifeTableRecord {
            unit: "u".into(),
            age_lo,
            deaths,
            treatment: 1.0,
            covariates: vec![0.5],
            group: None,
        }
    }

    #[test]
    fn single_bin_stays_near_its_support() {
        let ages: Vec<f64> = (0..22).map(|k| 5.0 * k as f64).collect();
        let mut deaths = vec![0.0; 22];
        deaths[12] = 40.0;
        let r = record(ages, deaths);
        let bw = 2.0;
        let opts = LifeTableOptions {
            bandwidth: bw,
            grid_len: 99,
            age_range: Some([0.0, 110.0]),
        };
        let q = r.quantiles(&opts).unwrap();
        assert!(q
            .iter()
            .all(|v| *v >= 60.0 - 3.0 * bw && *v <= 65.0 + 3.0 * bw));
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        // symmetric mass: median at the bin centre
        assert_abs_diff_eq!(q[49], 62.5, epsilon = 1e-3);
    }

    #[test]
    fn uniform_counts_without_smoothing_give_uniform_quantiles() {
        let ages: Vec<f64> = (0..20).map(|k| 5.0 * k as f64).collect();
        let r = record(ages, vec![7.0; 20]);
        let opts = LifeTableOptions {
            bandwidth: 0.0,
            grid_len: 51,
            age_range: None,
        };
        let q = r.quantiles(&opts).unwrap();
        for (v, p) in q.iter().zip(probability_grid(51)) {
            assert_abs_diff_eq!(*v, 100.0 * p, epsilon = 1e-9);
        }
        assert!((q[25] - 50.0).abs() <= 0.5);
        // tiny bandwidth agrees with the raw histogram away from the edges
        let smooth = r
            .quantiles(&LifeTableOptions {
                bandwidth: 1e-3,
                ..opts
            })
            .unwrap();
        assert!((smooth[25] - 50.0).abs() <= 0.5);
    }

    #[test]
    fn smoothed_uniform_matches_numeric_integration() {
        // independent oracle: trapezoid integration of the smoothed density
        let r = record(vec![0.0, 10.0], vec![1.0, 3.0]);
        let bw = 2.0;
        let (lo, hi) = (0.0, 20.0);
        let dens = |a: f64| {
            0.25 / 10.0 * (normal_cdf(a / bw) - normal_cdf((a - 10.0) / bw))
                + 0.75 / 10.0 * (normal_cdf((a - 10.0) / bw) - normal_cdf((a - 20.0) / bw))
        };
        let k = 200_000;
        let step = (hi - lo) / k as f64;
        let mut cum = vec![0.0];
        for i in 0..k {
            let a = lo + i as f64 * step;
            cum.push(cum[i] + 0.5 * step * (dens(a) + dens(a + step)));
        }
        let total = cum[k];
        let q = r
            .quantiles(&LifeTableOptions {
                bandwidth: bw,
                grid_len: 9,
                age_range: None,
            })
            .unwrap();
        for (v, p) in q.iter().zip(probability_grid(9)) {
            let idx = cum.partition_point(|c| *c / total < p);
            let oracle = lo + idx as f64 * step;
            assert!((v - oracle).abs() < 1e-3, "{v} vs {oracle}");
        }
    }

    #[test]
    fn scale_invariance() {
        let r = record(vec![0.0, 5.0, 10.0, 15.0], vec![1.0, 4.0, 2.0, 9.0]);
        let mut s = r.clone();
        s.deaths.iter_mut().for_each(|d| *d *= 37.5);
        let opts = LifeTableOptions::default();
        let a = r.quantiles(&opts).unwrap();
        let b = s.quantiles(&opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_records() {
        assert!(record(vec![0.0, 5.0], vec![0.0, 0.0])
            .quantiles(&LifeTableOptions::default())
            .is_err());
        assert!(record(vec![5.0, 0.0], vec![1.0, 1.0])
            .quantiles(&LifeTableOptions::default())
            .is_err());
        assert!(record(vec![0.0, 5.0], vec![-1.0, 2.0])
            .quantiles(&LifeTableOptions::default())
            .is_err());
        let e = record(vec![0.0], vec![1.0]).edges();
        assert_eq!(e, vec![0.0, 5.0]);
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lt.csv");
        std::fs::write(
            &path,
            "unit,age_lo,deaths,treatment,x1,x2,group\n\
             a,0,1,2.5,1,0,g1\na,5,3,2.5,1,0,g1\na,10,2,2.5,1,0,g1\n\
             b,0,4,3.5,-1,1,g2\nb,5,1,3.5,-1,1,g2\nb,10,1,3.5,-1,1,g2\n",
        )
        .unwrap();
        let d = ingest_life_tables(&path, &LifeTableOptions::default()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.groups().unwrap(), ["g1", "g2"]);
        let emb = dir.path().join("emb.csv");
        write_embedded(&d, std::fs::File::create(&emb).unwrap()).unwrap();
        let back = ingest_embedded(&emb, GridKind::ProbabilityGrid).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn inconsistent_units_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "unit,age_lo,deaths,treatment,x1\na,0,1,2.5,1\na,5,3,2.6,1\n",
        )
        .unwrap();
        assert!(matches!(read_life_tables(&path), Err(Error::Data(_))));
        std::fs::write(&path, "unit,age_lo,treatment\na,0,1\n").unwrap();
        assert!(read_life_tables(&path).is_err());
    }

    #[test]
    fn two_identical_records_embed_identically() {
        let r = record(vec![0.0, 5.0, 10.0], vec![1.0, 2.0, 3.0]);
        let mut s = r.clone();
        s.unit = "v".into();
        let d = life_tables_to_observations(&[r, s], &LifeTableOptions::default()).unwrap();
        assert_eq!(d.outcomes()[0].distance(&d.outcomes()[1]).unwrap(), 0.0);
    }
}
