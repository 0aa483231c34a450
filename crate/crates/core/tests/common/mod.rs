//! Synthetic life-table fixture shared by integration tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use frechet_dose::rng::substream;
use frechet_dose::stats::std_normal;
use rand::Rng;

pub const COUNTIES: usize = 50;
pub const BIN_WIDTH: f64 = 5.0;
pub const BINS: usize = 22;
pub const GROUPS: [&str; 4] = ["north", "south", "east", "west"];

/// Long-format life tables for `COUNTIES` counties over [0, 110): Gompertz
/// shaped death counts whose mode shifts with treatment and covariates.
pub fn life_table_csv(seed: u64, scale: f64) -> String {
    let mut rng = substream(seed, 0x11FE);
    let mut s = String::from("unit,age_lo,deaths,treatment,x1,x2,x3,group\n");
    for c in 0..COUNTIES {
        let x: Vec<f64> = (0..3).map(|_| std_normal(&mut rng)).collect();
        let t = 8.0 + 2.0 * x[0] + std_normal(&mut rng);
        let mode = 78.0 - 0.6 * t + 1.5 * x[1];
        let group = GROUPS[c % GROUPS.len()];
        for b in 0..BINS {
            let mid = (b as f64 + 0.5) * BIN_WIDTH;
            let z = (mid - mode) / 9.0;
            let infant = if b == 0 { 0.02 } else { 0.0 };
            let rate = (z - z.exp()).exp() + infant + 1e-3 * rng.random::<f64>();
            let deaths = (1000.0 * rate).round() * scale;
            writeln!(
                s,
                "county{c:02},{},{deaths},{t},{},{},{},{group}",
                b as f64 * BIN_WIDTH,
                x[0],
                x[1],
                x[2]
            )
            .unwrap();
        }
    }
    s
}

pub fn write_life_tables(path: &Path, seed: u64, scale: f64) {
    std::fs::write(path, life_table_csv(seed, scale)).unwrap();
}
