//! Bit-stable CSV and JSON output.
//!
//! Reals are written in scientific notation with 17 significant digits, which
//! round-trips every `f64` and makes reruns byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::coupling::Sign;
use crate::engine::{CltReport, MixingReport, MomentsReport, Report, SimulateReport, SmallTimeReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Missing,
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Real)
    }
}

/// `{:.16e}`: 17 significant digits.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn format_cell(cell: &Cell) -> String {
    match cell {
        Cell::Int(v) => v.to_string(),
        Cell::Real(v) => format_real(*v),
        Cell::Text(s) => s.clone(),
        Cell::Missing => String::new(),
    }
}

/// Header plus rows with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(format_cell).collect();
            writeln!(out, "{}", line.join(",")).expect("writing to a String");
        }
        out
    }
}

pub fn clt_table(r: &CltReport) -> Table {
    let mut t = Table::new(&["rep", "Y"]);
    for (rep, &y) in r.y.iter().enumerate() {
        t.push(vec![rep.into(), y.into()]);
    }
    t
}

pub fn moments_table(r: &MomentsReport) -> Table {
    let mut t = Table::new(&["t", "p", "estimate", "stderr"]);
    for row in &r.rows {
        t.push(vec![
            row.t.into(),
            row.p.into(),
            row.estimate.value.into(),
            row.estimate.stderr.into(),
        ]);
    }
    t
}

pub fn smalltime_table(r: &SmallTimeReport) -> Table {
    let mut t = Table::new(&["t", "sigma2_over_t", "stderr"]);
    for row in &r.rows {
        t.push(vec![
            row.t.into(),
            row.sigma2_over_t.value.into(),
            row.sigma2_over_t.stderr.into(),
        ]);
    }
    t
}

fn sign_name(sign: Sign) -> &'static str {
    match sign {
        Sign::Plus => "plus",
        Sign::Minus => "minus",
    }
}

pub fn mixing_table(r: &MixingReport) -> Table {
    let mut t = Table::new(&["kind", "l", "param", "t", "estimate", "stderr", "oracle"]);
    for g in &r.gap {
        t.push(vec![
            "gap".into(),
            0i64.into(),
            g.j.into(),
            g.t.into(),
            g.estimate.value.into(),
            g.estimate.stderr.into(),
            g.oracle.into(),
        ]);
        t.push(vec![
            "gap_refined".into(),
            0i64.into(),
            g.j.into(),
            g.t.into(),
            g.refined.value.into(),
            g.refined.stderr.into(),
            g.oracle.into(),
        ]);
    }
    for u in &r.union.rows {
        t.push(vec![
            "union".into(),
            0i64.into(),
            u.n.into(),
            u.t.into(),
            u.estimate.value.into(),
            u.estimate.stderr.into(),
            Cell::Missing,
        ]);
    }
    if let Some(fit) = &r.union.rate_fit {
        t.push(vec![
            "union_rate".into(),
            0i64.into(),
            fit.points.into(),
            r.union.rows.first().map_or(Cell::Missing, |u| u.t.into()),
            fit.slope.into(),
            fit.slope_stderr.into(),
            Cell::Missing,
        ]);
    }
    for c in &r.coupling {
        let kind = format!("coupling_{}_p{}", sign_name(c.sign), c.p);
        let rate = if c.occurrences == 0 {
            Cell::Missing
        } else {
            (c.agreements as f64 / c.occurrences as f64).into()
        };
        t.push(vec![
            Cell::Text(kind),
            0i64.into(),
            c.j.into(),
            c.t.into(),
            rate,
            0.0.into(),
            1.0.into(),
        ]);
    }
    let d = &r.decay;
    for ((&k, &c), &se) in d.series.lags.iter().zip(&d.series.cov_hat).zip(&d.series.stderr) {
        t.push(vec![
            "cov".into(),
            0i64.into(),
            k.into(),
            d.t.into(),
            c.into(),
            se.into(),
            Cell::Missing,
        ]);
    }
    if let Some(fit) = &d.fit {
        t.push(vec![
            "decay_slope".into(),
            0i64.into(),
            fit.points.into(),
            d.t.into(),
            fit.slope.into(),
            fit.slope_stderr.into(),
            Cell::Missing,
        ]);
    }
    t
}

pub fn simulate_table(r: &SimulateReport) -> Table {
    let mut t = Table::new(&["rep", "k", "i", "t", "x", "mass"]);
    for real in &r.realizations {
        for (i, (row, masses)) in real.positions.iter().zip(&real.masses).enumerate() {
            for (offset, (&x, &m)) in row.iter().zip(masses).enumerate() {
                t.push(vec![
                    real.rep.into(),
                    (real.lo + offset as i64).into(),
                    i.into(),
                    real.times[i].into(),
                    x.into(),
                    m.into(),
                ]);
            }
        }
    }
    t
}

/// `(rep, k, A_k)` rows of the occupation functionals recorded by `simulate`.
pub fn occupation_table(r: &SimulateReport) -> Table {
    let mut t = Table::new(&["rep", "k", "A_k"]);
    for real in &r.realizations {
        let s = &real.occupation;
        for (offset, &a) in s.values.iter().enumerate() {
            t.push(vec![real.rep.into(), (s.window.0 + offset as i64).into(), a.into()]);
        }
    }
    t
}

pub fn report_table(report: &Report) -> Table {
    match report {
        Report::Simulate(r) => simulate_table(r),
        Report::Clt(r) => clt_table(r),
        Report::Moments(r) => moments_table(r),
        Report::Mixing(r) => mixing_table(r),
        Report::Smalltime(r) => smalltime_table(r),
    }
}

pub fn render(report: &Report, format: Format) -> Result<String> {
    Ok(match format {
        Format::Csv => report_table(report).to_csv(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    })
}

pub fn write_report(report: &Report, format: Format, path: &Path) -> Result<()> {
    fs::write(path, render(report, format)?)?;
    Ok(())
}

pub fn read_json_report(path: &Path) -> Result<Report> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Where a configuration value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
    Env,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub provenance: BTreeMap<String, Source>,
    pub config_file: Option<PathBuf>,
    pub master_seed: u64,
    pub outputs: BTreeMap<String, PathBuf>,
    pub failed: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, provenance: BTreeMap<String, Source>, config_file: Option<PathBuf>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            master_seed: config.seed,
            config,
            provenance,
            config_file,
            outputs: BTreeMap::new(),
            failed: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    /// Every listed output exists and is non-empty.
    pub fn check_outputs(&self) -> Result<()> {
        for (name, path) in &self.outputs {
            let len = fs::metadata(path)?.len();
            if len == 0 {
                return Err(Error::Internal(format!("output `{name}` at {} is empty", path.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SimulateReport;

    #[test]
    fn reals_have_17_significant_digits() {
        assert_eq!(format_real(1.0), "1.0000000000000000e0");
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(format_real(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = Report::Simulate(SimulateReport { realizations: vec![] });
        assert_eq!(render(&r, Format::Csv).unwrap(), "rep,k,i,t,x,mass\n");
    }

    #[test]
    fn missing_cells_are_empty() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1i64.into(), Cell::Missing]);
        assert_eq!(t.to_csv(), "a,b\n1,\n");
    }
}
