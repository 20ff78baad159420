//! Long-format panel CSV and flat `key = value` config files.
//!
//! A panel file has one row per (unit, time) with columns for the unit id,
//! an integer time label, the outcome, and any number of numeric covariates.
//! Empty or `NA` covariate cells read as missing (`NaN`); outcomes must be
//! present and finite. Units keep their order of first appearance and times
//! are sorted ascending.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::{Covariate, Panel};

/// Column names of the identifying fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub unit_col: String,
    pub time_col: String,
    pub outcome_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit_col: "unit_id".into(),
            time_col: "time".into(),
            outcome_col: "outcome".into(),
        }
    }
}

impl CsvSchema {
    /// Column names from the `unit_col`, `time_col` and `outcome_col` keys,
    /// falling back to the defaults.
    pub fn from_config(config: &Config) -> Self {
        let d = CsvSchema::default();
        CsvSchema {
            unit_col: config.get("unit_col").map_or(d.unit_col, str::to_string),
            time_col: config.get("time_col").map_or(d.time_col, str::to_string),
            outcome_col: config.get("outcome_col").map_or(d.outcome_col, str::to_string),
        }
    }
}

/// A validated rectangular panel before the treated unit and treatment time
/// are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub unit_ids: Vec<String>,
    pub times: Vec<i64>,
    /// `units × times`.
    pub outcomes: Matrix,
    pub covariates: Vec<Covariate>,
}

impl RawPanel {
    /// `last_pre_time` is the label of the final pre-treatment period.
    pub fn into_panel(self, treated_id: &str, last_pre_time: i64) -> Result<Panel> {
        let treated = self
            .unit_ids
            .iter()
            .position(|u| u == treated_id)
            .ok_or_else(|| Error::schema(None, format!("treated unit `{treated_id}` not found")))?;
        let tau0 = self
            .times
            .iter()
            .position(|&t| t == last_pre_time)
            .ok_or_else(|| {
                Error::schema(None, format!("last pre-treatment time {last_pre_time} not in panel"))
            })?
            + 1;
        if tau0 >= self.times.len() {
            return Err(Error::schema(
                None,
                format!("no post-treatment periods after {last_pre_time}"),
            ));
        }
        let mut panel = Panel::new(self.outcomes, self.unit_ids, self.times, treated, tau0)?;
        for c in self.covariates {
            panel = panel.with_covariate(c.name, c.values)?;
        }
        Ok(panel)
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return None;
    }
    s.parse().ok()
}

/// Reads and validates a long-format panel.
pub fn read_long_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<RawPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(Some(1), format!("missing column `{name}`")))
    };
    let (ui, ti, yi) = (find(&schema.unit_col)?, find(&schema.time_col)?, find(&schema.outcome_col)?);
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![ui, ti, yi].contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    {
        let mut seen = std::collections::HashSet::new();
        if let Some(h) = headers.iter().find(|h| !seen.insert(*h)) {
            return Err(Error::schema(Some(1), format!("duplicate column `{h}`")));
        }
    }

    struct Cell {
        line: usize,
        outcome: f64,
        covs: Vec<f64>,
    }
    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<BTreeMap<i64, Cell>> = Vec::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let unit = rec.get(ui).unwrap_or("").to_string();
        if unit.is_empty() {
            return Err(Error::schema(Some(line), "empty unit id"));
        }
        let time_raw = rec.get(ti).unwrap_or("");
        let time: i64 = time_raw.parse().map_err(|_| {
            Error::schema(Some(line), format!("time `{time_raw}` is not an integer"))
        })?;
        let y_raw = rec.get(yi).unwrap_or("");
        let outcome = match y_raw.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                return Err(Error::schema(
                    Some(line),
                    format!("outcome `{y_raw}` is not a finite number"),
                ))
            }
        };
        let mut covs = Vec::with_capacity(cov_cols.len());
        for (i, name) in &cov_cols {
            let raw = rec.get(*i).unwrap_or("");
            match parse_cell(raw) {
                Some(v) if v.is_finite() => covs.push(v),
                None if raw.trim().is_empty() || raw.trim().eq_ignore_ascii_case("na") => {
                    covs.push(f64::NAN)
                }
                _ => {
                    return Err(Error::schema(
                        Some(line),
                        format!("covariate `{name}` value `{raw}` is not numeric"),
                    ))
                }
            }
        }
        let u = *unit_pos.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            cells.push(BTreeMap::new());
            units.len() - 1
        });
        if let Some(prev) = cells[u].get(&time) {
            return Err(Error::schema(
                Some(line),
                format!(
                    "duplicate row for unit `{unit}` at time {time} (first seen at line {})",
                    prev.line
                ),
            ));
        }
        cells[u].insert(time, Cell { line, outcome, covs });
    }

    if units.is_empty() {
        return Err(Error::schema(None, "no data rows"));
    }
    let mut all_times: Vec<i64> = cells.iter().flat_map(|c| c.keys().copied()).collect();
    all_times.sort_unstable();
    all_times.dedup();
    for (u, c) in cells.iter().enumerate() {
        if c.len() != all_times.len() {
            let missing = all_times.iter().find(|t| !c.contains_key(t)).expect("ragged");
            let first_line = c.values().map(|x| x.line).min();
            return Err(Error::schema(
                first_line,
                format!(
                    "ragged panel: unit `{}` has {} of {} periods (missing time {missing})",
                    units[u],
                    c.len(),
                    all_times.len()
                ),
            ));
        }
    }

    let (n, t) = (units.len(), all_times.len());
    let outcomes = Matrix::from_fn(n, t, |u, j| cells[u][&all_times[j]].outcome);
    let covariates = cov_cols
        .iter()
        .enumerate()
        .map(|(k, (_, name))| Covariate {
            name: name.clone(),
            values: Matrix::from_fn(n, t, |u, j| cells[u][&all_times[j]].covs[k]),
        })
        .collect();
    Ok(RawPanel {
        unit_ids: units,
        times: all_times,
        outcomes,
        covariates,
    })
}

pub fn read_long_csv_path(path: &Path, schema: &CsvSchema) -> Result<RawPanel> {
    read_long_csv(File::open(path)?, schema)
}

/// Reads the panel file with column names, treated unit (`treated`) and last
/// pre-treatment time label (`tau0`) taken from the config file.
pub fn load_panel(csv_path: &Path, config_path: &Path) -> Result<Panel> {
    let config = Config::from_path(config_path)?;
    load_panel_with(csv_path, &config)
}

pub fn load_panel_with(csv_path: &Path, config: &Config) -> Result<Panel> {
    let raw = read_long_csv_path(csv_path, &CsvSchema::from_config(config))?;
    let treated = config.require("treated")?;
    let tau0: i64 = config.parse("tau0")?.ok_or_else(|| Error::Config("missing key `tau0`".into()))?;
    raw.into_panel(treated, tau0)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the panel in long format with the given column names. Missing
/// covariate cells are written empty.
pub fn write_long_csv<W: Write>(panel: &Panel, schema: &CsvSchema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![schema.unit_col.clone(), schema.time_col.clone(), schema.outcome_col.clone()];
    header.extend(panel.covariates().iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for u in 0..panel.n_units() {
        for (j, t) in panel.times().iter().enumerate() {
            let mut rec = vec![
                panel.unit_ids()[u].clone(),
                t.to_string(),
                fmt_num(panel.outcomes()[(u, j)]),
            ];
            rec.extend(panel.covariates().iter().map(|c| fmt_num(c.values[(u, j)])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Converts a wide file (first column unit id, remaining headers integer time
/// labels, cells outcomes) to the long format.
pub fn wide_to_long<R: Read, W: Write>(input: R, schema: &CsvSchema, out: W) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::schema(Some(1), "wide file needs a unit column and time columns"));
    }
    let times: Vec<i64> = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.parse()
                .map_err(|_| Error::schema(Some(1), format!("time header `{h}` is not an integer")))
        })
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([&schema.unit_col, &schema.time_col, &schema.outcome_col])?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let unit = rec.get(0).unwrap_or("");
        for (k, t) in times.iter().enumerate() {
            let v = rec.get(k + 1).unwrap_or("");
            w.write_record([unit, &t.to_string(), v])?;
        }
        if rec.len() != headers.len() {
            return Err(Error::schema(Some(line), "row length differs from header"));
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` settings. Blank lines and lines starting with `#` are
/// ignored; keys may not repeat.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(Config { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an absent key or empty value gives an empty list.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        match self.get(key) {
            None | Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse()
                        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{s}`")))
                })
                .collect(),
        }
    }

    /// Errors on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}
