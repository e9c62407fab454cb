//! Balanced panel input, transformations and CSV round-tripping.
//!
//! Wire format: a header row with a date column followed by one column per
//! panel series named `INDICATOR.COUNTRY` and one per global series, either
//! `GLOBAL.NAME` or a bare name listed in [`PanelSchema::globals`]. Columns
//! are stored indicator-major: all countries of the first indicator, then
//! the second indicator, and so on.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GLOBAL_PREFIX: &str = "GLOBAL.";

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    /// T × (m·n), indicator-major.
    pub values: DMatrix<f64>,
    /// T × k.
    pub globals: DMatrix<f64>,
    pub indicator_labels: Vec<String>,
    pub country_labels: Vec<String>,
    pub global_labels: Vec<String>,
    pub time_index: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    /// Name of the date column; the first column when unset.
    pub date_column: Option<String>,
    /// Bare column names to treat as global series.
    pub globals: Vec<String>,
    /// Fixes the indicator order (and rejects others) when non-empty.
    pub indicators: Vec<String>,
    /// Fixes the country order (and rejects others) when non-empty.
    pub countries: Vec<String>,
}

impl PanelData {
    pub fn m(&self) -> usize {
        self.indicator_labels.len()
    }

    pub fn n(&self) -> usize {
        self.country_labels.len()
    }

    pub fn k(&self) -> usize {
        self.global_labels.len()
    }

    pub fn t_len(&self) -> usize {
        self.time_index.len()
    }

    /// Column of series (indicator `i`, country `j`).
    pub fn column(&self, i: usize, j: usize) -> usize {
        i * self.n() + j
    }

    pub fn series_label(&self, i: usize, j: usize) -> String {
        format!("{}.{}", self.indicator_labels[i], self.country_labels[j])
    }

    /// `(indicator, country)` labels in column order.
    pub fn unstack_labels(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(self.m() * self.n());
        for i in &self.indicator_labels {
            for j in &self.country_labels {
                out.push((i.clone(), j.clone()));
            }
        }
        out
    }

    pub fn series(&self, i: usize, j: usize) -> Vec<f64> {
        self.values.column(self.column(i, j)).iter().copied().collect()
    }

    /// Keep the first `t` periods.
    pub fn truncate(&self, t: usize) -> Result<PanelData> {
        if t == 0 || t > self.t_len() {
            return Err(Error::Panel(format!(
                "cannot truncate a {}-period panel to {t} periods",
                self.t_len()
            )));
        }
        Ok(PanelData {
            values: self.values.rows(0, t).into_owned(),
            globals: self.globals.rows(0, t).into_owned(),
            indicator_labels: self.indicator_labels.clone(),
            country_labels: self.country_labels.clone(),
            global_labels: self.global_labels.clone(),
            time_index: self.time_index[..t].to_vec(),
        })
    }

    /// Drop the global series.
    pub fn without_globals(&self) -> PanelData {
        PanelData {
            globals: DMatrix::zeros(self.t_len(), 0),
            global_labels: Vec::new(),
            ..self.clone()
        }
    }

    /// Single-series panel for indicator `i`, country `j`, optionally keeping
    /// the globals.
    pub fn select_series(&self, i: usize, j: usize, keep_globals: bool) -> PanelData {
        let col = self.values.column(self.column(i, j)).into_owned();
        PanelData {
            values: DMatrix::from_column_slice(self.t_len(), 1, col.as_slice()),
            globals: if keep_globals {
                self.globals.clone()
            } else {
                DMatrix::zeros(self.t_len(), 0)
            },
            indicator_labels: vec![self.indicator_labels[i].clone()],
            country_labels: vec![self.country_labels[j].clone()],
            global_labels: if keep_globals {
                self.global_labels.clone()
            } else {
                Vec::new()
            },
            time_index: self.time_index.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t_len();
        if self.values.nrows() != t || self.globals.nrows() != t {
            return Err(Error::Panel("row count does not match the time index".into()));
        }
        if self.values.ncols() != self.m() * self.n() || self.globals.ncols() != self.k() {
            return Err(Error::Panel("column count does not match the labels".into()));
        }
        for w in self.time_index.windows(2) {
            let a = parse_date(&w[0])?;
            let b = parse_date(&w[1])?;
            if b <= a {
                return Err(Error::Panel(format!(
                    "dates must be strictly increasing: `{}` follows `{}`",
                    w[1], w[0]
                )));
            }
        }
        for (c, col) in self.values.column_iter().enumerate() {
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                let (i, j) = (c / self.n(), c % self.n());
                return Err(Error::MissingValue {
                    row: r,
                    date: self.time_index[r].clone(),
                    column: self.series_label(i, j),
                });
            }
        }
        for (c, col) in self.globals.column_iter().enumerate() {
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue {
                    row: r,
                    date: self.time_index[r].clone(),
                    column: self.global_labels[c].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        for i in 0..self.m() {
            for j in 0..self.n() {
                header.push(self.series_label(i, j));
            }
        }
        for g in &self.global_labels {
            header.push(format!("{GLOBAL_PREFIX}{g}"));
        }
        w.write_record(&header)?;
        for t in 0..self.t_len() {
            let mut rec = vec![self.time_index[t].clone()];
            rec.extend(self.values.row(t).iter().map(|v| format_float(*v)));
            rec.extend(self.globals.row(t).iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Sort key of a date stamp: `YYYY-MM-DD`, `YYYY-MM` or `YYYYMmm`.
pub fn parse_date(s: &str) -> Result<(i32, u32, u32)> {
    let bad = || Error::Panel(format!("unrecognized date `{s}`"));
    let s = s.trim();
    if let Some((y, m)) = s.split_once(['M', 'm']) {
        let y: i32 = y.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&m) {
            return Err(bad());
        }
        return Ok((y, m, 1));
    }
    let parts: Vec<&str> = s.split('-').collect();
    let (y, m, d) = match parts.as_slice() {
        [y, m] => (y, m, "1"),
        [y, m, d] => (y, m, *d),
        _ => return Err(bad()),
    };
    let y: i32 = y.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    let d: u32 = d.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return Err(bad());
    }
    Ok((y, m, d))
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    match s.to_ascii_lowercase().as_str() {
        "na" | "nan" | "null" | "." => None,
        _ => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

enum ColumnRole {
    Date,
    Series(usize, usize),
    Global(usize),
}

pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<PanelData> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(Error::Panel("empty header row".into()));
    }
    let date_pos = match &schema.date_column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Panel(format!("date column `{name}` not found")))?,
        None => 0,
    };

    let mut indicators: Vec<String> = schema.indicators.clone();
    let mut countries: Vec<String> = schema.countries.clone();
    let fixed_ind = !indicators.is_empty();
    let fixed_cty = !countries.is_empty();
    let mut globals: Vec<String> = Vec::new();
    let mut raw_roles: Vec<(String, String, bool)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        if c == date_pos {
            raw_roles.push((String::new(), String::new(), false));
            continue;
        }
        if let Some(g) = h.strip_prefix(GLOBAL_PREFIX) {
            raw_roles.push((g.to_string(), String::new(), true));
            continue;
        }
        if schema.globals.iter().any(|g| g == h) {
            raw_roles.push((h.clone(), String::new(), true));
            continue;
        }
        let Some((ind, cty)) = h.split_once('.') else {
            return Err(Error::Panel(format!(
                "unknown column `{h}`: expected INDICATOR.COUNTRY, GLOBAL.NAME or a declared global"
            )));
        };
        if ind.is_empty() || cty.is_empty() {
            return Err(Error::Panel(format!("unknown column `{h}`")));
        }
        raw_roles.push((ind.to_string(), cty.to_string(), false));
    }

    let mut roles = Vec::with_capacity(headers.len());
    for (c, (a, b, is_global)) in raw_roles.iter().enumerate() {
        if c == date_pos {
            roles.push(ColumnRole::Date);
        } else if *is_global {
            if globals.contains(a) {
                return Err(Error::Panel(format!("duplicate global `{a}`")));
            }
            globals.push(a.clone());
            roles.push(ColumnRole::Global(globals.len() - 1));
        } else {
            let i = match indicators.iter().position(|x| x == a) {
                Some(i) => i,
                None if !fixed_ind => {
                    indicators.push(a.clone());
                    indicators.len() - 1
                }
                None => {
                    return Err(Error::Panel(format!("unknown indicator in column `{}`", headers[c])))
                }
            };
            let j = match countries.iter().position(|x| x == b) {
                Some(j) => j,
                None if !fixed_cty => {
                    countries.push(b.clone());
                    countries.len() - 1
                }
                None => {
                    return Err(Error::Panel(format!("unknown country in column `{}`", headers[c])))
                }
            };
            roles.push(ColumnRole::Series(i, j));
        }
    }
    let m = indicators.len();
    let n = countries.len();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (c, r) in roles.iter().enumerate() {
        if let ColumnRole::Series(i, j) = r {
            if seen.insert((*i, *j), c).is_some() {
                return Err(Error::Panel(format!("duplicate series `{}`", headers[c])));
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            if !seen.contains_key(&(i, j)) {
                return Err(Error::Panel(format!(
                    "unbalanced panel: series `{}.{}` is missing",
                    indicators[i], countries[j]
                )));
            }
        }
    }
    if m * n == 0 && globals.is_empty() {
        return Err(Error::Panel("no data columns".into()));
    }

    let mut dates = Vec::new();
    let mut rows_values: Vec<Vec<f64>> = Vec::new();
    let mut rows_globals: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Panel(format!(
                "row {r} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let date = rec[date_pos].trim().to_string();
        parse_date(&date)?;
        let mut vals = vec![0.0; m * n];
        let mut gl = vec![0.0; globals.len()];
        for (c, role) in roles.iter().enumerate() {
            let slot = match role {
                ColumnRole::Date => continue,
                ColumnRole::Series(i, j) => &mut vals[i * n + j],
                ColumnRole::Global(g) => &mut gl[*g],
            };
            *slot = parse_cell(&rec[c]).ok_or_else(|| Error::MissingValue {
                row: r,
                date: date.clone(),
                column: headers[c].clone(),
            })?;
        }
        dates.push(date);
        rows_values.push(vals);
        rows_globals.push(gl);
    }
    let t = dates.len();
    if t == 0 {
        return Err(Error::Panel("no data rows".into()));
    }
    let panel = PanelData {
        values: DMatrix::from_fn(t, m * n, |r, c| rows_values[r][c]),
        globals: DMatrix::from_fn(t, globals.len(), |r, c| rows_globals[r][c]),
        indicator_labels: indicators,
        country_labels: countries,
        global_labels: globals,
        time_index: dates,
    };
    panel.validate()?;
    Ok(panel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Level,
    YoyLogGrowth,
    MomLogGrowth,
}

impl Transform {
    fn lag(self) -> usize {
        match self {
            Transform::Level => 0,
            Transform::YoyLogGrowth => 12,
            Transform::MomLogGrowth => 1,
        }
    }
}

/// Per-series transformation codes. Keys are full series labels
/// (`HICP.AT`), indicator names (`HICP`, applying to every country) or
/// global names; unlisted series use `default`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformSpec {
    pub default: Transform,
    pub series: BTreeMap<String, Transform>,
}

impl TransformSpec {
    pub fn level() -> Self {
        Self::default()
    }

    fn code_for(&self, label: &str, indicator: Option<&str>) -> Transform {
        if let Some(c) = self.series.get(label) {
            return *c;
        }
        if let Some(c) = indicator.and_then(|i| self.series.get(i)) {
            return *c;
        }
        self.default
    }
}

fn apply(x: &[f64], code: Transform, label: &str) -> Result<Vec<f64>> {
    let lag = code.lag();
    if lag == 0 {
        return Ok(x.to_vec());
    }
    if x.len() < lag + 1 {
        return Err(Error::InsufficientSample(format!(
            "series `{label}` needs at least {} observations for its transform",
            lag + 1
        )));
    }
    if let Some(v) = x.iter().find(|v| **v <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "series `{label}` has nonpositive value {v} under a log transform"
        )));
    }
    Ok((lag..x.len())
        .map(|t| 100.0 * (x[t].ln() - x[t - lag].ln()))
        .collect())
}

/// Apply the transforms and trim every series to the common sample.
pub fn transform_series(panel: &PanelData, spec: &TransformSpec) -> Result<PanelData> {
    let mut codes = Vec::new();
    for i in 0..panel.m() {
        for j in 0..panel.n() {
            codes.push(spec.code_for(&panel.series_label(i, j), Some(&panel.indicator_labels[i])));
        }
    }
    let gcodes: Vec<Transform> = panel
        .global_labels
        .iter()
        .map(|g| spec.code_for(g, None))
        .collect();
    let max_lag = codes.iter().chain(&gcodes).map(|c| c.lag()).max().unwrap_or(0);
    let t = panel.t_len();
    if t <= max_lag {
        return Err(Error::InsufficientSample(format!(
            "{t} periods cannot support a {max_lag}-period transform"
        )));
    }
    let t_out = t - max_lag;
    let mut values = DMatrix::zeros(t_out, panel.values.ncols());
    for (c, code) in codes.iter().enumerate() {
        let (i, j) = (c / panel.n(), c % panel.n());
        let x: Vec<f64> = panel.values.column(c).iter().copied().collect();
        let y = apply(&x, *code, &panel.series_label(i, j))?;
        let skip = y.len() - t_out;
        for r in 0..t_out {
            values[(r, c)] = y[skip + r];
        }
    }
    let mut globals = DMatrix::zeros(t_out, panel.k());
    for (g, code) in gcodes.iter().enumerate() {
        let x: Vec<f64> = panel.globals.column(g).iter().copied().collect();
        let y = apply(&x, *code, &panel.global_labels[g])?;
        let skip = y.len() - t_out;
        for r in 0..t_out {
            globals[(r, g)] = y[skip + r];
        }
    }
    Ok(PanelData {
        values,
        globals,
        indicator_labels: panel.indicator_labels.clone(),
        country_labels: panel.country_labels.clone(),
        global_labels: panel.global_labels.clone(),
        time_index: panel.time_index[max_lag..].to_vec(),
    })
}
