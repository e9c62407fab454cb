//! Quantile scores, equal-accuracy t-statistics and factor commonalities.
//!
//! Scores use the nonnegative tick loss `(q − 1{y ≤ Q})(y − Q)`, so lower is
//! better. [`ScoreConvention::Printed`] gives the sign-flipped variant
//! `(y − Q)(1{y ≤ Q} − q)` for comparison with tables computed that way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreConvention {
    #[default]
    Tick,
    Printed,
}

pub fn quantile_score(y: f64, quantile: f64, q: f64) -> f64 {
    let ind = if y <= quantile { 1.0 } else { 0.0 };
    (q - ind) * (y - quantile)
}

pub fn quantile_score_with(y: f64, quantile: f64, q: f64, convention: ScoreConvention) -> f64 {
    match convention {
        ScoreConvention::Tick => quantile_score(y, quantile, q),
        ScoreConvention::Printed => -quantile_score(y, quantile, q),
    }
}

/// Equal-accuracy t-statistic: mean of `a − b` over its Newey–West standard
/// error with Bartlett lag `h − 1`. Negative values favour `a`.
///
/// Autocovariances use the `n − 1` divisor, so `h = 1` is exactly the
/// one-sample t-test on the differential.
pub fn dm_tstat(loss_a: &[f64], loss_b: &[f64], horizon: usize) -> Result<f64> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Dimension(format!(
            "loss series have lengths {} and {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let n = loss_a.len();
    if n <= 10 {
        return Err(Error::InsufficientSample(format!(
            "t-statistic needs more than 10 losses, got {n}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = d.iter().map(|x| x - mean).collect();
    let acov = |k: usize| dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum::<f64>() / (n - 1) as f64;
    let lag = (horizon - 1).min(n - 1);
    let mut lrv = acov(0);
    for k in 1..=lag {
        lrv += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * acov(k);
    }
    if !(lrv > 0.0) || !lrv.is_finite() {
        return Err(Error::InvalidParameter("loss differential has zero variance".into()));
    }
    Ok(mean / (lrv / n as f64).sqrt())
}

/// Uncentered R² of the regression of `y` on the columns of `f`.
pub fn commonality_r2(y: &[f64], f: &DMatrix<f64>) -> Result<f64> {
    if f.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "series has {} periods, factors have {}",
            y.len(),
            f.nrows()
        )));
    }
    if f.ncols() == 0 || f.ncols() > f.nrows() {
        return Err(Error::RankDeficient("factor matrix".into()));
    }
    let qr = f.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient("factor matrix".into()));
    }
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if yy == 0.0 {
        return Err(Error::InvalidParameter("series is identically zero".into()));
    }
    let q = qr.q();
    let y = nalgebra::DVector::from_column_slice(y);
    let proj = q.transpose() * y;
    Ok((proj.norm_squared() / yy).clamp(0.0, 1.0))
}

/// Per-origin losses of one (model, variable, quantile, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub model: String,
    pub variable: String,
    pub quantile: f64,
    pub horizon: usize,
    /// Date of each forecast target.
    pub targets: Vec<String>,
    pub losses: Vec<f64>,
}

impl ScoreSeries {
    pub fn cumulative(&self) -> Vec<f64> {
        self.losses
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l;
                Some(*acc)
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        if self.losses.is_empty() {
            return f64::NAN;
        }
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    model: String,
    variable: String,
    quantile: f64,
    horizon: usize,
    target: String,
    loss: f64,
    cumulative: f64,
}

pub fn write_scores_csv<W: Write>(scores: &[ScoreSeries], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in scores {
        for ((t, l), c) in s.targets.iter().zip(&s.losses).zip(s.cumulative()) {
            wr.serialize(ScoreRow {
                model: s.model.clone(),
                variable: s.variable.clone(),
                quantile: s.quantile,
                horizon: s.horizon,
                target: t.clone(),
                loss: *l,
                cumulative: c,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(r: R) -> Result<Vec<ScoreSeries>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut map: BTreeMap<(String, String, u64, usize), ScoreSeries> = BTreeMap::new();
    let mut order = Vec::new();
    for row in rd.deserialize() {
        let row: ScoreRow = row?;
        let key = (row.model.clone(), row.variable.clone(), row.quantile.to_bits(), row.horizon);
        let entry = map.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            ScoreSeries {
                model: row.model.clone(),
                variable: row.variable.clone(),
                quantile: row.quantile,
                horizon: row.horizon,
                targets: Vec::new(),
                losses: Vec::new(),
            }
        });
        entry.targets.push(row.target);
        entry.losses.push(row.loss);
    }
    Ok(order.into_iter().filter_map(|k| map.remove(&k)).collect())
}

fn same_q(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// t-statistics of `model` against `benchmark`: one row per variable, one
/// column per (quantile, horizon), quantile-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TstatTable {
    pub model: String,
    pub benchmark: String,
    pub variables: Vec<String>,
    pub quantiles: Vec<f64>,
    pub horizons: Vec<usize>,
    /// NaN where the statistic is undefined.
    pub values: DMatrix<f64>,
}

pub fn tstat_table(
    scores: &[ScoreSeries],
    model: &str,
    benchmark: &str,
    quantiles: &[f64],
    horizons: &[usize],
) -> Result<TstatTable> {
    let mut variables: Vec<String> = Vec::new();
    for s in scores.iter().filter(|s| s.model == model) {
        if !variables.contains(&s.variable) {
            variables.push(s.variable.clone());
        }
    }
    if variables.is_empty() {
        return Err(Error::Config(format!("no scores for model `{model}`")));
    }
    let find = |m: &str, v: &str, q: f64, h: usize| {
        scores
            .iter()
            .find(|s| s.model == m && s.variable == v && same_q(s.quantile, q) && s.horizon == h)
    };
    let nc = quantiles.len() * horizons.len();
    let mut values = DMatrix::from_element(variables.len(), nc, f64::NAN);
    for (r, v) in variables.iter().enumerate() {
        for (qi, &q) in quantiles.iter().enumerate() {
            for (hi, &h) in horizons.iter().enumerate() {
                let (Some(a), Some(b)) = (find(model, v, q, h), find(benchmark, v, q, h)) else {
                    continue;
                };
                let pairs: BTreeMap<&str, f64> =
                    b.targets.iter().map(String::as_str).zip(b.losses.iter().copied()).collect();
                let (la, lb): (Vec<f64>, Vec<f64>) = a
                    .targets
                    .iter()
                    .zip(&a.losses)
                    .filter_map(|(t, l)| pairs.get(t.as_str()).map(|lb| (*l, *lb)))
                    .unzip();
                if let Ok(t) = dm_tstat(&la, &lb, h) {
                    values[(r, qi * horizons.len() + hi)] = t;
                }
            }
        }
    }
    Ok(TstatTable {
        model: model.to_string(),
        benchmark: benchmark.to_string(),
        variables,
        quantiles: quantiles.to_vec(),
        horizons: horizons.to_vec(),
        values,
    })
}

fn percent(q: f64) -> String {
    let p = q * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

impl TstatTable {
    fn column_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &q in &self.quantiles {
            for &h in &self.horizons {
                out.push(format!("t{}_h{h}", percent(q)));
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["variable".to_string()];
        header.extend(self.column_labels());
        wr.write_record(&header)?;
        for (r, v) in self.variables.iter().enumerate() {
            let mut rec = vec![v.clone()];
            rec.extend(self.values.row(r).iter().map(|x| format!("{x:.4}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Markdown table; entries with |t| > 2 are bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} vs {}", self.model, self.benchmark);
        let _ = write!(s, "\n| |");
        for &q in &self.quantiles {
            for &h in &self.horizons {
                let _ = write!(s, " t{} h={h} |", percent(q));
            }
        }
        let _ = write!(s, "\n|---|");
        for _ in 0..self.values.ncols() {
            let _ = write!(s, "---:|");
        }
        for (r, v) in self.variables.iter().enumerate() {
            let _ = write!(s, "\n| {v} |");
            for x in self.values.row(r).iter() {
                if x.is_nan() {
                    let _ = write!(s, " NA |");
                } else if x.abs() > 2.0 {
                    let _ = write!(s, " **{x:.2}** |");
                } else {
                    let _ = write!(s, " {x:.2} |");
                }
            }
        }
        s.push('\n');
        s
    }
}

/// Commonalities of each series with growing factor sets: the mean factor,
/// the mean factor plus the outermost quantile factors, and the mean factor
/// plus every quantile factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonalityTable {
    pub variables: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

/// `series[s]` is a `T`-vector for indicator `indicator_of[s]`;
/// `mean_factors` is `T × m`; `quantile_factors[r]` is `T × m` for the
/// quantile level `quantiles[r]`.
pub fn commonality_table(
    labels: &[String],
    series: &[Vec<f64>],
    indicator_of: &[usize],
    mean_factors: &DMatrix<f64>,
    quantile_factors: &[DMatrix<f64>],
    quantiles: &[f64],
) -> Result<CommonalityTable> {
    if quantile_factors.len() != quantiles.len() {
        return Err(Error::Dimension("one factor matrix per quantile expected".into()));
    }
    let mut sets: Vec<(String, Vec<usize>)> = vec![("F".into(), vec![])];
    let r = quantiles.len();
    if r >= 2 {
        sets.push((
            format!("F+F{}+F{}", percent(quantiles[0]), percent(quantiles[r - 1])),
            vec![0, r - 1],
        ));
    }
    if r != 2 {
        let name = std::iter::once("F".to_string())
            .chain(quantiles.iter().map(|&q| format!("F{}", percent(q))))
            .collect::<Vec<_>>()
            .join("+");
        sets.push((name, (0..r).collect()));
    }
    let mut values = DMatrix::zeros(series.len(), sets.len());
    for (s, y) in series.iter().enumerate() {
        let i = indicator_of[s];
        for (c, (_, qs)) in sets.iter().enumerate() {
            let t = y.len();
            let f = DMatrix::from_fn(t, 1 + qs.len(), |row, col| {
                if col == 0 {
                    mean_factors[(row, i)]
                } else {
                    quantile_factors[qs[col - 1]][(row, i)]
                }
            });
            values[(s, c)] = commonality_r2(y, &f)?;
        }
    }
    Ok(CommonalityTable {
        variables: labels.to_vec(),
        columns: sets.into_iter().map(|(n, _)| n).collect(),
        values,
    })
}

impl CommonalityTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["variable".to_string()];
        header.extend(self.columns.iter().cloned());
        wr.write_record(&header)?;
        for (r, v) in self.variables.iter().enumerate() {
            let mut rec = vec![v.clone()];
            rec.extend(self.values.row(r).iter().map(|x| format!("{x:.3}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| |");
        for c in &self.columns {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        for _ in &self.columns {
            s.push_str("---:|");
        }
        for (r, v) in self.variables.iter().enumerate() {
            let _ = write!(s, "\n| {v} |");
            for x in self.values.row(r).iter() {
                let _ = write!(s, " {x:.3} |");
            }
        }
        s.push('\n');
        s
    }
}
