//! Generalized impulse responses, generalized variance decompositions,
//! projection to the panel and connectedness networks.
//!
//! Shocks follow the one-standard-deviation generalized convention: the
//! response to shock `j` at horizon `h` is `Ψ_h Ω e_j / √ω_jj`, where `Ψ_h`
//! are the moving-average coefficients of the VAR. Variance decompositions
//! sum squared generalized responses over horizons `0..H−1`, i.e. they
//! decompose the `H`-step-ahead forecast error.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::OmegaSource;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::quantile;
use crate::posterior::PosteriorDraws;
use crate::statespace::build_companion;

/// Band levels of aggregated responses.
pub const BANDS: [f64; 3] = [0.16, 0.5, 0.84];

/// `Ψ_0 = I, Ψ_h = Σ_{c=1}^{min(h,p)} Φ_c Ψ_{h−c}` for `h = 0..=horizon`.
pub fn ma_coefficients(coeffs: &[DMatrix<f64>], l: usize, horizon: usize) -> Vec<DMatrix<f64>> {
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    psi.push(DMatrix::identity(l, l));
    for h in 1..=horizon {
        let mut m = DMatrix::zeros(l, l);
        for (c, phi) in coeffs.iter().enumerate().take(h) {
            m += phi * &psi[h - c - 1];
        }
        psi.push(m);
    }
    psi
}

fn check_omega(omega: &DMatrix<f64>, j: usize) -> Result<f64> {
    let l = omega.nrows();
    if j >= l {
        return Err(Error::Dimension(format!("shock index {j} out of range for {l} states")));
    }
    let w = omega[(j, j)];
    if !(w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shock {j} has nonpositive innovation variance {w}"
        )));
    }
    Ok(w)
}

/// Generalized responses of all states to shock `j`, `(H+1) × l`.
pub fn girf_single(coeffs: &[DMatrix<f64>], omega: &DMatrix<f64>, j: usize, horizon: usize) -> Result<DMatrix<f64>> {
    let w = check_omega(omega, j)?;
    let l = omega.nrows();
    let impact = omega.column(j) / w.sqrt();
    let psi = ma_coefficients(coeffs, l, horizon);
    let mut out = DMatrix::zeros(horizon + 1, l);
    for (h, p) in psi.iter().enumerate() {
        out.row_mut(h).copy_from(&(p * &impact).transpose());
    }
    Ok(out)
}

/// `paths · W' (+ c)`: maps `T × l` state paths to `T × n_eq` variable paths.
pub fn project_to_measurement(
    paths: &DMatrix<f64>,
    projection: &DMatrix<f64>,
    intercept: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    if paths.ncols() != projection.ncols() {
        return Err(Error::Dimension(format!(
            "state paths have {} columns but the projection expects {}",
            paths.ncols(),
            projection.ncols()
        )));
    }
    let mut out = paths * projection.transpose();
    if let Some(c) = intercept {
        if c.len() != projection.nrows() {
            return Err(Error::Dimension(format!(
                "intercept has {} entries for {} variables",
                c.len(),
                projection.nrows()
            )));
        }
        for mut row in out.row_iter_mut() {
            row += c.transpose();
        }
    }
    Ok(out)
}

fn normalize_rows(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = raw.clone();
    for mut row in out.row_iter_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

/// Raw generalized shares for targets `W x_t` (`W` = identity for the
/// states). Returns `n_targets × l`.
fn generalized_shares(coeffs: &[DMatrix<f64>], omega: &DMatrix<f64>, w: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("variance decomposition horizon must be at least 1".into()));
    }
    let l = omega.nrows();
    for j in 0..l {
        check_omega(omega, j)?;
    }
    let psi = ma_coefficients(coeffs, l, horizon - 1);
    let nt = w.nrows();
    let mut num = DMatrix::zeros(nt, l);
    let mut den = DVector::zeros(nt);
    for p in &psi {
        let wp = w * p;
        let wpo = &wp * omega;
        let total = (&wpo * wp.transpose()).diagonal();
        den += total;
        for i in 0..nt {
            for j in 0..l {
                num[(i, j)] += wpo[(i, j)].powi(2) / omega[(j, j)];
            }
        }
    }
    for i in 0..nt {
        if den[i] > 0.0 {
            num.row_mut(i).scale_mut(1.0 / den[i]);
        }
    }
    Ok(num)
}

/// State-level generalized FEVD: `(raw, row-normalized)`, both `l × l`.
pub fn gfevd_single(coeffs: &[DMatrix<f64>], omega: &DMatrix<f64>, horizon: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let l = omega.nrows();
    let raw = generalized_shares(coeffs, omega, &DMatrix::identity(l, l), horizon)?;
    let norm = normalize_rows(&raw);
    Ok((raw, norm))
}

/// Variable-level FEVD through the projection `W = [Λ, Γ]`:
/// `(raw, row-normalized)`, both `n_eq × l`. Idiosyncratic noise is not a
/// source.
pub fn variable_fevd_single(
    coeffs: &[DMatrix<f64>],
    omega: &DMatrix<f64>,
    projection: &DMatrix<f64>,
    horizon: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if projection.ncols() != omega.nrows() {
        return Err(Error::Dimension(format!(
            "projection has {} columns for {} states",
            projection.ncols(),
            omega.nrows()
        )));
    }
    let raw = generalized_shares(coeffs, omega, projection, horizon)?;
    let norm = normalize_rows(&raw);
    Ok((raw, norm))
}

/// Median and 68% band of a response, per element.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    pub lower: DMatrix<f64>,
    pub median: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

fn band(draws: &[DMatrix<f64>]) -> Banded {
    let (r, c) = draws[0].shape();
    let mut out = [DMatrix::zeros(r, c), DMatrix::zeros(r, c), DMatrix::zeros(r, c)];
    let mut buf = vec![0.0; draws.len()];
    for i in 0..r {
        for j in 0..c {
            for (b, d) in buf.iter_mut().zip(draws) {
                *b = d[(i, j)];
            }
            for (o, q) in out.iter_mut().zip(BANDS) {
                o[(i, j)] = quantile(&buf, q);
            }
        }
    }
    let [lower, median, upper] = out;
    Banded { lower, median, upper }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrfResult {
    pub shock: usize,
    pub shock_label: String,
    pub horizon: usize,
    /// `(H+1) × l`.
    pub states: Banded,
    /// `(H+1) × n_eq`.
    pub variables: Banded,
    pub state_labels: Vec<String>,
    pub eq_labels: Vec<String>,
    pub n_draws_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FevdResult {
    pub horizon: usize,
    /// Posterior means of the share matrices.
    pub state_raw: DMatrix<f64>,
    pub state: DMatrix<f64>,
    pub variable_raw: DMatrix<f64>,
    pub variable: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub eq_labels: Vec<String>,
    pub n_draws_used: usize,
}

/// Options shared by the draw-level analyses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawSelection {
    pub omega_source: OmegaSource,
    pub filter_explosive: bool,
}

struct DrawInputs {
    coeffs: Vec<DMatrix<f64>>,
    omega: DMatrix<f64>,
    projection: DMatrix<f64>,
}

fn usable_draws(post: &PosteriorDraws, sel: DrawSelection, exec: Execution) -> Result<Vec<DrawInputs>> {
    let draws = exec.try_map(post.n_draws(), |d| -> Result<Option<DrawInputs>> {
        let var = post.var_draw(d)?;
        if sel.filter_explosive {
            let comp = build_companion(&var.intercept, &var.coeffs)?;
            if comp.spectral_radius() >= 1.0 {
                return Ok(None);
            }
        }
        let omega = var.omega(sel.omega_source);
        let (projection, _) = post.projection(d)?;
        Ok(Some(DrawInputs {
            coeffs: var.coeffs,
            omega,
            projection,
        }))
    })?;
    let kept: Vec<DrawInputs> = draws.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::InsufficientSample("no usable posterior draws".into()));
    }
    Ok(kept)
}

/// Generalized impulse responses to state shock `shock`, aggregated over
/// draws.
pub fn girf(post: &PosteriorDraws, shock: usize, horizon: usize, sel: DrawSelection, exec: Execution) -> Result<IrfResult> {
    let draws = usable_draws(post, sel, exec)?;
    let per = exec.try_map(draws.len(), |d| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let inp = &draws[d];
        let s = girf_single(&inp.coeffs, &inp.omega, shock, horizon)?;
        let v = project_to_measurement(&s, &inp.projection, None)?;
        Ok((s, v))
    })?;
    let (s, v): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(IrfResult {
        shock,
        shock_label: post.meta.state_labels.get(shock).cloned().unwrap_or_default(),
        horizon,
        states: band(&s),
        variables: band(&v),
        state_labels: post.meta.state_labels.clone(),
        eq_labels: post.meta.eq_labels.clone(),
        n_draws_used: draws.len(),
    })
}

/// State- and variable-level generalized FEVDs averaged over draws.
pub fn gfevd(post: &PosteriorDraws, horizon: usize, sel: DrawSelection, exec: Execution) -> Result<FevdResult> {
    let draws = usable_draws(post, sel, exec)?;
    let per = exec.try_map(draws.len(), |d| {
        let inp = &draws[d];
        let s = gfevd_single(&inp.coeffs, &inp.omega, horizon)?;
        let v = variable_fevd_single(&inp.coeffs, &inp.omega, &inp.projection, horizon)?;
        Ok::<_, Error>((s, v))
    })?;
    let n = per.len() as f64;
    let mut acc = [
        DMatrix::zeros(per[0].0 .0.nrows(), per[0].0 .0.ncols()),
        DMatrix::zeros(per[0].0 .0.nrows(), per[0].0 .0.ncols()),
        DMatrix::zeros(per[0].1 .0.nrows(), per[0].1 .0.ncols()),
        DMatrix::zeros(per[0].1 .0.nrows(), per[0].1 .0.ncols()),
    ];
    for ((sr, sn), (vr, vn)) in &per {
        acc[0] += sr;
        acc[1] += sn;
        acc[2] += vr;
        acc[3] += vn;
    }
    let [state_raw, state, variable_raw, variable] = acc.map(|m| m / n);
    Ok(FevdResult {
        horizon,
        state_raw,
        state,
        variable_raw,
        variable,
        state_labels: post.meta.state_labels.clone(),
        eq_labels: post.meta.eq_labels.clone(),
        n_draws_used: draws.len(),
    })
}

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Augmented decomposition `D̃ = [[0, D], [0, D_s]]` over variables
/// followed by states, read as a weighted adjacency matrix with
/// `D̃[i, j] = C_{i←j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectedness {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    pub threshold: f64,
    pub edges: Vec<Edge>,
}

pub fn connectedness(
    variable: &DMatrix<f64>,
    state: &DMatrix<f64>,
    labels: &[String],
    threshold: f64,
) -> Result<Connectedness> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("edge threshold must lie in [0, 1), got {threshold}")));
    }
    let (nv, l) = variable.shape();
    if state.shape() != (l, l) {
        return Err(Error::Dimension(format!(
            "variable shares are {nv}×{l} but state shares are {}×{}",
            state.nrows(),
            state.ncols()
        )));
    }
    if labels.len() != nv + l {
        return Err(Error::Dimension(format!("expected {} labels, got {}", nv + l, labels.len())));
    }
    let size = nv + l;
    let mut m = DMatrix::zeros(size, size);
    m.view_mut((0, nv), (nv, l)).copy_from(variable);
    m.view_mut((nv, nv), (l, l)).copy_from(state);
    let mut edges = Vec::new();
    for i in 0..size {
        for j in 0..size {
            if i != j && m[(i, j)] >= threshold && m[(i, j)] > 0.0 {
                edges.push(Edge {
                    from: j,
                    to: i,
                    weight: m[(i, j)],
                });
            }
        }
    }
    Ok(Connectedness {
        matrix: m,
        labels: labels.to_vec(),
        threshold,
        edges,
    })
}

impl Connectedness {
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph connectedness {\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", l.replace('"', "\\\""));
        }
        for e in &self.edges {
            let _ = writeln!(s, "  n{} -> n{} [weight={:.6}, label=\"{:.3}\"];", e.from, e.to, e.weight, e.weight);
        }
        s.push_str("}\n");
        s
    }

    pub fn write_edges_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["from", "to", "weight"])?;
        for e in &self.edges {
            wr.write_record([
                self.labels[e.from].as_str(),
                self.labels[e.to].as_str(),
                &format!("{:?}", e.weight),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_matrix_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["target".to_string()];
        header.extend(self.labels.iter().cloned());
        wr.write_record(&header)?;
        for i in 0..self.matrix.nrows() {
            let mut row = vec![self.labels[i].clone()];
            row.extend(self.matrix.row(i).iter().map(|v| format!("{v:?}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Split `"NAME@q0.1"` into `("NAME", "0.1")`; labels without a quantile
/// give an empty second part.
pub fn split_label(label: &str) -> (&str, &str) {
    match label.rsplit_once("@q") {
        Some((a, b)) => (a, b),
        None => (label, ""),
    }
}

impl IrfResult {
    /// Tidy CSV: one row per (level, target, horizon).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["shock", "level", "target", "quantile", "horizon", "lower", "median", "upper"])?;
        for (level, labels, b) in [
            ("state", &self.state_labels, &self.states),
            ("variable", &self.eq_labels, &self.variables),
        ] {
            for (c, label) in labels.iter().enumerate() {
                let (name, q) = split_label(label);
                for h in 0..=self.horizon {
                    wr.write_record([
                        self.shock_label.as_str(),
                        level,
                        name,
                        q,
                        &h.to_string(),
                        &format!("{:?}", b.lower[(h, c)]),
                        &format!("{:?}", b.median[(h, c)]),
                        &format!("{:?}", b.upper[(h, c)]),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

impl FevdResult {
    /// Tidy CSV: one row per (level, target, source).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["level", "target", "quantile", "source", "horizon", "share_raw", "share"])?;
        for (level, labels, raw, norm) in [
            ("state", &self.state_labels, &self.state_raw, &self.state),
            ("variable", &self.eq_labels, &self.variable_raw, &self.variable),
        ] {
            for (i, label) in labels.iter().enumerate() {
                let (name, q) = split_label(label);
                for (j, src) in self.state_labels.iter().enumerate() {
                    wr.write_record([
                        level,
                        name,
                        q,
                        src.as_str(),
                        &self.horizon.to_string(),
                        &format!("{:?}", raw[(i, j)]),
                        &format!("{:?}", norm[(i, j)]),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Labels of the augmented connectedness matrix (variables, then states).
    pub fn connectedness_labels(&self) -> Vec<String> {
        self.eq_labels.iter().chain(&self.state_labels).cloned().collect()
    }
}
