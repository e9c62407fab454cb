//! Posterior draw container and its on-disk format.
//!
//! `posterior.bin` layout (little endian):
//!
//! ```text
//! magic    8 bytes  "QFAVPD01"
//! version  u32
//! blocks   u32
//! per block:
//!   name_len u32, name (UTF-8), ndim u32, dims u64 × ndim, data f64 × Π dims
//! ```
//!
//! A JSON sidecar with the same stem holds [`PosteriorMeta`].

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{Method, ModelConfig, OmegaSource};
use crate::error::{Error, Result};
use crate::model::Layout;

pub const MAGIC: &[u8; 8] = b"QFAVPD01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Elements per leading-index slice.
    pub fn stride(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn slice(&self, d: usize) -> &[f64] {
        let s = self.stride();
        &self.data[d * s..(d + 1) * s]
    }

    pub fn slice_mut(&mut self, d: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[d * s..(d + 1) * s]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    pub min: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    /// Effective sample size per parameter group.
    pub ess: BTreeMap<String, EssSummary>,
    /// Stored draws whose factor correlates negatively with the pre-extracted
    /// reference factor, per factor.
    pub sign_disagreements: Vec<usize>,
    pub nonstationary_draws: usize,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub convergence_trace: Vec<f64>,
    pub step1_converged: Vec<bool>,
    /// Share of periods with quantile factors in ascending order.
    pub ordered_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeta {
    pub method: Method,
    pub layout: Layout,
    pub n_draws: usize,
    pub indicator_labels: Vec<String>,
    pub country_labels: Vec<String>,
    pub global_labels: Vec<String>,
    pub state_labels: Vec<String>,
    pub eq_labels: Vec<String>,
    pub time_index: Vec<String>,
    /// Last observed row of the panel, used by own-lag forecasts.
    #[serde(default)]
    pub last_values: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub config: ModelConfig,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub meta: PosteriorMeta,
    pub blocks: BTreeMap<String, Array>,
}

/// Block names.
pub mod block {
    pub const INTERCEPTS: &str = "intercepts";
    pub const OWN_LAG: &str = "own_lag";
    pub const LOADINGS: &str = "loadings";
    pub const GLOBAL_LOADINGS: &str = "global_loadings";
    pub const SCALES: &str = "scales";
    pub const VAR_INTERCEPT: &str = "var_intercept";
    pub const VAR_COEFFS: &str = "var_coeffs";
    pub const CONTEMPORANEOUS: &str = "contemporaneous";
    pub const LOG_VOL: &str = "log_vol";
    pub const SV_VAR: &str = "sv_var";
    pub const FACTORS: &str = "factors";
    pub const VARIANCE_SUFFIX: &str = "_var";
}

/// One draw of the VAR in reduced form.
#[derive(Debug, Clone)]
pub struct VarDraw {
    pub intercept: DVector<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    /// Unit lower-triangular `A` with `Ω_t = A H_t A'`.
    pub a: DMatrix<f64>,
    /// `T_eff × l` log variances.
    pub log_vol: DMatrix<f64>,
}

impl VarDraw {
    pub fn omega_at(&self, row: usize) -> DMatrix<f64> {
        let h = DMatrix::from_diagonal(&self.log_vol.row(row).transpose().map(f64::exp));
        &self.a * h * self.a.transpose()
    }

    pub fn omega(&self, source: OmegaSource) -> DMatrix<f64> {
        let l = self.intercept.len();
        let hbar: DVector<f64> = match source {
            OmegaSource::TimeAverage => {
                DVector::from_fn(l, |r, _| crate::linalg::mean(self.log_vol.column(r).as_slice()))
            }
            OmegaSource::EndOfSample => self.log_vol.row(self.log_vol.nrows() - 1).transpose(),
        };
        let h = DMatrix::from_diagonal(&hbar.map(f64::exp));
        &self.a * h * self.a.transpose()
    }
}

impl PosteriorDraws {
    pub fn new(meta: PosteriorMeta) -> Self {
        let lay = &meta.layout;
        let d = meta.n_draws;
        let (ne, l, k, p) = (lay.n_eq(), lay.state_dim(), lay.k, lay.p);
        let mut blocks = BTreeMap::new();
        blocks.insert(block::INTERCEPTS.into(), Array::zeros(&[d, ne]));
        blocks.insert(block::OWN_LAG.into(), Array::zeros(&[d, ne]));
        blocks.insert(block::LOADINGS.into(), Array::zeros(&[d, ne]));
        blocks.insert(block::GLOBAL_LOADINGS.into(), Array::zeros(&[d, ne, k]));
        blocks.insert(block::SCALES.into(), Array::zeros(&[d, ne]));
        blocks.insert(block::VAR_INTERCEPT.into(), Array::zeros(&[d, l]));
        blocks.insert(block::VAR_COEFFS.into(), Array::zeros(&[d, p, l, l]));
        blocks.insert(block::CONTEMPORANEOUS.into(), Array::zeros(&[d, l, l]));
        blocks.insert(block::LOG_VOL.into(), Array::zeros(&[d, lay.t_eff(), l]));
        blocks.insert(block::SV_VAR.into(), Array::zeros(&[d, l]));
        blocks.insert(block::FACTORS.into(), Array::zeros(&[d, lay.t_len, l]));
        Self { meta, blocks }
    }

    pub fn n_draws(&self) -> usize {
        self.meta.n_draws
    }

    pub fn layout(&self) -> &Layout {
        &self.meta.layout
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing block `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::Container(format!("missing block `{name}`")))
    }

    pub fn var_draw(&self, d: usize) -> Result<VarDraw> {
        let lay = self.layout();
        let (l, p) = (lay.state_dim(), lay.p);
        let v = DVector::from_column_slice(self.get(block::VAR_INTERCEPT)?.slice(d));
        let c = self.get(block::VAR_COEFFS)?.slice(d);
        let coeffs = (0..p)
            .map(|lag| DMatrix::from_row_slice(l, l, &c[lag * l * l..(lag + 1) * l * l]))
            .collect();
        let a = DMatrix::from_row_slice(l, l, self.get(block::CONTEMPORANEOUS)?.slice(d));
        let log_vol = DMatrix::from_row_slice(lay.t_eff(), l, self.get(block::LOG_VOL)?.slice(d));
        Ok(VarDraw {
            intercept: v,
            coeffs,
            a,
            log_vol,
        })
    }

    pub fn factors(&self, d: usize) -> Result<DMatrix<f64>> {
        let lay = self.layout();
        Ok(DMatrix::from_row_slice(
            lay.t_len,
            lay.state_dim(),
            self.get(block::FACTORS)?.slice(d),
        ))
    }

    /// `[Λ, Γ]` (n_eq × l) and the intercepts `c` of draw `d`.
    pub fn projection(&self, d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let lay = self.layout();
        let (ne, l, k) = (lay.n_eq(), lay.state_dim(), lay.k);
        let lam = self.get(block::LOADINGS)?.slice(d);
        let gam = self.get(block::GLOBAL_LOADINGS)?.slice(d);
        let mut w = DMatrix::zeros(ne, l);
        for e in 0..ne {
            if let Some(f) = lay.eq_factor(e) {
                w[(e, f)] = lam[e];
            }
            for g in 0..k {
                w[(e, lay.global(g))] = gam[e * k + g];
            }
        }
        let c = DVector::from_column_slice(self.get(block::INTERCEPTS)?.slice(d));
        Ok((w, c))
    }

    pub fn own_lag(&self, d: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.get(block::OWN_LAG)?.slice(d)))
    }

    /// Posterior mean over draws of a block, flattened per draw.
    pub fn block_mean(&self, name: &str) -> Result<Vec<f64>> {
        let a = self.get(name)?;
        let d = a.dims[0].max(1);
        let s = a.stride();
        let mut out = vec![0.0; s];
        for k in 0..a.dims[0] {
            for (o, v) in out.iter_mut().zip(a.slice(k)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= d as f64);
        Ok(out)
    }

    pub fn sidecar_path(bin: &Path) -> PathBuf {
        bin.with_extension("json")
    }

    pub fn write_bin<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, arr) in &self.blocks {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(arr.dims.len() as u32).to_le_bytes())?;
            for d in &arr.dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(arr.data.len() * 8);
            for v in &arr.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_bin<R: Read>(mut r: R) -> Result<BTreeMap<String, Array>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container("not a posterior container (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!("unsupported format version {version}")));
        }
        let n = read_u32(&mut r)?;
        let mut blocks = BTreeMap::new();
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Container("block name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let count: usize = dims.iter().product();
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            blocks.insert(name, Array { dims, data });
        }
        Ok(blocks)
    }

    /// Write `path` and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_bin(f)?;
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(Self::sidecar_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blocks = Self::read_bin(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let meta: PosteriorMeta =
            serde_json::from_slice(&std::fs::read(Self::sidecar_path(path))?)?;
        let out = Self { meta, blocks };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        for name in [
            block::INTERCEPTS,
            block::LOADINGS,
            block::GLOBAL_LOADINGS,
            block::VAR_INTERCEPT,
            block::VAR_COEFFS,
            block::CONTEMPORANEOUS,
            block::LOG_VOL,
            block::FACTORS,
        ] {
            let a = self.get(name)?;
            if a.dims.first() != Some(&self.meta.n_draws) {
                return Err(Error::Container(format!(
                    "block `{name}` has {} draws, metadata says {}",
                    a.dims.first().copied().unwrap_or(0),
                    self.meta.n_draws
                )));
            }
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
