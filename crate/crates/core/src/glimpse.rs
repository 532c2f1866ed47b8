//! Selective 2-D attention read over a `C×M×M` summary.
//!
//! A raw 3-vector `(ĝ_X, ĝ_Y, δ̂)` is unpacked into a grid centre, a stride
//! and an intensity; a `K×K` grid of 1-D kernels placed on the map gives the
//! filterbanks `F_X` (`K×A`) and `F_Y` (`K×B`), and each channel is read as
//! `γ · F_Y · Z[c] · F_Xᵀ`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Lower bound applied to the stride.
pub const MIN_STRIDE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    /// `1 / (πγ [1 + ((a − μ)/γ)²])`
    #[default]
    Cauchy,
    /// `exp(−(a − μ)² / 2γ²)`
    Gaussian,
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cauchy" => Ok(Kernel::Cauchy),
            "gaussian" => Ok(Kernel::Gaussian),
            _ => Err(Error::Config(format!("glimpse.kernel must be cauchy or gaussian, got {s}"))),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Cauchy => "cauchy",
            Kernel::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlimpseConfig {
    /// Filter grid side.
    pub k: usize,
    pub kernel: Kernel,
    /// Place filter centres at `g + (i − K/2 − 0.5) / δ` instead of
    /// `g + (i − K/2 − 0.5) · δ`.
    pub eq7_division: bool,
}

impl Default for GlimpseConfig {
    fn default() -> Self {
        GlimpseConfig { k: 2, kernel: Kernel::Cauchy, eq7_division: false }
    }
}

/// Unpacked attention window on an `A×B` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlimpseParams {
    pub g_x: f64,
    pub g_y: f64,
    pub delta: f64,
    pub gamma: f64,
    pub k: usize,
    pub a: usize,
    pub b: usize,
}

impl GlimpseParams {
    /// Distance between adjacent filter centres.
    pub fn spacing(&self, cfg: &GlimpseConfig) -> f64 {
        if cfg.eq7_division {
            1.0 / self.delta
        } else {
            self.delta
        }
    }

    /// Window `(x0, y0, x1, y1)` in grid units: `K` cells of side
    /// `spacing` around the centre.
    pub fn window(&self, cfg: &GlimpseConfig) -> (f64, f64, f64, f64) {
        let half = self.k as f64 * self.spacing(cfg) / 2.0;
        (self.g_x - half, self.g_y - half, self.g_x + half, self.g_y + half)
    }

    /// Whether the window spans every cell of the grid.
    pub fn covers_grid(&self, cfg: &GlimpseConfig) -> bool {
        let (x0, y0, x1, y1) = self.window(cfg);
        x0 <= -0.5 && y0 <= -0.5 && x1 >= self.a as f64 - 0.5 && y1 >= self.b as f64 - 0.5
    }
}

/// Row-normalized filterbanks.
#[derive(Clone, Debug, PartialEq)]
pub struct Filterbanks {
    pub fx: Tensor,
    pub fy: Tensor,
}

/// Graph nodes of unpacked glimpse parameters, each `1×1`.
#[derive(Clone, Copy, Debug)]
pub struct GlimpseVars {
    pub g_x: Var,
    pub g_y: Var,
    pub delta: Var,
    pub gamma: Var,
    pub k: usize,
    pub a: usize,
    pub b: usize,
}

impl GlimpseVars {
    pub fn params(&self, g: &Graph) -> GlimpseParams {
        GlimpseParams {
            g_x: g.value(self.g_x).item(),
            g_y: g.value(self.g_y).item(),
            delta: g.value(self.delta).item(),
            gamma: g.value(self.gamma).item(),
            k: self.k,
            a: self.a,
            b: self.b,
        }
    }
}

fn check_dims(a: usize, b: usize, k: usize) -> Result<()> {
    if a == 0 || b == 0 || k == 0 {
        return Err(Error::Contract(format!("glimpse needs A, B, K ≥ 1, got {a}, {b}, {k}")));
    }
    Ok(())
}

/// Unpack a `3×1` raw vector `(ĝ_X, ĝ_Y, δ̂)`:
///
/// ```text
/// g_X = (A − 1)(ĝ_X + 1)/2     g_Y = (B − 1)(ĝ_Y + 1)/2
/// δ   = max(A, B)/(K − 1) · |δ̂|  (max(A, B) · |δ̂| when K = 1), at least MIN_STRIDE
/// γ   = exp(1 − 2|δ̂|)
/// ```
pub fn unpack_glimpse_var(g: &mut Graph, raw: Var, a: usize, b: usize, k: usize) -> Result<GlimpseVars> {
    check_dims(a, b, k)?;
    if g.value(raw).len() != 3 {
        return Err(Error::Shape(format!(
            "glimpse vector must hold 3 values, got {:?}",
            g.value(raw).shape()
        )));
    }
    let raw = g.reshape(raw, &[3, 1])?;
    let gx_hat = g.slice_rows(raw, 0, 1)?;
    let gy_hat = g.slice_rows(raw, 1, 1)?;
    let d_hat = g.slice_rows(raw, 2, 1)?;

    let gx = g.add_scalar(gx_hat, 1.0);
    let g_x = g.scale(gx, (a as f64 - 1.0) / 2.0);
    let gy = g.add_scalar(gy_hat, 1.0);
    let g_y = g.scale(gy, (b as f64 - 1.0) / 2.0);

    let d_abs = g.abs(d_hat);
    let denom = if k > 1 { (k - 1) as f64 } else { 1.0 };
    let d = g.scale(d_abs, a.max(b) as f64 / denom);
    let delta = g.clamp_min(d, MIN_STRIDE);

    let e = g.scale(d_abs, -2.0);
    let e = g.add_scalar(e, 1.0);
    let gamma = g.exp(e);
    Ok(GlimpseVars { g_x, g_y, delta, gamma, k, a, b })
}

/// Kernel rows for one axis: centres `μ_i = centre + (i − K/2 − 0.5)·δ`
/// (or `/δ`), `i = 1..K`, evaluated at grid cells `0..len`.
fn axis_bank(
    g: &mut Graph,
    centre: Var,
    delta: Var,
    gamma: Var,
    k: usize,
    len: usize,
    cfg: &GlimpseConfig,
) -> Result<Var> {
    let offsets: Vec<f64> = (1..=k).map(|i| i as f64 - k as f64 / 2.0 - 0.5).collect();
    let offsets = g.constant(Tensor::column(&offsets));
    let d = g.broadcast(delta, k, 1)?;
    let step = if cfg.eq7_division { g.div(offsets, d)? } else { g.mul(offsets, d)? };
    let c = g.broadcast(centre, k, 1)?;
    let mu = g.add(c, step)?;

    let cells: Vec<f64> = (0..len).map(|v| v as f64).collect();
    let cells = g.constant(Tensor::new(&[1, len], cells)?);
    let cells = g.broadcast(cells, k, len)?;
    let mu = g.broadcast(mu, k, len)?;
    let diff = g.sub(cells, mu)?;
    let gam = g.broadcast(gamma, k, len)?;

    let raw = match cfg.kernel {
        Kernel::Cauchy => {
            let u = g.div(diff, gam)?;
            let u2 = g.mul(u, u)?;
            let one_plus = g.add_scalar(u2, 1.0);
            let pg = g.scale(gam, PI);
            let den = g.mul(pg, one_plus)?;
            let ones = g.constant(Tensor::full(&[k, len], 1.0));
            g.div(ones, den)?
        }
        Kernel::Gaussian => {
            let d2 = g.mul(diff, diff)?;
            let s2 = g.mul(gam, gam)?;
            let q = g.div(d2, s2)?;
            let q = g.scale(q, -0.5);
            g.exp(q)
        }
    };
    Ok(g.normalize_rows(raw))
}

/// `(F_X, F_Y)` as graph nodes.
pub fn filterbanks_var(g: &mut Graph, p: &GlimpseVars, cfg: &GlimpseConfig) -> Result<(Var, Var)> {
    let fx = axis_bank(g, p.g_x, p.delta, p.gamma, p.k, p.a, cfg)?;
    let fy = axis_bank(g, p.g_y, p.delta, p.gamma, p.k, p.b, cfg)?;
    Ok((fx, fy))
}

/// Read a `C×K²` glimpse from a `C×M²` summary (column index `j·K + i`).
pub fn extract_glimpse_var(
    g: &mut Graph,
    p: &GlimpseVars,
    fx: Var,
    fy: Var,
    z: Var,
) -> Result<Var> {
    let (c, m2) = g.value(z).dims2();
    if p.a != p.b || p.a * p.b != m2 {
        return Err(Error::Shape(format!(
            "glimpse over a {}×{} grid cannot read a summary of shape {:?}",
            p.a,
            p.b,
            g.value(z).shape()
        )));
    }
    // vec(F_Y · Z_c · F_Xᵀ) = (F_Y ⊗ F_X) · vec(Z_c) for row-major vec.
    let kr = g.kron(fy, fx);
    let krt = g.transpose(kr);
    let read = g.matmul(z, krt)?;
    let gam = g.broadcast(p.gamma, c, p.k * p.k)?;
    g.mul(read, gam)
}

/// Unpack, build filterbanks and read in one go. Returns the `C×K²` glimpse
/// and the unpacked parameters.
pub fn read_var(
    g: &mut Graph,
    raw: Var,
    z: Var,
    side: usize,
    cfg: &GlimpseConfig,
) -> Result<(Var, GlimpseVars)> {
    let p = unpack_glimpse_var(g, raw, side, side, cfg.k)?;
    let (fx, fy) = filterbanks_var(g, &p, cfg)?;
    let out = extract_glimpse_var(g, &p, fx, fy, z)?;
    Ok((out, p))
}

fn constants(g: &mut Graph, p: &GlimpseParams) -> GlimpseVars {
    GlimpseVars {
        g_x: g.scalar(p.g_x),
        g_y: g.scalar(p.g_y),
        delta: g.scalar(p.delta),
        gamma: g.scalar(p.gamma),
        k: p.k,
        a: p.a,
        b: p.b,
    }
}

pub fn unpack_glimpse(raw: [f64; 3], a: usize, b: usize, k: usize) -> Result<GlimpseParams> {
    let mut g = Graph::new();
    let r = g.constant(Tensor::column(&raw));
    let v = unpack_glimpse_var(&mut g, r, a, b, k)?;
    Ok(v.params(&g))
}

pub fn filterbanks(p: &GlimpseParams, cfg: &GlimpseConfig) -> Result<Filterbanks> {
    check_dims(p.a, p.b, p.k)?;
    let mut g = Graph::new();
    let v = constants(&mut g, p);
    let (fx, fy) = filterbanks_var(&mut g, &v, cfg)?;
    Ok(Filterbanks { fx: g.value(fx).clone(), fy: g.value(fy).clone() })
}

/// Glimpse `C×K×K` from a `C×M²` summary, `G[c][j][i]`.
pub fn extract_glimpse(p: &GlimpseParams, z: &Tensor, cfg: &GlimpseConfig) -> Result<Tensor> {
    check_dims(p.a, p.b, p.k)?;
    let mut g = Graph::new();
    let v = constants(&mut g, p);
    let (fx, fy) = filterbanks_var(&mut g, &v, cfg)?;
    let zc = g.constant(z.clone());
    let out = extract_glimpse_var(&mut g, &v, fx, fy, zc)?;
    let c = z.dims2().0;
    g.value(out).clone().reshape(&[c, p.k, p.k])
}
