//! Physics priors on a segmentation field `u`: the steady-state
//! reaction-diffusion residual loss and the phase-field interface energy,
//! each with its exact discrete gradient.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{grad_central, grad_central_adjoint, laplacian, Field2D, GridSpec};

/// Diffusion coefficient `d` and bistable threshold `a` of the RD prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdParams {
    pub d: f64,
    pub a: f64,
}

impl Default for RdParams {
    fn default() -> Self {
        Self { d: 2.0, a: 0.5 }
    }
}

impl RdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return invalid(format!("diffusion coefficient d must be positive, got {}", self.d));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return invalid(format!("reaction threshold a must lie in (0,1), got {}", self.a));
        }
        Ok(())
    }
}

/// How the phase-field energy sum is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfNormalization {
    /// Plain Riemann sum weighted by the cell area.
    RawSum,
    /// Riemann sum divided by the pixel count.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfParams {
    /// Interface width.
    pub eps: f64,
    pub mode: PfNormalization,
}

impl Default for PfParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            mode: PfNormalization::Mean,
        }
    }
}

impl PfParams {
    pub fn raw_sum(eps: f64) -> Self {
        Self {
            eps,
            mode: PfNormalization::RawSum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return invalid(format!("interface width eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

#[inline]
fn cubic(u: f64, a: f64) -> f64 {
    u * (1.0 - u) * (u - a)
}

#[inline]
fn cubic_prime(u: f64, a: f64) -> f64 {
    (1.0 - 2.0 * u) * (u - a) + u * (1.0 - u)
}

#[inline]
fn well(u: f64) -> f64 {
    let v = u * (1.0 - u);
    v * v
}

#[inline]
fn well_prime(u: f64) -> f64 {
    2.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
}

/// Bistable reaction `u (1 - u) (u - a)`, pixelwise.
pub fn reaction(u: &Field2D, a: f64) -> Field2D {
    u.map(|v| cubic(v, a))
}

/// Steady-state residual `d * lap(u) + reaction(u)`.
pub fn rd_residual(u: &Field2D, p: &RdParams, g: &GridSpec) -> Field2D {
    let lap = laplacian(u, g);
    lap.zip_map(u, |l, v| p.d * l + cubic(v, p.a))
        .expect("laplacian preserves dimensions")
}

/// Mean squared RD residual.
pub fn rd_loss(u: &Field2D, p: &RdParams, g: &GridSpec) -> f64 {
    let r = rd_residual(u, p, g);
    r.values().iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Exact gradient of [`rd_loss`] with respect to every pixel of `u`.
pub fn rd_loss_grad(u: &Field2D, p: &RdParams, g: &GridSpec) -> Field2D {
    rd_loss_and_grad(u, p, g).1
}

pub fn rd_loss_and_grad(u: &Field2D, p: &RdParams, g: &GridSpec) -> (f64, Field2D) {
    let r = rd_residual(u, p, g);
    let n = r.len() as f64;
    let loss = r.values().iter().map(|v| v * v).sum::<f64>() / n;
    // The padded Laplacian is self-adjoint, so L^T r = L r.
    let lr = laplacian(&r, g);
    let scale = 2.0 / n;
    let mut grad = Field2D::zeros(u.height(), u.width());
    for (k, out) in grad.values_mut().iter_mut().enumerate() {
        let uk = u.values()[k];
        let rk = r.values()[k];
        *out = scale * (p.d * lr.values()[k] + cubic_prime(uk, p.a) * rk);
    }
    (loss, grad)
}

/// Double-well potential `u^2 (1 - u)^2`, pixelwise.
pub fn double_well(u: &Field2D) -> Field2D {
    u.map(well)
}

/// The two summands of the phase-field energy, already normalized per mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PfTerms {
    /// `(eps / 2) |grad u|^2` contribution.
    pub gradient: f64,
    /// `W(u) / eps` contribution.
    pub well: f64,
}

impl PfTerms {
    pub fn total(&self) -> f64 {
        self.gradient + self.well
    }
}

fn pf_scale(u: &Field2D, p: &PfParams, g: &GridSpec) -> f64 {
    let area = g.cell_area();
    match p.mode {
        PfNormalization::RawSum => area,
        PfNormalization::Mean => area / u.len() as f64,
    }
}

pub fn pf_terms(u: &Field2D, p: &PfParams, g: &GridSpec) -> PfTerms {
    let (gx, gy) = grad_central(u, g);
    let grad_sq: f64 = gx
        .values()
        .iter()
        .zip(gy.values())
        .map(|(a, b)| a * a + b * b)
        .sum();
    let wells: f64 = u.values().iter().map(|&v| well(v)).sum();
    let s = pf_scale(u, p, g);
    PfTerms {
        gradient: s * 0.5 * p.eps * grad_sq,
        well: s * wells / p.eps,
    }
}

/// Discrete phase-field energy (Riemann sum, optionally per-pixel mean).
pub fn pf_energy(u: &Field2D, p: &PfParams, g: &GridSpec) -> f64 {
    pf_terms(u, p, g).total()
}

/// Exact gradient of [`pf_energy`], back-propagated through the central
/// differences and their edge padding.
pub fn pf_energy_grad(u: &Field2D, p: &PfParams, g: &GridSpec) -> Field2D {
    let (gx, gy) = grad_central(u, g);
    let s = pf_scale(u, p, g);
    // d/d(gx) of (eps/2) gx^2 is eps * gx.
    let gx_bar = gx.scale(s * p.eps);
    let gy_bar = gy.scale(s * p.eps);
    let mut grad = grad_central_adjoint(&gx_bar, &gy_bar, g);
    let inv_eps = s / p.eps;
    for (out, &v) in grad.values_mut().iter_mut().zip(u.values()) {
        *out += inv_eps * well_prime(v);
    }
    grad
}

pub fn pf_energy_and_grad(u: &Field2D, p: &PfParams, g: &GridSpec) -> (f64, Field2D) {
    (pf_energy(u, p, g), pf_energy_grad(u, p, g))
}
