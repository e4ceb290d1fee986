//! Spatial, separable and nonseparable correlation functions and the
//! covariance matrices built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmath::KroneckerPair;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpSpatialParams {
    /// Decay per km.
    pub theta: f64,
    pub sigma2_omega: f64,
}

impl ExpSpatialParams {
    pub fn validate(&self) -> Result<()> {
        positive("theta", self.theta)?;
        nonnegative("sigma2_omega", self.sigma2_omega)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableParams {
    /// Temporal decay per day.
    pub theta1: f64,
    /// Spatial decay per km.
    pub theta2: f64,
    pub sigma2_omega: f64,
}

impl SeparableParams {
    pub fn validate(&self) -> Result<()> {
        positive("theta1", self.theta1)?;
        positive("theta2", self.theta2)?;
        nonnegative("sigma2_omega", self.sigma2_omega)
    }
}

/// The two Gneiting families.
///
/// `A31`: ψ(x) = (a x^α + b) / (b (a x^α + 1)), φ(x) = exp(−c x^γ).
/// `A32`: ψ(x) = (a x^α + 1)^τ, φ(x) = (1 + c x^γ)^(−ν).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GneitingFamily {
    A31 { b: f64 },
    A32 { nu: f64, tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GneitingParams {
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub family: GneitingFamily,
    pub sigma2_omega: f64,
}

impl GneitingParams {
    pub fn validate(&self) -> Result<()> {
        positive("a", self.a)?;
        positive("c", self.c)?;
        unit_half_open("alpha", self.alpha)?;
        unit_half_open("gamma", self.gamma)?;
        nonnegative("sigma2_omega", self.sigma2_omega)?;
        match self.family {
            GneitingFamily::A31 { b } => unit_half_open("b", b),
            GneitingFamily::A32 { nu, tau } => {
                positive("nu", nu)?;
                if (0.0..=1.0).contains(&tau) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("tau must lie in [0, 1], got {tau}")))
                }
            }
        }
    }

    fn psi(&self, x: f64) -> f64 {
        let ax = self.a * x.powf(self.alpha);
        match self.family {
            GneitingFamily::A31 { b } => (ax + b) / (b * (ax + 1.0)),
            GneitingFamily::A32 { tau, .. } => (ax + 1.0).powf(tau),
        }
    }

    fn phi(&self, x: f64) -> f64 {
        let cx = self.c * x.powf(self.gamma);
        match self.family {
            GneitingFamily::A31 { .. } => (-cx).exp(),
            GneitingFamily::A32 { nu, .. } => (1.0 + cx).powf(-nu),
        }
    }

    fn corr_unchecked(&self, h: f64, l: f64) -> f64 {
        let psi = self.psi(l * l);
        self.phi(h * h / psi) / psi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub rho: f64,
    /// Innovation variance of the scalar latent process; only Model B has one.
    pub sigma2_eta: Option<f64>,
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Domain(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if let Some(s) = self.sigma2_eta {
            nonnegative("sigma2_eta", s)?;
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be non-negative, got {v}")))
    }
}

fn unit_half_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1], got {v}")))
    }
}

fn lag(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} lag must be non-negative, got {v}")))
    }
}

/// `exp(−θ·lag)`.
pub fn exp_corr(theta: f64, lag_: f64) -> Result<f64> {
    positive("theta", theta)?;
    lag("distance", lag_)?;
    Ok((-theta * lag_).exp())
}

/// Gneiting-class correlation at spatial lag `h` (km) and temporal lag `l`
/// (days).
pub fn gneiting_corr(p: &GneitingParams, h: f64, l: f64) -> Result<f64> {
    p.validate()?;
    lag("spatial", h)?;
    lag("temporal", l)?;
    Ok(p.corr_unchecked(h, l))
}

/// `exp(−θ H)` elementwise.
pub fn spatial_corr_matrix(theta: f64, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    positive("theta", theta)?;
    if let Some(v) = h.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative distance {v}")));
    }
    Ok(h.map(|v| (-theta * v).exp()))
}

/// `exp(−θ₁ |t − t'|)` on `0..n_days`.
pub fn temporal_corr_matrix(theta1: f64, n_days: usize) -> Result<DMatrix<f64>> {
    positive("theta1", theta1)?;
    Ok(DMatrix::from_fn(n_days, n_days, |s, t| {
        (-theta1 * (s as f64 - t as f64).abs()).exp()
    }))
}

/// Temporal and spatial factors of the separable correlation, temporal first.
pub fn separable_corr_matrix(
    p: &SeparableParams,
    h: &DMatrix<f64>,
    n_days: usize,
) -> Result<KroneckerPair> {
    p.validate()?;
    KroneckerPair::new(
        temporal_corr_matrix(p.theta1, n_days)?,
        spatial_corr_matrix(p.theta2, h)?,
    )
}

/// Dense `dT × dT` Gneiting correlation matrix in global order
/// (`index = t·d + i`). Fails with a resource error when `dT > budget`.
pub fn nonseparable_corr_matrix(
    p: &GneitingParams,
    h: &DMatrix<f64>,
    n_days: usize,
    budget: usize,
) -> Result<DMatrix<f64>> {
    p.validate()?;
    let d = h.nrows();
    let n = d * n_days;
    if n > budget {
        return Err(Error::Resource { dim: n, budget });
    }
    // One d×d block per temporal lag; the full matrix is block Toeplitz.
    let blocks: Vec<DMatrix<f64>> = (0..n_days)
        .map(|l| h.map(|hv| p.corr_unchecked(hv, l as f64)))
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for t in 0..n_days {
        for s in 0..n_days {
            let b = &blocks[t.abs_diff(s)];
            out.view_mut((t * d, s * d), (d, d)).copy_from(b);
        }
    }
    Ok(out)
}

/// `ρ^l`, with the sign of ρ carried through odd integer lags.
fn rho_pow(rho: f64, l: f64) -> f64 {
    if l == 0.0 {
        return 1.0;
    }
    let m = rho.abs().powf(l);
    if rho < 0.0 && l % 2.0 == 1.0 {
        -m
    } else {
        m
    }
}

/// Stationary covariance of the additive dynamic model at lags `(h, l)`:
/// `ρ^l σ²_η/(1−ρ²) + σ²_ω exp(−θh)`.
pub fn implied_cov_model_b(e: &ExpSpatialParams, dyn_: &DynamicsParams, h: f64, l: f64) -> Result<f64> {
    e.validate()?;
    dyn_.validate()?;
    let s2eta = dyn_
        .sigma2_eta
        .ok_or_else(|| Error::Domain("Model B dynamics need sigma2_eta".into()))?;
    lag("temporal", l)?;
    Ok(rho_pow(dyn_.rho, l) * s2eta / (1.0 - dyn_.rho * dyn_.rho) + e.sigma2_omega * exp_corr(e.theta, h)?)
}

/// Stationary covariance of the multiplicative dynamic model at lags
/// `(h, l)`: `ρ^l/(1−ρ²) σ²_ω exp(−θh)`.
pub fn implied_cov_model_c(e: &ExpSpatialParams, dyn_: &DynamicsParams, h: f64, l: f64) -> Result<f64> {
    e.validate()?;
    dyn_.validate()?;
    lag("temporal", l)?;
    Ok(rho_pow(dyn_.rho, l) / (1.0 - dyn_.rho * dyn_.rho) * e.sigma2_omega * exp_corr(e.theta, h)?)
}
