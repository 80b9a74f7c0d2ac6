//! Continuous spontaneous localization as a heating channel: the sphere form
//! factor η_z, the collapse-noise forward model and the small-oscillation
//! validity condition.
//!
//! The collapse noise spectrum is dimensionless; η_z carries all
//! dimensions, and the channel prefactor is ħη_z/(2πmωm) (η_z/(2πmωm) with
//! ħ = 1).

use crate::kernel::{self, Estimate, FilterKernelParams, KernelError, QuadratureConfig};
use crate::spectra::NoiseSpectrum;
use crate::units::{UnitSystem, NUCLEON_MASS};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Below this R²/r_C² the bracket is summed as a series.
pub const SERIES_SWITCH: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CslError {
    #[error("{field}: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn invalid(field: &'static str, reason: String) -> CslError {
    CslError::Validation { field, reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CslParams {
    /// Collapse rate λ (Hz).
    pub lambda: f64,
    /// Correlation length r_C (m).
    pub r_c: f64,
    /// Reference nucleon mass m₀ (kg).
    pub m0: f64,
    /// Total sphere mass M (kg).
    pub total_mass: f64,
}

impl CslParams {
    pub fn new(lambda: f64, r_c: f64, total_mass: f64) -> Result<Self, CslError> {
        let p = CslParams {
            lambda,
            r_c,
            m0: NUCLEON_MASS,
            total_mass,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CslError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if !(self.r_c.is_finite() && self.r_c > 0.0) {
            return Err(invalid("r_c", format!("must be > 0, got {}", self.r_c)));
        }
        if !(self.m0.is_finite() && self.m0 > 0.0) {
            return Err(invalid("m0", format!("must be > 0, got {}", self.m0)));
        }
        if !(self.total_mass.is_finite() && self.total_mass >= 0.0) {
            return Err(invalid("total_mass", format!("must be >= 0, got {}", self.total_mass)));
        }
        Ok(())
    }
}

/// x − 2 + (x + 2)e^{−x}, which behaves like x³/6 for small x.
pub fn form_bracket(x: f64) -> f64 {
    if x < SERIES_SWITCH {
        bracket_series(x)
    } else {
        bracket_direct(x)
    }
}

fn bracket_direct(x: f64) -> f64 {
    x - 2.0 + (x + 2.0) * (-x).exp()
}

// Σ_{k≥3} (−1)^{k+1}(k − 2)x^k/k!
fn bracket_series(x: f64) -> f64 {
    let mut power = x * x * x / 6.0;
    let mut sum = power;
    for k in 4..40 {
        power *= -x / k as f64;
        let term = (k - 2) as f64 * power;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// η_z = 3λ(M/m₀)²(r_C⁴/R⁶)·b(R²/r_C²).
pub fn eta_z(p: &CslParams, radius: f64) -> Result<f64, CslError> {
    p.validate()?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid("radius", format!("must be > 0, got {radius}")));
    }
    let x = (radius / p.r_c).powi(2);
    let ratio = p.total_mass / p.m0;
    Ok(3.0 * p.lambda * ratio * ratio * p.r_c.powi(4) / radius.powi(6) * form_bracket(x))
}

/// Channel prefactor ħη_z/(2πmωm).
pub fn csl_prefactor(eta_z: f64, mass: f64, omega_m: f64, units: UnitSystem) -> f64 {
    units.hbar() * eta_z / (2.0 * PI * mass * omega_m)
}

/// ⟨n⟩_t driven by collapse noise with the given (dimensionless) spectrum.
#[allow(clippy::too_many_arguments)]
pub fn csl_expected_phonons(
    p: &CslParams,
    radius: f64,
    spectrum: &NoiseSpectrum,
    params: FilterKernelParams,
    mass: f64,
    n0: f64,
    quad: &QuadratureConfig,
    units: UnitSystem,
) -> Result<Estimate, CslError> {
    params.validate()?;
    let eta = eta_z(p, radius)?;
    if eta == 0.0 {
        return Ok(Estimate { value: n0, abs_error: 0.0 });
    }
    if !(mass.is_finite() && mass > 0.0) {
        return Err(invalid("mass", format!("must be > 0, got {mass}")));
    }
    let prefactor = csl_prefactor(eta, mass, params.omega_m, units);
    Ok(kernel::expected_phonons(spectrum, prefactor, 0.0, n0, params, quad)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillationCheck {
    Ok,
    Violated,
}

/// Default fraction of r_C² the position variance may reach.
pub const DEFAULT_THETA: f64 = 0.01;

/// ⟨x²⟩ ≤ θ·r_C².
pub fn small_oscillation_check(position_variance: f64, r_c: f64, theta: f64) -> OscillationCheck {
    if position_variance <= theta * r_c * r_c {
        OscillationCheck::Ok
    } else {
        OscillationCheck::Violated
    }
}

/// Thermal-state position variance ħ(2n + 1)/(2mωm).
pub fn thermal_position_variance(phonons: f64, mass: f64, omega_m: f64, units: UnitSystem) -> f64 {
    units.hbar() * (2.0 * phonons + 1.0) / (2.0 * mass * omega_m)
}
