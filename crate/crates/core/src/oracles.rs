//! Independent closed-form and reduced-integral solutions for Gaussian and
//! white spectra, used to check the forward model.
//!
//! The Gaussian oracle describes a single Gaussian line at ν₀ on the whole
//! real line. The forward model sees the even extension of the spectrum, so
//! comparisons go through [`gaussian_nt_even`], which adds the mirrored line.

use crate::quad::{self, QuadError, Tolerance};
use crate::units::UnitSystem;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Narrow-limit guard: γt must stay below this.
pub const NARROW_GUARD: f64 = 0.05;
/// Broad-limit guard: γt must exceed this.
pub const BROAD_GUARD: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle input: {0}")]
    Validation(String),
    #[error("outside the applicability guard: {0}")]
    Guard(String),
    #[error("oracle quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracleInput {
    /// Line strength η.
    pub strength: f64,
    /// Line centre ν₀ (rad/s).
    pub center: f64,
    /// Line width γ (rad/s).
    pub width: f64,
    /// ωm (rad/s).
    pub omega_m: f64,
    /// t (s).
    pub t: f64,
    /// m (kg).
    pub mass: f64,
}

impl GaussianOracleInput {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |name: &str, v: f64| OracleError::Validation(format!("{name} must be > 0, got {v}"));
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(bad("width", self.width));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(bad("t", self.t));
        }
        if !(self.omega_m.is_finite() && self.omega_m > 0.0) {
            return Err(bad("omega_m", self.omega_m));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(bad("mass", self.mass));
        }
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(OracleError::Validation(format!("strength must be >= 0, got {}", self.strength)));
        }
        if !self.center.is_finite() {
            return Err(OracleError::Validation("center must be finite".into()));
        }
        Ok(())
    }

    fn detuning(&self) -> f64 {
        self.center - self.omega_m
    }
}

/// 𝔑_t = η/(2γmωmħ√2π)·∫₀^{γt}(γt − z)e^{−z²/2}cos(bz)dz with b = (ν₀ − ωm)/γ.
pub fn gaussian_nt(input: &GaussianOracleInput, units: UnitSystem, rel_tol: f64) -> Result<f64, OracleError> {
    input.validate()?;
    if input.strength == 0.0 {
        return Ok(0.0);
    }
    let span = input.width * input.t;
    let b = input.detuning() / input.width;
    let upper = span.min(40.0);
    let pieces = ((b.abs() * upper / PI).ceil() as usize + 4).min(1_000_000);
    let integral = quad::integrate(
        |z| (span - z) * (-0.5 * z * z).exp() * (b * z).cos(),
        0.0,
        upper,
        pieces,
        Tolerance {
            relative: rel_tol,
            absolute: 1e-3 * rel_tol * span.min(1.0) * span.min(1.0),
        },
        4_000_000,
    )?;
    let prefactor = input.strength / (2.0 * input.width * input.mass * input.omega_m * units.hbar() * SQRT_2PI);
    Ok(prefactor * integral.value)
}

/// Oracle for the even extension of a Gaussian line: 𝔑(ν₀) + 𝔑(−ν₀) when the
/// lines are well separated (ν₀ ≥ 8γ), 𝔑(0) when ν₀ = 0.
pub fn gaussian_nt_even(input: &GaussianOracleInput, units: UnitSystem, rel_tol: f64) -> Result<f64, OracleError> {
    input.validate()?;
    if input.center == 0.0 {
        return gaussian_nt(input, units, rel_tol);
    }
    if input.center < 8.0 * input.width {
        return Err(OracleError::Guard(format!(
            "mirrored lines overlap (center {:e} < 8 widths {:e})",
            input.center,
            8.0 * input.width
        )));
    }
    let mirrored = GaussianOracleInput {
        center: -input.center,
        ..*input
    };
    Ok(gaussian_nt(input, units, rel_tol)? + gaussian_nt(&mirrored, units, rel_tol)?)
}

/// Narrow-line limit and, close to resonance, its peak approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowLimit {
    /// ηγ/(2mωmħ√2π)·(1 − cos δt)/δ².
    pub closed_form: f64,
    /// ηγt²/(4mωmħ√2π), present when |δ| ≤ 1/t.
    pub peak_approximation: Option<f64>,
}

pub fn gaussian_limit_narrow(input: &GaussianOracleInput, units: UnitSystem) -> Result<NarrowLimit, OracleError> {
    input.validate()?;
    let span = input.width * input.t;
    if span >= NARROW_GUARD {
        return Err(OracleError::Guard(format!("narrow limit needs width*t < {NARROW_GUARD}, got {span}")));
    }
    let delta = input.detuning();
    let t = input.t;
    let u = delta * t;
    let shape = if u.abs() < 1e-4 {
        0.5 * t * t * (1.0 - u * u / 12.0)
    } else {
        let s = (0.5 * u).sin();
        2.0 * s * s / (delta * delta)
    };
    let base = input.strength * input.width / (2.0 * input.mass * input.omega_m * units.hbar() * SQRT_2PI);
    Ok(NarrowLimit {
        closed_form: base * shape,
        peak_approximation: (delta.abs() <= 1.0 / t).then_some(0.5 * base * t * t),
    })
}

/// (ηt/(4mωmħ))·e^{−δ²/2γ²}.
pub fn gaussian_limit_broad(input: &GaussianOracleInput, units: UnitSystem) -> Result<f64, OracleError> {
    input.validate()?;
    let span = input.width * input.t;
    if span <= BROAD_GUARD {
        return Err(OracleError::Guard(format!("broad limit needs width*t > {BROAD_GUARD}, got {span}")));
    }
    let z = input.detuning() / input.width;
    Ok(input.strength * input.t / (4.0 * input.mass * input.omega_m * units.hbar()) * (-0.5 * z * z).exp())
}

/// n₀ + D_p·t/(4mωmħ).
pub fn white_noise_nt(level: f64, mass: f64, omega_m: f64, t: f64, n0: f64, units: UnitSystem) -> Result<f64, OracleError> {
    if !(mass > 0.0 && omega_m > 0.0) {
        return Err(OracleError::Validation(format!("mass and omega_m must be > 0, got {mass}, {omega_m}")));
    }
    Ok(n0 + level * t / (4.0 * mass * omega_m * units.hbar()))
}
