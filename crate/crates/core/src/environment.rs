//! Markovian background heating: gas collisions, blackbody emission and
//! electric-field noise, plus the E-field coupling calibration k_E.
//!
//! All rates are in phonon/s and use SI constants.

use crate::spectra::NoiseSpectrum;
use crate::trap::Particle;
use crate::units::{AMU, C_LIGHT, HBAR, K_B};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("{field}: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("field PSD undefined at omega = {0:e} rad/s (must be > 0)")]
    Domain(f64),
}

fn check(field: &'static str, v: f64, allow_zero: bool) -> Result<(), EnvironmentError> {
    let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
    if ok {
        Ok(())
    } else {
        let bound = if allow_zero { ">= 0" } else { "> 0" };
        Err(EnvironmentError::Validation {
            field,
            reason: format!("must be {bound}, got {v}"),
        })
    }
}

/// Background gas species with a known molecular mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasSpecies {
    H2,
    He,
    N2,
}

impl GasSpecies {
    /// Molecular mass (kg).
    pub fn mass(self) -> f64 {
        match self {
            GasSpecies::H2 => 2.016 * AMU,
            GasSpecies::He => 4.002_602 * AMU,
            GasSpecies::N2 => 28.014 * AMU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasParams {
    /// Pressure P (Pa).
    pub pressure: f64,
    /// Temperature T (K).
    pub temperature: f64,
    /// Molecular mass m_g (kg).
    pub molecular_mass: f64,
}

impl GasParams {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        check("pressure", self.pressure, true)?;
        check("temperature", self.temperature, false)?;
        check("molecular_mass", self.molecular_mass, false)
    }
}

/// D_g = 6πPR²√(3 m_g k_B T)/ħ².
pub fn gas_diffusion(gas: &GasParams, radius: f64) -> Result<f64, EnvironmentError> {
    gas.validate()?;
    check("radius", radius, true)?;
    Ok(6.0 * PI * gas.pressure * radius * radius * (3.0 * gas.molecular_mass * K_B * gas.temperature).sqrt() / (HBAR * HBAR))
}

/// D'_g = ħD_g/(2mωm).
pub fn gas_heating_rate(diffusion: f64, mass: f64, omega_m: f64) -> Result<f64, EnvironmentError> {
    check("diffusion", diffusion, true)?;
    check("mass", mass, false)?;
    check("omega_m", omega_m, false)?;
    Ok(HBAR * diffusion / (2.0 * mass * omega_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackbodyParams {
    /// Internal temperature of the sphere (K).
    pub temperature: f64,
    /// Material density (kg/m³).
    pub density: f64,
    /// Im[(ε − 1)/(ε + 2)].
    pub im_eps: f64,
}

/// D'_bb = (2π⁴/63)(k_B T)⁶/(c⁵ħ⁵ρω)·Im[(ε − 1)/(ε + 2)].
pub fn blackbody_heating(temperature: f64, density: f64, im_eps: f64, omega_m: f64) -> Result<f64, EnvironmentError> {
    check("temperature", temperature, true)?;
    check("density", density, false)?;
    check("im_eps", im_eps, true)?;
    check("omega_m", omega_m, false)?;
    let kt = K_B * temperature;
    Ok(2.0 * PI.powi(4) / 63.0 * kt.powi(6) / (C_LIGHT.powi(5) * HBAR.powi(5) * density * omega_m) * im_eps)
}

/// Frequency dependence of the field PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldShape {
    /// ω^{-α}.
    PowerLaw { alpha: f64 },
    /// An arbitrary spectrum in place of ω^{-α}.
    Structured { spectrum: NoiseSpectrum },
}

/// S_E(ω) = g_E · shape(ω) · d^{-β} · T^χ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EFieldNoiseModel {
    pub g_e: f64,
    pub shape: FieldShape,
    /// Distance exponent β.
    pub distance_exponent: f64,
    /// Temperature exponent (γ in the main text, χ elsewhere).
    pub temperature_exponent: f64,
    /// Electrode distance d (m).
    pub electrode_distance: f64,
    /// Electrode temperature (K).
    pub electrode_temperature: f64,
}

impl EFieldNoiseModel {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        check("g_e", self.g_e, true)?;
        check("electrode_distance", self.electrode_distance, false)?;
        check("electrode_temperature", self.electrode_temperature, false)?;
        if let FieldShape::PowerLaw { alpha } = self.shape {
            if !alpha.is_finite() {
                return Err(EnvironmentError::Validation {
                    field: "alpha",
                    reason: "must be finite".into(),
                });
            }
        }
        Ok(())
    }

    /// d^{-β}·T^χ.
    pub fn geometry_factor(&self) -> f64 {
        self.electrode_distance.powf(-self.distance_exponent) * self.electrode_temperature.powf(self.temperature_exponent)
    }
}

pub fn efield_psd(model: &EFieldNoiseModel, omega: f64) -> Result<f64, EnvironmentError> {
    model.validate()?;
    if !(omega.is_finite() && omega > 0.0) {
        return Err(EnvironmentError::Domain(omega));
    }
    let shape = match &model.shape {
        FieldShape::PowerLaw { alpha } => omega.powf(-alpha),
        FieldShape::Structured { spectrum } => spectrum.evaluate(omega),
    };
    Ok(model.g_e * shape * model.geometry_factor())
}

/// D'_E = Q²S_E/(4mħωm).
pub fn efield_heating(charge: f64, mass: f64, omega_m: f64, field_psd: f64) -> Result<f64, EnvironmentError> {
    check("mass", mass, false)?;
    check("omega_m", omega_m, false)?;
    check("field_psd", field_psd, true)?;
    Ok(charge * charge * field_psd / (4.0 * mass * HBAR * omega_m))
}

/// k_E = Q²·d^{-β}·T^χ·g_E.
pub fn coupling_constant(model: &EFieldNoiseModel, charge: f64) -> Result<f64, EnvironmentError> {
    model.validate()?;
    Ok(charge * charge * model.geometry_factor() * model.g_e)
}

/// Fully specified reference system used to pin g_E from a measured rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReference {
    /// Charge (C).
    pub charge: f64,
    /// Mass (kg).
    pub mass: f64,
    /// Trap frequency (rad/s).
    pub omega: f64,
    /// Observed heating rate (phonon/s).
    pub heating_rate: f64,
    pub alpha: f64,
    pub distance_exponent: f64,
    pub temperature_exponent: f64,
    pub electrode_distance: f64,
    pub electrode_temperature: f64,
}

impl CalibrationReference {
    /// Singly charged ⁴⁰Ca⁺ at 2π·5.5 kHz heating at one quantum per second;
    /// the electrode distance and temperature must be supplied.
    pub fn calcium_ion(electrode_distance: f64, electrode_temperature: f64) -> Self {
        CalibrationReference {
            charge: crate::units::E_CHARGE,
            mass: 39.962_590_86 * AMU,
            omega: 2.0 * PI * 5.5e3,
            heating_rate: 1.0,
            alpha: 1.0,
            distance_exponent: 3.0,
            temperature_exponent: 0.57,
            electrode_distance,
            electrode_temperature,
        }
    }
}

/// g_E reproducing the reference heating rate.
pub fn calibrate_g_e(reference: &CalibrationReference) -> Result<f64, EnvironmentError> {
    check("charge", reference.charge.abs(), false)?;
    check("mass", reference.mass, false)?;
    check("omega", reference.omega, false)?;
    check("heating_rate", reference.heating_rate, true)?;
    check("electrode_distance", reference.electrode_distance, false)?;
    check("electrode_temperature", reference.electrode_temperature, false)?;
    let field_per_g = reference.omega.powf(-reference.alpha)
        * reference.electrode_distance.powf(-reference.distance_exponent)
        * reference.electrode_temperature.powf(reference.temperature_exponent);
    let psd = reference.heating_rate * 4.0 * reference.mass * HBAR * reference.omega / (reference.charge * reference.charge);
    Ok(psd / field_per_g)
}

/// Background channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundChannel {
    Gas,
    Blackbody,
    EField,
}

/// Enabled background channels and which one (if any) is being
/// reconstructed and therefore excluded from D'_p.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Environment {
    pub gas: Option<GasParams>,
    pub blackbody: Option<BlackbodyParams>,
    pub efield: Option<EFieldNoiseModel>,
    pub under_reconstruction: Option<BackgroundChannel>,
}

/// Per-channel rates at one ωm (phonon/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundBudget {
    pub gas: f64,
    pub blackbody: f64,
    pub efield: f64,
    /// Sum over included channels.
    pub composite: f64,
    /// D'_p ≤ 100 phonon/s, reported for ωm ≥ 2π·10³ only.
    pub regime_ok: Option<bool>,
}

/// Heating-rate ceiling expected from conventional sources above 2π·10³ rad/s.
pub const REGIME_LIMIT: f64 = 100.0;
const REGIME_FROM: f64 = 2.0 * PI * 1e3;

pub fn background_budget(env: &Environment, particle: &Particle, omega_m: f64) -> Result<BackgroundBudget, EnvironmentError> {
    check("omega_m", omega_m, false)?;
    let mass = particle.mass();
    let gas = match &env.gas {
        Some(g) => gas_heating_rate(gas_diffusion(g, particle.radius)?, mass, omega_m)?,
        None => 0.0,
    };
    let blackbody = match &env.blackbody {
        Some(b) => blackbody_heating(b.temperature, b.density, b.im_eps, omega_m)?,
        None => 0.0,
    };
    let efield = match &env.efield {
        Some(model) => efield_heating(particle.charge(), mass, omega_m, efield_psd(model, omega_m)?)?,
        None => 0.0,
    };
    let included = |c: BackgroundChannel| env.under_reconstruction != Some(c);
    let mut composite = 0.0;
    for (channel, rate) in [
        (BackgroundChannel::Gas, gas),
        (BackgroundChannel::Blackbody, blackbody),
        (BackgroundChannel::EField, efield),
    ] {
        if included(channel) {
            composite += rate;
        }
    }
    Ok(BackgroundBudget {
        gas,
        blackbody,
        efield,
        composite,
        regime_ok: (omega_m >= REGIME_FROM).then_some(composite <= REGIME_LIMIT),
    })
}
