//! Fully validated physical scenario shared by simulation and reconstruction:
//! particle, trap, background environment and the coupling channel whose
//! spectrum is being probed.

use crate::csl::{self, CslParams};
use crate::environment::{self, BackgroundBudget, Environment, EnvironmentError};
use crate::trap::{self, Particle, TrapError, TrapGeometry};
use crate::units::UnitSystem;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error("calibration error: {0}")]
    Calibration(String),
}

/// How the probed noise couples to the oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Direct force noise, prefactor 1/(2πmωmħ).
    Force,
    /// Electric-field noise with calibration k_E = Q²d^{-β}T^χg_E.
    ElectricField { k_e: f64 },
    /// Collapse noise with dimensionless spectrum and geometric factor η_z.
    Csl { eta_z: f64 },
}

impl Coupling {
    /// Calibration constant k in A = k/(2πmωmħ).
    pub fn calibration(&self, units: UnitSystem) -> f64 {
        match *self {
            Coupling::Force => 1.0,
            Coupling::ElectricField { k_e } => k_e,
            Coupling::Csl { eta_z } => units.hbar() * units.hbar() * eta_z,
        }
    }

    /// Forward-model prefactor A(ωm).
    pub fn prefactor(&self, mass: f64, omega_m: f64, units: UnitSystem) -> f64 {
        match *self {
            Coupling::Csl { eta_z } => csl::csl_prefactor(eta_z, mass, omega_m, units),
            _ => self.calibration(units) / (2.0 * PI * mass * omega_m * units.hbar()),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let (name, value) = match *self {
            Coupling::Force => return Ok(()),
            Coupling::ElectricField { k_e } => ("k_e", k_e),
            Coupling::Csl { eta_z } => ("eta_z", eta_z),
        };
        if value.is_finite() && value >= 0.0 {
            Ok(())
        } else {
            Err(ScenarioError::Calibration(format!("{name} must be finite and >= 0, got {value}")))
        }
    }
}

/// Everything needed to turn a spectrum into phonon numbers, apart from the
/// spectrum itself and the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub units: UnitSystem,
    pub particle: Particle,
    pub trap: TrapGeometry,
    /// Fixed AC amplitude; `None` means the voltage follows each target ωm.
    pub trap_voltage: Option<f64>,
    pub environment: Environment,
    pub coupling: Coupling,
    pub csl: Option<CslParams>,
    /// Initial occupation ⟨n⟩₀.
    pub n0: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        Particle::new(self.particle.radius, self.particle.density, self.particle.charge_count)?;
        self.trap.validate()?;
        if let Some(v) = self.trap_voltage {
            trap::mechanical_frequency(&trap::TrapConfig { voltage: v, geometry: self.trap }, &self.particle)?;
        }
        if let Some(g) = &self.environment.gas {
            g.validate()?;
        }
        if let Some(e) = &self.environment.efield {
            e.validate()?;
        }
        self.coupling.validate()?;
        if !(self.n0.is_finite() && self.n0 >= 0.0) {
            return Err(ScenarioError::Calibration(format!("n0 must be >= 0, got {}", self.n0)));
        }
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        self.particle.mass()
    }

    pub fn prefactor(&self, omega_m: f64) -> f64 {
        self.coupling.prefactor(self.mass(), omega_m, self.units)
    }

    pub fn background_budget(&self, omega_m: f64) -> Result<BackgroundBudget, ScenarioError> {
        Ok(environment::background_budget(&self.environment, &self.particle, omega_m)?)
    }

    /// Composite D'_p(ωm) of the channels not under reconstruction.
    pub fn background_rate(&self, omega_m: f64) -> Result<f64, ScenarioError> {
        Ok(self.background_budget(omega_m)?.composite)
    }

    /// Trap amplitude V₀ that realises `omega_m`.
    pub fn voltage_for(&self, omega_m: f64) -> Result<f64, ScenarioError> {
        Ok(trap::voltage_for_frequency(&self.trap, &self.particle, omega_m)?)
    }

    /// Hex SHA-256 over the canonical JSON form of the scenario.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}
