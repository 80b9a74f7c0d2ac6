//! Physical constants and the unit-system switch.
//!
//! Every prefactor that carries a factor of ħ asks the active [`UnitSystem`]
//! for it, so the same code serves SI scenarios and the ħ = 1 convention
//! used by dimensionless checks.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;
/// Elementary charge (C).
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Reference nucleon mass used by the collapse-model form factor (kg).
pub const NUCLEON_MASS: f64 = 1.6726e-27;
/// Atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Convention for ħ inside prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    /// SI units with ħ = 1.054571817e-34 J·s.
    #[default]
    Si,
    /// ħ = 1.
    Natural,
}

impl UnitSystem {
    pub fn hbar(self) -> f64 {
        match self {
            UnitSystem::Si => HBAR,
            UnitSystem::Natural => 1.0,
        }
    }
}

/// Unit in which user-facing frequencies are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// Ordinary frequency f; converted with ω = 2πf.
    #[default]
    Hz,
    /// Angular frequency, used as is.
    RadPerSec,
}

impl FrequencyUnit {
    /// Converts a frequency written in this unit into rad/s.
    pub fn to_angular(self, value: f64) -> f64 {
        match self {
            FrequencyUnit::Hz => 2.0 * PI * value,
            FrequencyUnit::RadPerSec => value,
        }
    }

    /// Converts a frequency in rad/s into this unit.
    pub fn from_angular(self, omega: f64) -> f64 {
        match self {
            FrequencyUnit::Hz => omega / (2.0 * PI),
            FrequencyUnit::RadPerSec => omega,
        }
    }

    /// Factor that turns a frequency in this unit into rad/s.
    pub fn scale(self) -> f64 {
        self.to_angular(1.0)
    }
}
