//! Charged nanosphere in a Paul trap: mass, charge and secular frequency.

use crate::units::E_CHARGE;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("{field}: {reason}")]
    Validation { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> TrapError {
    TrapError::Validation {
        field,
        reason: reason.into(),
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), TrapError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be > 0, got {v}")))
    }
}

/// Levitated sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Radius R (m).
    pub radius: f64,
    /// Density ρ (kg/m³).
    pub density: f64,
    /// Net charge in elementary charges.
    pub charge_count: u64,
}

impl Particle {
    pub fn new(radius: f64, density: f64, charge_count: u64) -> Result<Self, TrapError> {
        positive("radius", radius)?;
        positive("density", density)?;
        Ok(Particle {
            radius,
            density,
            charge_count,
        })
    }

    pub fn mass(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3) * self.density
    }

    /// Charge Q (C).
    pub fn charge(&self) -> f64 {
        self.charge_count as f64 * E_CHARGE
    }
}

/// Everything about the trap except the AC amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    /// Geometric form factor β, 0 < β ≤ 1.
    pub beta: f64,
    /// Drive frequency Ω_d (rad/s).
    pub drive_frequency: f64,
    /// Endcap distance d (m).
    pub endcap_distance: f64,
}

impl TrapGeometry {
    pub fn validate(&self) -> Result<(), TrapError> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("must lie in (0, 1], got {}", self.beta)));
        }
        positive("drive_frequency", self.drive_frequency)?;
        positive("endcap_distance", self.endcap_distance)
    }
}

/// Paul trap with zero DC offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// AC amplitude V₀ (V).
    pub voltage: f64,
    pub geometry: TrapGeometry,
}

/// (4/3)πR³ρ.
pub fn sphere_mass(radius: f64, density: f64) -> Result<f64, TrapError> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(invalid("radius", format!("must be >= 0, got {radius}")));
    }
    positive("density", density)?;
    Ok(4.0 / 3.0 * PI * radius.powi(3) * density)
}

// ωm per volt: βQ/(√2·m·Ω_d·d²).
fn frequency_per_volt(geometry: &TrapGeometry, particle: &Particle) -> Result<f64, TrapError> {
    geometry.validate()?;
    let mass = particle.mass();
    if !(mass > 0.0) {
        return Err(invalid("mass", "zero mass leaves the frequency undefined"));
    }
    if particle.charge_count == 0 {
        return Err(invalid("charge_count", "an uncharged particle is not trapped"));
    }
    Ok(geometry.beta * particle.charge() / (SQRT_2 * mass * geometry.drive_frequency * geometry.endcap_distance.powi(2)))
}

/// ωm = V₀βQ/(√2·m·Ω_d·d²).
pub fn mechanical_frequency(trap: &TrapConfig, particle: &Particle) -> Result<f64, TrapError> {
    if !(trap.voltage.is_finite() && trap.voltage >= 0.0) {
        return Err(invalid("voltage", format!("must be >= 0, got {}", trap.voltage)));
    }
    Ok(trap.voltage * frequency_per_volt(&trap.geometry, particle)?)
}

/// V₀ that puts the secular frequency at `omega_target`.
pub fn voltage_for_frequency(geometry: &TrapGeometry, particle: &Particle, omega_target: f64) -> Result<f64, TrapError> {
    if !(omega_target.is_finite() && omega_target >= 0.0) {
        return Err(invalid("omega_m", format!("must be >= 0, got {omega_target}")));
    }
    Ok(omega_target / frequency_per_volt(geometry, particle)?)
}

/// Lower and upper ends of the usable range, 2π·10² and 2π·10⁶ rad/s.
pub const OPERATING_RANGE: (f64, f64) = (2.0 * PI * 1e2, 2.0 * PI * 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeCheck {
    Ok,
    BelowRange,
    AboveRange,
}

impl RangeCheck {
    pub fn is_ok(self) -> bool {
        self == RangeCheck::Ok
    }
}

/// Soft check of ωm against [`OPERATING_RANGE`]; never an error.
pub fn validate_operating_range(omega_m: f64) -> RangeCheck {
    if omega_m < OPERATING_RANGE.0 {
        RangeCheck::BelowRange
    } else if omega_m > OPERATING_RANGE.1 {
        RangeCheck::AboveRange
    } else {
        RangeCheck::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_trap(voltage: f64) -> (TrapConfig, Particle) {
        let trap = TrapConfig {
            voltage,
            geometry: TrapGeometry {
                beta: 0.5,
                drive_frequency: 2.0 * PI * 1e4,
                endcap_distance: 0.8e-3,
            },
        };
        (trap, Particle::new(50e-9, 2300.0, 1000).unwrap())
    }

    #[test]
    fn masses() {
        assert_eq!(sphere_mass(0.0, 2300.0).unwrap(), 0.0);
        let m = sphere_mass(50e-9, 2300.0).unwrap();
        assert!((m / 1.204e-18 - 1.0).abs() < 1e-3, "{m}");
        let m = sphere_mass(1e-6, 2300.0).unwrap();
        assert!((m / 9.63e-15 - 1.0).abs() < 1e-3, "{m}");
        assert!(sphere_mass(-1.0, 2300.0).is_err());
    }

    #[test]
    fn reference_frequency_example() {
        let (trap, particle) = reference_trap(1000.0);
        let w = mechanical_frequency(&trap, &particle).unwrap();
        // 1000·0.5·1000e/(√2·m·2π·10⁴·(0.8e-3)²) with m = 1.2043e-18 kg
        let m = 4.0 / 3.0 * PI * 1.25e-22 * 2300.0;
        let by_hand = 1000.0 * 0.5 * 1000.0 * 1.602176634e-19 / (2f64.sqrt() * m * 2.0 * PI * 1e4 * 0.64e-6);
        assert!((w - by_hand).abs() < 1e-9 * by_hand);
        assert!((w / 1.17e6 - 1.0).abs() < 5e-3, "{w}");
        let v = voltage_for_frequency(&trap.geometry, &particle, w).unwrap();
        assert!((v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn zero_cases() {
        let (trap, particle) = reference_trap(0.0);
        assert_eq!(mechanical_frequency(&trap, &particle).unwrap(), 0.0);
        assert_eq!(voltage_for_frequency(&trap.geometry, &particle, 0.0).unwrap(), 0.0);
        let neutral = Particle { charge_count: 0, ..particle };
        assert!(mechanical_frequency(&reference_trap(10.0).0, &neutral).is_err());
        let massless = Particle { radius: 0.0, ..particle };
        assert!(mechanical_frequency(&reference_trap(10.0).0, &massless).is_err());
    }

    #[test]
    fn operating_range() {
        assert_eq!(validate_operating_range(2.0 * PI * 1e4), RangeCheck::Ok);
        assert_eq!(validate_operating_range(2.0 * PI * 10.0), RangeCheck::BelowRange);
        assert_eq!(validate_operating_range(2.0 * PI * 1e7), RangeCheck::AboveRange);
    }

    proptest! {
        #[test]
        fn frequency_scalings(v in 1.0..1e4f64, beta in 0.05..0.5f64, q in 1u64..10_000, r in 1e-8..1e-6f64, rho in 500.0..5000.0f64, drive in 1e3..1e6f64, d in 1e-4..1e-2f64, k in 1.1..3.0f64) {
            let geometry = TrapGeometry { beta, drive_frequency: drive, endcap_distance: d };
            let particle = Particle::new(r, rho, q).unwrap();
            let base = mechanical_frequency(&TrapConfig { voltage: v, geometry }, &particle).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
            let w = |v: f64, g: TrapGeometry, p: Particle| mechanical_frequency(&TrapConfig { voltage: v, geometry: g }, &p).unwrap();
            let k2 = k.min(2.0);
            let cases = [
                (w(k * v, geometry, particle), k * base),
                (w(v, TrapGeometry { beta: beta * k2, ..geometry }, particle), k2 * base),
                (w(v, geometry, Particle { charge_count: 2 * q, ..particle }), 2.0 * base),
                (w(v, geometry, Particle { density: k * rho, ..particle }), base / k),
                (w(v, TrapGeometry { drive_frequency: k * drive, ..geometry }, particle), base / k),
                (w(v, TrapGeometry { endcap_distance: k * d, ..geometry }, particle), base / (k * k)),
            ];
            for (got, want) in cases {
                prop_assert!(close(got, want));
            }
            let back = voltage_for_frequency(&geometry, &particle, base).unwrap();
            prop_assert!((back - v).abs() <= 1e-12 * v);
        }

        #[test]
        fn mass_strictly_increasing(r in 1e-9..1e-5f64, rho in 1.0..1e4f64, k in 1.001..3.0f64) {
            let m = sphere_mass(r, rho).unwrap();
            prop_assert!(sphere_mass(k * r, rho).unwrap() > m);
            prop_assert!(sphere_mass(r, k * rho).unwrap() > m);
        }
    }
}
