//! A narrow line seen through a short measurement rings at the kernel period;
//! the same line measured long enough is resolved without ringing.

use spectrometer::environment::{Environment, GasParams, GasSpecies};
use spectrometer::experiment::{run_campaign, NoiseModel, SweepPlan, SweepPoint};
use spectrometer::kernel::QuadratureConfig;
use spectrometer::reconstruct::{detect_ringing, reconstruct_sweep, resolution_bandwidth};
use spectrometer::scenario::{Coupling, Scenario};
use spectrometer::spectra::NoiseSpectrum;
use spectrometer::trap::{Particle, TrapGeometry};
use spectrometer::units::UnitSystem;
use std::f64::consts::PI;

fn scenario() -> Scenario {
    Scenario {
        units: UnitSystem::Si,
        particle: Particle::new(50e-9, 2300.0, 1000).unwrap(),
        trap: TrapGeometry {
            beta: 0.5,
            drive_frequency: 2.0 * PI * 1e4,
            endcap_distance: 0.8e-3,
        },
        trap_voltage: None,
        environment: Environment {
            gas: Some(GasParams {
                pressure: 1e-9,
                temperature: 4.0,
                molecular_mass: GasSpecies::H2.mass(),
            }),
            ..Environment::default()
        },
        coupling: Coupling::Force,
        csl: None,
        n0: 10.0,
    }
}

fn linear_plan(center: f64, half_span: f64, points: usize, t: f64) -> SweepPlan {
    let step = 2.0 * half_span / (points - 1) as f64;
    SweepPlan::from_points(
        (0..points)
            .map(|i| SweepPoint {
                omega_m: center - half_span + step * i as f64,
                t,
                repetitions: 1,
            })
            .collect(),
    )
    .unwrap()
}

const CENTER: f64 = 5e5;
const WIDTH: f64 = 100.0;

fn report(t: f64, half_span: f64, points: usize) -> spectrometer::reconstruct::RingingReport {
    let s = scenario();
    let line = NoiseSpectrum::gaussian(1e-37, CENTER, WIDTH).unwrap();
    let plan = linear_plan(CENTER, half_span, points, t);
    let data = run_campaign(&s, &line, &plan, NoiseModel::Off, 1, &QuadratureConfig::default()).unwrap();
    assert!(data.failures.is_empty());
    let est = reconstruct_sweep(&data, &s).unwrap();
    detect_ringing(&est, t).unwrap()
}

#[test]
fn short_measurement_rings_at_kernel_period() {
    let t = 1e-4;
    let r = report(t, 4.0 * resolution_bandwidth(t), 65);
    assert!(r.detected, "{r:?}");
    let ratio = r.match_ratio.unwrap();
    assert!((0.8..=1.25).contains(&ratio), "{ratio}");
}

#[test]
fn long_measurement_resolves_line_without_ringing() {
    let t = 0.2;
    let r = report(t, 6.0 * WIDTH, 241);
    assert!(!r.detected, "{r:?}");
}
