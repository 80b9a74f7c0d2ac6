//! Spectrum reconstruction by the peak approximation, and detection of the
//! ringing left behind by features narrower than the resolution bandwidth.
//!
//! Each record inverts algebraically:
//! Ĉ(ωm) = 4mωmħ(n̄ − n₀ − D'_p t)/(k t), σ_c = 4mωmħσ_n/(k t).

use crate::experiment::{MeasurementDataset, MeasurementRecord};
use crate::scenario::{Scenario, ScenarioError};
use crate::spectra::NoiseSpectrum;
use crate::units::UnitSystem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("dataset fingerprint {found} does not match scenario {expected}")]
    Integrity { expected: String, found: String },
    #[error("insufficient sampling: {0}")]
    Capability(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Half-width 2π/t of the filter kernel's main lobe (rad/s).
pub fn resolution_bandwidth(t: f64) -> f64 {
    2.0 * PI / t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatePoint {
    pub omega_m: f64,
    pub t: f64,
    pub c_hat: f64,
    /// 2π/t.
    pub resolution: f64,
    pub sigma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Calibration k used in the inversion (k_E for the E-field channel).
    pub calibration: f64,
    pub points: Vec<EstimatePoint>,
}

/// Inverts one record; negative estimates pass through unclamped.
pub fn reconstruct_point(
    record: &MeasurementRecord,
    n0: f64,
    background_rate: f64,
    calibration: f64,
    mass: f64,
    units: UnitSystem,
) -> Result<EstimatePoint, ReconstructError> {
    if !(calibration.is_finite() && calibration > 0.0) {
        return Err(ReconstructError::Calibration(format!("calibration must be > 0, got {calibration}")));
    }
    if !(record.t.is_finite() && record.t > 0.0) {
        return Err(ReconstructError::Validation(format!("t must be > 0, got {}", record.t)));
    }
    if !(mass.is_finite() && mass > 0.0) {
        return Err(ReconstructError::Validation(format!("mass must be > 0, got {mass}")));
    }
    let scale = 4.0 * mass * record.omega_m * units.hbar() / (calibration * record.t);
    Ok(EstimatePoint {
        omega_m: record.omega_m,
        t: record.t,
        c_hat: scale * (record.n_obs - n0 - background_rate * record.t),
        resolution: resolution_bandwidth(record.t),
        sigma_c: scale * record.sigma_n,
    })
}

/// Inverts every record using the scenario's modelled background D'_p(ωm).
pub fn reconstruct_sweep(dataset: &MeasurementDataset, scenario: &Scenario) -> Result<SpectrumEstimate, ReconstructError> {
    let expected = scenario.fingerprint();
    if dataset.fingerprint != expected {
        return Err(ReconstructError::Integrity {
            expected,
            found: dataset.fingerprint.clone(),
        });
    }
    let calibration = scenario.coupling.calibration(scenario.units);
    let mass = scenario.mass();
    let points = dataset
        .records
        .par_iter()
        .map(|r| {
            let background = scenario.background_rate(r.omega_m)?;
            reconstruct_point(r, dataset.n0, background, calibration, mass, scenario.units)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpectrumEstimate { calibration, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub omega_m: f64,
    pub c_true: f64,
    pub c_hat: f64,
    /// (Ĉ − C̃)/C̃, or NaN where C̃ = 0.
    pub rel_error: f64,
}

pub fn compare(estimate: &SpectrumEstimate, truth: &NoiseSpectrum) -> Vec<ComparisonRow> {
    estimate
        .points
        .iter()
        .map(|p| {
            let c_true = truth.evaluate(p.omega_m);
            let rel_error = if c_true != 0.0 { (p.c_hat - c_true) / c_true } else { f64::NAN };
            ComparisonRow {
                omega_m: p.omega_m,
                c_true,
                c_hat: p.c_hat,
                rel_error,
            }
        })
        .collect()
}

/// n̄(t) = intercept + slope·t by least squares, for one ωm measured at
/// several times. The slope is the total heating rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBaseline {
    pub intercept: f64,
    pub slope: f64,
}

pub fn fit_linear_baseline(samples: &[(f64, f64)]) -> Result<LinearBaseline, ReconstructError> {
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_n = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_t).powi(2)).sum();
    if samples.len() < 2 || !(sxx > 0.0) {
        return Err(ReconstructError::Validation("baseline fit needs at least two distinct times".into()));
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mean_t) * (s.1 - mean_n)).sum();
    let slope = sxy / sxx;
    Ok(LinearBaseline {
        intercept: mean_n - slope * mean_t,
        slope,
    })
}

/// Tuning of the ringing detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingingConfig {
    /// Accepted range of measured spacing over 2π/t.
    pub window: (f64, f64),
    pub min_points: usize,
    /// Minimum depth of a counted dip, as a fraction of max |Ĉ| in the band.
    pub prominence: f64,
    /// Fewest dip-to-dip gaps needed for a verdict.
    pub min_spacings: usize,
    /// Allowed deviation of each gap from an integer number of periods.
    pub harmonic_tolerance: f64,
}

impl Default for RingingConfig {
    fn default() -> Self {
        RingingConfig {
            window: (0.8, 1.25),
            min_points: 8,
            prominence: 1e-3,
            min_spacings: 2,
            harmonic_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingingReport {
    pub detected: bool,
    /// Fundamental dip-to-dip spacing (rad/s).
    pub spacing: Option<f64>,
    /// 2π/t.
    pub expected_spacing: f64,
    pub match_ratio: Option<f64>,
    /// Frequency band examined (rad/s).
    pub band: (f64, f64),
    /// Refined dip positions (rad/s).
    pub minima: Vec<f64>,
}

/// Ringing check over the whole estimate with default settings.
pub fn detect_ringing(estimate: &SpectrumEstimate, t: f64) -> Result<RingingReport, ReconstructError> {
    detect_ringing_in(estimate, t, None, &RingingConfig::default())
}

/// Maximal runs of the estimate sampled finer than π/(2t) with at least
/// `min_points` points.
pub fn dense_bands(estimate: &SpectrumEstimate, t: f64, min_points: usize) -> Vec<(f64, f64)> {
    let limit = PI / (2.0 * t);
    let w: Vec<f64> = estimate.points.iter().map(|p| p.omega_m).collect();
    let mut bands = Vec::new();
    let mut start = 0;
    for i in 1..=w.len() {
        if i == w.len() || w[i] - w[i - 1] >= limit {
            if i - start >= min_points.max(1) {
                bands.push((w[start], w[i - 1]));
            }
            start = i;
        }
    }
    bands
}

// Residual of a least-squares straight line.
fn linear_residual(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter().zip(y).map(|(a, b)| b - my - slope * (a - mx)).collect()
}

// Largest period of which every gap is close to an integer multiple,
// refined over the gaps; `None` below `min_gaps` consistent gaps.
fn fundamental_spacing(gaps: &[f64], tolerance: f64, min_gaps: usize) -> Option<f64> {
    let mut candidates: Vec<f64> = gaps.iter().flat_map(|&g| (1..=4).map(move |k| g / k as f64)).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.into_iter().find_map(|period| {
        let fits = gaps.iter().all(|&g| {
            let k = (g / period).round();
            k >= 1.0 && (g / period - k).abs() <= tolerance
        });
        if !fits || gaps.len() < min_gaps {
            return None;
        }
        let multiples: f64 = gaps.iter().map(|&g| (g / period).round()).sum();
        Some(gaps.iter().sum::<f64>() / multiples)
    })
}

// Vertex of the parabola through three points, kept inside the bracket.
fn parabolic_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let (a, b) = (x[1] - x[0], x[1] - x[2]);
    let (fa, fb) = (y[1] - y[2], y[1] - y[0]);
    let denom = a * fa - b * fb;
    if denom == 0.0 {
        return x[1];
    }
    (x[1] - 0.5 * (a * a * fa - b * b * fb) / denom).clamp(x[0], x[2])
}

// Indices of dips deeper than `delta` relative to the neighbouring peaks.
fn significant_minima(y: &[f64], delta: f64) -> Vec<usize> {
    let mut minima = Vec::new();
    let (mut lo_val, mut lo_idx) = (f64::INFINITY, 0);
    let mut hi_val = f64::NEG_INFINITY;
    let mut seeking_min = false;
    for (i, &v) in y.iter().enumerate() {
        if v < lo_val {
            lo_val = v;
            lo_idx = i;
        }
        if v > hi_val {
            hi_val = v;
        }
        if seeking_min {
            if v > lo_val + delta {
                minima.push(lo_idx);
                seeking_min = false;
                hi_val = v;
            }
        } else if v < hi_val - delta {
            seeking_min = true;
            lo_val = v;
            lo_idx = i;
        }
    }
    minima
}

/// Removes a straight-line trend from Ĉ, locates the dips of the residual
/// (sign changes of its slope, with hysteresis) and compares the fundamental
/// dip spacing with 2π/t. Gaps spanning a main lobe count as two periods.
pub fn detect_ringing_in(
    estimate: &SpectrumEstimate,
    t: f64,
    band: Option<(f64, f64)>,
    cfg: &RingingConfig,
) -> Result<RingingReport, ReconstructError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(ReconstructError::Validation(format!("t must be > 0, got {t}")));
    }
    let expected = resolution_bandwidth(t);
    let (lo, hi) = band.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let inside: Vec<&EstimatePoint> = estimate.points.iter().filter(|p| p.omega_m >= lo && p.omega_m <= hi).collect();
    let limit = PI / (2.0 * t);
    if inside.len() < cfg.min_points {
        return Err(ReconstructError::Capability(format!(
            "{} points in band, need at least {}; run a denser sweep",
            inside.len(),
            cfg.min_points
        )));
    }
    let x: Vec<f64> = inside.iter().map(|p| p.omega_m).collect();
    let y: Vec<f64> = inside.iter().map(|p| p.c_hat).collect();
    let widest = x.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if widest >= limit {
        return Err(ReconstructError::Capability(format!(
            "point spacing {widest:e} rad/s exceeds pi/(2t) = {limit:e} rad/s; run a denser sweep"
        )));
    }
    let residual = linear_residual(&x, &y);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let delta = cfg.prominence * scale;
    let minima: Vec<f64> = if delta > 0.0 {
        significant_minima(&residual, delta)
            .into_iter()
            .map(|i| {
                if i == 0 || i + 1 == x.len() {
                    x[i]
                } else {
                    parabolic_vertex([x[i - 1], x[i], x[i + 1]], [residual[i - 1], residual[i], residual[i + 1]])
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let gaps: Vec<f64> = minima.windows(2).map(|w| w[1] - w[0]).collect();
    let spacing = fundamental_spacing(&gaps, cfg.harmonic_tolerance, cfg.min_spacings.max(1));
    let match_ratio = spacing.map(|s| s / expected);
    let detected = match_ratio.is_some_and(|r| r >= cfg.window.0 && r <= cfg.window.1);
    Ok(RingingReport {
        detected,
        spacing,
        expected_spacing: expected,
        match_ratio,
        band: (x[0], x[x.len() - 1]),
        minima,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Environment, GasParams, GasSpecies};
    use crate::experiment::{plan_sweep, run_campaign, NoiseModel, TimePolicy};
    use crate::kernel::QuadratureConfig;
    use crate::scenario::Coupling;
    use crate::trap::{Particle, TrapGeometry};
    use proptest::prelude::*;

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

    fn record(n_obs: f64, t: f64) -> MeasurementRecord {
        MeasurementRecord {
            omega_m: 1e4,
            t,
            n_true: n_obs,
            n_obs,
            sigma_n: 0.5,
            repetitions: 1,
            stream: 0,
        }
    }

    fn synthetic(x: &[f64], f: impl Fn(f64) -> f64) -> SpectrumEstimate {
        SpectrumEstimate {
            calibration: 1.0,
            points: x
                .iter()
                .map(|&w| EstimatePoint {
                    omega_m: w,
                    t: 1.0,
                    c_hat: f(w),
                    resolution: 0.0,
                    sigma_c: 0.0,
                })
                .collect(),
        }
    }

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn resolution_values() {
        assert!((resolution_bandwidth(1e-2) - 2.0 * PI * 100.0).abs() < 1e-9);
        assert_eq!(resolution_bandwidth(2e-3), 0.5 * resolution_bandwidth(1e-3));
        assert!((resolution_bandwidth(1e-4) - 2.0 * PI * 1e4).abs() < 1e-7);
    }

    #[test]
    fn background_only_gives_zero() {
        let p = reconstruct_point(&record(10.0 + 3.0 * 1e-2, 1e-2), 10.0, 3.0, 1.0, 1e-18, UnitSystem::Si).unwrap();
        assert!(p.c_hat.abs() < 1e-40);
    }

    #[test]
    fn below_background_stays_negative() {
        let p = reconstruct_point(&record(9.0, 1e-2), 10.0, 0.0, 1.0, 1e-18, UnitSystem::Si).unwrap();
        assert!(p.c_hat < 0.0);
        assert!(p.sigma_c > 0.0);
    }

    #[test]
    fn zero_calibration_rejected() {
        let err = reconstruct_point(&record(11.0, 1e-2), 10.0, 0.0, 0.0, 1e-18, UnitSystem::Si);
        assert!(matches!(err, Err(ReconstructError::Calibration(_))));
    }

    #[test]
    fn error_propagation() {
        let m = 1e-18;
        let p = reconstruct_point(&record(12.0, 1e-3), 10.0, 0.0, 2.0, m, UnitSystem::Natural).unwrap();
        assert!((p.sigma_c - 4.0 * m * 1e4 * 0.5 / (2.0 * 1e-3)).abs() < 1e-12 * p.sigma_c);
    }

    #[test]
    fn white_round_trip() {
        let s = scenario();
        let level = 1e-40;
        let quad = QuadratureConfig::default();
        for t in [1e-4, 1e-3, 1e-2] {
            let plan = plan_sweep((2.0 * PI * 1e2, 2.0 * PI * 1e6), 12, TimePolicy::Fixed { t }, 1).unwrap();
            let d = run_campaign(&s, &NoiseSpectrum::white(level).unwrap(), &plan, NoiseModel::Off, 0, &quad).unwrap();
            let est = reconstruct_sweep(&d, &s).unwrap();
            for p in &est.points {
                assert!((p.c_hat / level - 1.0).abs() < 10.0 * quad.rel_tol, "{} at {}", p.c_hat, p.omega_m);
                assert_eq!(p.resolution, 2.0 * PI / t);
            }
        }
    }

    #[test]
    fn broad_gaussian_round_trip() {
        let s = scenario();
        let (center, width) = (2.0 * PI * 1e4, 5e3);
        let spec = NoiseSpectrum::gaussian(1e-36, center, width).unwrap();
        let plan = plan_sweep((center - width, center + width), 21, TimePolicy::Fixed { t: 1e-2 }, 1).unwrap();
        let d = run_campaign(&s, &spec, &plan, NoiseModel::Off, 0, &QuadratureConfig::default()).unwrap();
        for row in compare(&reconstruct_sweep(&d, &s).unwrap(), &spec) {
            assert!(row.rel_error.abs() < 0.05, "{row:?}");
        }
    }

    #[test]
    fn fingerprint_mismatch() {
        let s = scenario();
        let plan = plan_sweep((1e3, 1e4), 3, TimePolicy::Fixed { t: 1e-3 }, 1).unwrap();
        let d = run_campaign(&s, &NoiseSpectrum::zero(), &plan, NoiseModel::Off, 0, &QuadratureConfig::default()).unwrap();
        let mut other = s.clone();
        other.n0 = 20.0;
        assert!(matches!(reconstruct_sweep(&d, &other), Err(ReconstructError::Integrity { .. })));
    }

    #[test]
    fn empty_dataset() {
        let s = scenario();
        let d = MeasurementDataset {
            fingerprint: s.fingerprint(),
            n0: s.n0,
            seed: 0,
            records: Vec::new(),
            failures: Vec::new(),
        };
        assert!(reconstruct_sweep(&d, &s).unwrap().points.is_empty());
    }

    #[test]
    fn baseline_fit_recovers_line() {
        let fit = fit_linear_baseline(&[(1e-3, 10.1), (2e-3, 10.2), (4e-3, 10.4)]).unwrap();
        assert!((fit.slope - 100.0).abs() < 1e-9);
        assert!((fit.intercept - 10.0).abs() < 1e-12);
        assert!(fit_linear_baseline(&[(1e-3, 1.0), (1e-3, 2.0)]).is_err());
    }

    #[test]
    fn smooth_estimate_not_ringing() {
        let t = 1.0;
        let x = linspace(0.0, 60.0, 200);
        let est = synthetic(&x, |w| 1.0 + 0.3 * (w / 30.0) + 0.2 * (-(w - 25.0).powi(2) / 200.0).exp());
        assert!(!detect_ringing(&est, t).unwrap().detected);
    }

    #[test]
    fn injected_sidelobes_detected() {
        let t = 1.0;
        let nu0 = 31.3;
        let x = linspace(0.0, 60.0, 240);
        let amp = 5.0;
        let est = synthetic(&x, |w| {
            let d = w - nu0;
            let lobe = if d == 0.0 { t * t / 4.0 } else { (d * t / 2.0).sin().powi(2) / (d * d) };
            1.0 + 0.01 * w + amp * lobe
        });
        let r = detect_ringing(&est, t).unwrap();
        assert!(r.detected, "{r:?}");
        assert!((r.match_ratio.unwrap() - 1.0).abs() < 0.05);
        for m in &r.minima {
            let k = (m - nu0) / (2.0 * PI / t);
            assert!((k - k.round()).abs() < 0.05, "dip at {m} in {:?}", r.minima);
        }
    }

    #[test]
    fn coarse_sampling_is_a_capability_error() {
        let x = linspace(0.0, 60.0, 30);
        let est = synthetic(&x, |w| w);
        assert!(matches!(detect_ringing(&est, 1.0), Err(ReconstructError::Capability(_))));
        let few = synthetic(&linspace(0.0, 1.0, 5), |w| w);
        assert!(matches!(detect_ringing(&few, 1.0), Err(ReconstructError::Capability(_))));
    }

    #[test]
    fn spacing_counts_main_lobe_twice() {
        assert!((fundamental_spacing(&[2.0, 1.0, 1.02, 0.98], 0.2, 2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fundamental_spacing(&[2.0, 2.0], 0.2, 2), Some(2.0));
        assert_eq!(fundamental_spacing(&[1.0], 0.2, 2), None);
    }

    #[test]
    fn dense_band_selection() {
        let mut x = linspace(0.0, 10.0, 50);
        x.extend(linspace(20.0, 30.0, 5));
        x.extend(linspace(40.0, 45.0, 40));
        let bands = dense_bands(&synthetic(&x, |w| w), 1.0, 8);
        assert_eq!(bands, vec![(0.0, 10.0), (40.0, 45.0)]);
    }

    proptest! {
        #[test]
        fn detected_implies_window(seed_shift in 0.0f64..6.0, amp in 1.0f64..10.0, slope in -0.05f64..0.05) {
            let x = linspace(0.0, 60.0, 240);
            let est = synthetic(&x, |w| {
                let d = w - 30.0 - seed_shift;
                let lobe = if d == 0.0 { 0.25 } else { (d / 2.0).sin().powi(2) / (d * d) };
                2.0 + slope * w + amp * lobe
            });
            let r = detect_ringing(&est, 1.0).unwrap();
            if r.detected {
                let ratio = r.match_ratio.unwrap();
                prop_assert!((0.8..=1.25).contains(&ratio));
            }
            prop_assert!(r.detected);
        }
    }
}
