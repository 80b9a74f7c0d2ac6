//! Virtual measurement campaigns: sweep plans over (ωm, t), the forward model
//! at every point and an optional readout-noise model.
//!
//! Every point draws from its own ChaCha20 stream keyed by the master seed
//! and the point's (ωm, t), so results depend neither on evaluation order
//! nor on which other points are in the plan.

use crate::kernel::{self, FilterKernelParams, KernelError, QuadratureConfig};
use crate::scenario::{Scenario, ScenarioError};
use crate::spectra::NoiseSpectrum;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    Validation(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Validation(msg.into())
}

/// How measurement times are assigned across the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TimePolicy {
    /// Same t at every point.
    Fixed { t: f64 },
    /// t ∝ 1/ωm, anchored at the low end of the range.
    InverseFrequency { t_at_lo: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega_m: f64,
    pub t: f64,
    pub repetitions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    points: Vec<SweepPoint>,
}

impl SweepPlan {
    /// Arbitrary points; ωm must increase strictly.
    pub fn from_points(points: Vec<SweepPoint>) -> Result<Self, ExperimentError> {
        for (i, p) in points.iter().enumerate() {
            if !(p.omega_m.is_finite() && p.omega_m > 0.0) {
                return Err(invalid(format!("point {i}: omega_m must be > 0, got {}", p.omega_m)));
            }
            if !(p.t.is_finite() && p.t > 0.0) {
                return Err(invalid(format!("point {i}: t must be > 0, got {}", p.t)));
            }
            if p.repetitions == 0 {
                return Err(invalid(format!("point {i}: repetitions must be >= 1")));
            }
            if i > 0 && p.omega_m <= points[i - 1].omega_m {
                return Err(invalid(format!("point {i}: omega_m must increase strictly")));
            }
        }
        Ok(SweepPlan { points })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The plan with point `index` dropped.
    pub fn without(&self, index: usize) -> SweepPlan {
        let mut points = self.points.clone();
        points.remove(index);
        SweepPlan { points }
    }
}

/// Log-spaced grid over [lo, hi] (rad/s) with endpoints hit exactly.
pub fn plan_sweep(range: (f64, f64), n_points: usize, policy: TimePolicy, repetitions: u32) -> Result<SweepPlan, ExperimentError> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
        return Err(invalid(format!("range must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if n_points < 2 {
        return Err(invalid(format!("need at least 2 points, got {n_points}")));
    }
    let span = (hi / lo).ln();
    let points = (0..n_points)
        .map(|i| {
            let omega_m = match i {
                0 => lo,
                _ if i == n_points - 1 => hi,
                _ => lo * (span * i as f64 / (n_points - 1) as f64).exp(),
            };
            let t = match policy {
                TimePolicy::Fixed { t } => t,
                TimePolicy::InverseFrequency { t_at_lo } => t_at_lo * lo / omega_m,
            };
            SweepPoint { omega_m, t, repetitions }
        })
        .collect();
    SweepPlan::from_points(points)
}

/// Readout noise applied to each ⟨n⟩_t.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NoiseModel {
    Off,
    /// σ = √(⟨n⟩(⟨n⟩ + 1)/M), the thermal-state spread of M shots.
    #[default]
    Thermal,
    Fixed { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self, phonons: f64, repetitions: u32) -> f64 {
        match *self {
            NoiseModel::Off => 0.0,
            NoiseModel::Thermal => (phonons * (phonons + 1.0) / repetitions as f64).sqrt(),
            NoiseModel::Fixed { sigma } => sigma,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match *self {
            NoiseModel::Fixed { sigma } if !(sigma.is_finite() && sigma >= 0.0) => Err(invalid(format!("noise sigma must be >= 0, got {sigma}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub omega_m: f64,
    pub t: f64,
    /// Model ⟨n⟩_t.
    pub n_true: f64,
    /// Observed mean after noise and clamping at zero.
    pub n_obs: f64,
    pub sigma_n: f64,
    pub repetitions: u32,
    /// Index of the RNG stream this record drew from.
    pub stream: u64,
}

/// A point whose forward model failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub index: usize,
    pub omega_m: f64,
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDataset {
    pub fingerprint: String,
    pub n0: f64,
    pub seed: u64,
    pub records: Vec<MeasurementRecord>,
    pub failures: Vec<PointFailure>,
}

/// RNG stream of a sweep point: the first 8 bytes of SHA-256(ωm ‖ t).
pub fn stream_id(omega_m: f64, t: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(omega_m.to_bits().to_le_bytes());
    h.update(t.to_bits().to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn true_phonons(
    scenario: &Scenario,
    spectrum: &NoiseSpectrum,
    point: &SweepPoint,
    quad: &QuadratureConfig,
) -> Result<f64, String> {
    let params = FilterKernelParams::new(point.omega_m, point.t).map_err(|e| e.to_string())?;
    let background = scenario.background_rate(point.omega_m).map_err(|e| e.to_string())?;
    let prefactor = scenario.prefactor(point.omega_m);
    if prefactor == 0.0 || spectrum.is_zero() {
        return Ok(scenario.n0 + background * point.t);
    }
    kernel::expected_phonons(spectrum, prefactor, background, scenario.n0, params, quad)
        .map(|e| e.value)
        .map_err(|e: KernelError| e.to_string())
}

/// Runs the forward model and noise model at every point of `plan`.
pub fn run_campaign(
    scenario: &Scenario,
    spectrum: &NoiseSpectrum,
    plan: &SweepPlan,
    noise: NoiseModel,
    seed: u64,
    quad: &QuadratureConfig,
) -> Result<MeasurementDataset, ExperimentError> {
    scenario.validate()?;
    noise.validate()?;
    quad.validate().map_err(|e| invalid(e.to_string()))?;
    let outcomes: Vec<Result<MeasurementRecord, PointFailure>> = plan
        .points()
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let n_true = true_phonons(scenario, spectrum, point, quad).map_err(|reason| PointFailure {
                index,
                omega_m: point.omega_m,
                t: point.t,
                reason,
            })?;
            let sigma_n = noise.sigma(n_true, point.repetitions);
            let stream = stream_id(point.omega_m, point.t);
            let draw = if sigma_n > 0.0 {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                Normal::new(0.0, sigma_n).expect("finite sigma").sample(&mut rng)
            } else {
                0.0
            };
            Ok(MeasurementRecord {
                omega_m: point.omega_m,
                t: point.t,
                n_true,
                n_obs: (n_true + draw).max(0.0),
                sigma_n,
                repetitions: point.repetitions,
                stream,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(MeasurementDataset {
        fingerprint: scenario.fingerprint(),
        n0: scenario.n0,
        seed,
        records,
        failures,
    })
}

const DATASET_COLUMNS: [&str; 6] = ["omega_m_rad_s", "t_s", "n_true", "n_obs", "sigma_n", "reps"];

/// Writes the dataset CSV, preceded by a `#` line with fingerprint, n₀ and seed.
pub fn write_dataset_csv<W: Write>(dataset: &MeasurementDataset, mut out: W) -> Result<(), ExperimentError> {
    writeln!(
        out,
        "# fingerprint={} n0={:e} seed={} units=omega_m:rad/s,t:s,n:phonons",
        dataset.fingerprint, dataset.n0, dataset.seed
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_COLUMNS)?;
    for r in &dataset.records {
        w.write_record([
            format!("{:e}", r.omega_m),
            format!("{:e}", r.t),
            format!("{:e}", r.n_true),
            format!("{:e}", r.n_obs),
            format!("{:e}", r.sigma_n),
            r.repetitions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str, ExperimentError> {
    header
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
        .ok_or_else(|| ExperimentError::Format(format!("header lacks `{key}=`")))
}

/// Reads a dataset written by [`write_dataset_csv`]. Failures are not stored
/// in the CSV and come back empty.
pub fn read_dataset_csv<R: BufRead>(mut input: R) -> Result<MeasurementDataset, ExperimentError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let header = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| ExperimentError::Format("first line must be a `#` header".into()))?;
    let fingerprint = header_value(header, "fingerprint")?.to_string();
    let parse = |key: &str| -> Result<f64, ExperimentError> {
        header_value(header, key)?
            .parse()
            .map_err(|_| ExperimentError::Format(format!("bad `{key}` in header")))
    };
    let n0 = parse("n0")?;
    let seed = header_value(header, "seed")?
        .parse()
        .map_err(|_| ExperimentError::Format("bad `seed` in header".into()))?;
    let mut reader = csv::Reader::from_reader(input);
    if reader.headers()?.iter().ne(DATASET_COLUMNS) {
        return Err(ExperimentError::Format(format!("expected columns {}", DATASET_COLUMNS.join(","))));
    }
    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let rec = result?;
        let field = |i: usize| -> Result<f64, ExperimentError> {
            rec[i]
                .parse()
                .map_err(|_| ExperimentError::Format(format!("row {}: bad {}", row + 1, DATASET_COLUMNS[i])))
        };
        let (omega_m, t) = (field(0)?, field(1)?);
        records.push(MeasurementRecord {
            omega_m,
            t,
            n_true: field(2)?,
            n_obs: field(3)?,
            sigma_n: field(4)?,
            repetitions: rec[5]
                .parse()
                .map_err(|_| ExperimentError::Format(format!("row {}: bad reps", row + 1)))?,
            stream: stream_id(omega_m, t),
        });
    }
    Ok(MeasurementDataset {
        fingerprint,
        n0,
        seed,
        records,
        failures: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Environment, GasParams, GasSpecies};
    use crate::scenario::Coupling;
    use crate::trap::{Particle, TrapGeometry};
    use crate::units::{UnitSystem, HBAR};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn scenario(with_gas: bool) -> Scenario {
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
                gas: with_gas.then_some(GasParams {
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

    fn fixed(t: f64) -> TimePolicy {
        TimePolicy::Fixed { t }
    }

    #[test]
    fn three_point_log_grid() {
        let plan = plan_sweep((2.0 * PI * 1e2, 2.0 * PI * 1e6), 3, fixed(1e-2), 1).unwrap();
        let w: Vec<f64> = plan.points().iter().map(|p| p.omega_m).collect();
        assert_eq!(w[0], 2.0 * PI * 1e2);
        assert!((w[1] / (2.0 * PI * 1e4) - 1.0).abs() < 1e-14);
        assert_eq!(w[2], 2.0 * PI * 1e6);
        assert!(plan.points().iter().all(|p| p.t == 1e-2));
    }

    #[test]
    fn inverse_policy_halves_t() {
        let plan = plan_sweep((1e3, 2e3), 2, TimePolicy::InverseFrequency { t_at_lo: 1e-2 }, 1).unwrap();
        assert_eq!(plan.points()[0].t, 1e-2);
        assert!((plan.points()[1].t - 5e-3).abs() < 1e-18);
    }

    #[test]
    fn invalid_plans() {
        assert!(plan_sweep((1e3, 1e3), 3, fixed(1.0), 1).is_err());
        assert!(plan_sweep((0.0, 1e3), 3, fixed(1.0), 1).is_err());
        assert!(plan_sweep((1.0, 1e3), 1, fixed(1.0), 1).is_err());
        assert!(plan_sweep((1.0, 1e3), 3, fixed(0.0), 1).is_err());
        assert!(plan_sweep((1.0, 1e3), 3, fixed(1.0), 0).is_err());
    }

    #[test]
    fn silent_scenario_stays_at_n0() {
        let plan = plan_sweep((1e3, 1e6), 5, fixed(1e-3), 1).unwrap();
        let d = run_campaign(&scenario(false), &NoiseSpectrum::zero(), &plan, NoiseModel::Off, 1, &QuadratureConfig::default()).unwrap();
        assert_eq!(d.records.len(), 5);
        assert!(d.records.iter().all(|r| r.n_obs == 10.0 && r.sigma_n == 0.0));
    }

    #[test]
    fn white_matches_closed_form() {
        let s = scenario(true);
        let level = 1e-40;
        let plan = plan_sweep((2.0 * PI * 1e2, 2.0 * PI * 1e6), 7, fixed(1e-3), 1).unwrap();
        let d = run_campaign(&s, &NoiseSpectrum::white(level).unwrap(), &plan, NoiseModel::Off, 0, &QuadratureConfig::default()).unwrap();
        for r in &d.records {
            let bg = s.background_rate(r.omega_m).unwrap();
            let expect = s.n0 + bg * r.t + level * r.t / (4.0 * s.mass() * r.omega_m * HBAR);
            assert!((r.n_obs / expect - 1.0).abs() < 1e-6, "{} vs {expect}", r.n_obs);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let plan = plan_sweep((1e3, 1e5), 16, fixed(1e-3), 4).unwrap();
        let spec = NoiseSpectrum::gaussian(1e-37, 2e4, 3e3).unwrap();
        let run = |seed| run_campaign(&scenario(true), &spec, &plan, NoiseModel::Thermal, seed, &QuadratureConfig::default()).unwrap();
        let a = run(7);
        assert_eq!(a, run(7));
        assert_ne!(a.records, run(8).records);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let plan = plan_sweep((1e3, 1e5), 24, fixed(1e-3), 2).unwrap();
        let spec = NoiseSpectrum::gaussian(1e-37, 2e4, 3e3).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_campaign(&scenario(true), &spec, &plan, NoiseModel::Thermal, 3, &QuadratureConfig::default()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn removing_a_point_leaves_others() {
        let plan = plan_sweep((1e3, 1e5), 6, fixed(1e-3), 1).unwrap();
        let spec = NoiseSpectrum::white(1e-40).unwrap();
        let full = run_campaign(&scenario(true), &spec, &plan, NoiseModel::Thermal, 5, &QuadratureConfig::default()).unwrap();
        let cut = run_campaign(&scenario(true), &spec, &plan.without(2), NoiseModel::Thermal, 5, &QuadratureConfig::default()).unwrap();
        let mut expect = full.records.clone();
        expect.remove(2);
        let strip = |rs: &[MeasurementRecord]| rs.iter().map(|r| (r.omega_m, r.n_obs)).collect::<Vec<_>>();
        assert_eq!(strip(&expect), strip(&cut.records));
    }

    #[test]
    fn thermal_noise_is_unbiased() {
        let n_true = 50.0;
        let model = NoiseModel::Thermal;
        let sigma = model.sigma(n_true, 100);
        let dist = Normal::new(0.0, sigma).unwrap();
        let draws = 10_000;
        let mut sum = 0.0;
        for stream in 0..draws {
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            rng.set_stream(stream);
            sum += (n_true + dist.sample(&mut rng)).max(0.0);
        }
        let mean = sum / draws as f64;
        assert!((mean / n_true - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn observations_clamped_at_zero() {
        let plan = plan_sweep((1e3, 1e5), 32, fixed(1e-3), 1).unwrap();
        let mut s = scenario(false);
        s.n0 = 0.1;
        let d = run_campaign(&s, &NoiseSpectrum::zero(), &plan, NoiseModel::Fixed { sigma: 5.0 }, 2, &QuadratureConfig::default()).unwrap();
        assert!(d.records.iter().all(|r| r.n_obs >= 0.0));
        assert!(d.records.iter().any(|r| r.n_obs == 0.0));
    }

    #[test]
    fn point_failures_do_not_abort() {
        let plan = plan_sweep((1e3, 1e5), 4, fixed(1e-3), 1).unwrap();
        let quad = QuadratureConfig {
            rel_tol: 1e-13,
            max_segments: 16,
            ..QuadratureConfig::default()
        };
        let spec = NoiseSpectrum::gaussian(1e-37, 2e4, 1.0).unwrap();
        let d = run_campaign(&scenario(false), &spec, &plan, NoiseModel::Off, 0, &quad).unwrap();
        assert_eq!(d.records.len() + d.failures.len(), 4);
        assert!(!d.failures.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let plan = plan_sweep((1e3, 1e5), 5, fixed(1e-3), 3).unwrap();
        let d = run_campaign(&scenario(true), &NoiseSpectrum::white(1e-40).unwrap(), &plan, NoiseModel::Thermal, 9, &QuadratureConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# fingerprint="));
        assert!(text.lines().nth(1).unwrap() == "omega_m_rad_s,t_s,n_true,n_obs,sigma_n,reps");
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn plans_are_increasing(lo in 1.0f64..1e4, ratio in 1.01f64..1e4, n in 2usize..300) {
            let plan = plan_sweep((lo, lo * ratio), n, fixed(1e-3), 1).unwrap();
            prop_assert_eq!(plan.len(), n);
            prop_assert!(plan.points().windows(2).all(|w| w[1].omega_m > w[0].omega_m));
        }
    }
}
