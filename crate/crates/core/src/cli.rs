//! Command-line front end: `simulate`, `reconstruct`, `oracle` and
//! `validate`. All files are written by one thread after the parallel work
//! is done, and every CSV starts with a `#` line carrying the fingerprint.

use crate::config::{Loaded, ScenarioConfig};
use crate::csl;
use crate::experiment::{self, run_campaign, MeasurementDataset};
use crate::oracles::{self, GaussianOracleInput, OracleError};
use crate::reconstruct::{self, ReconstructError, RingingConfig, SpectrumEstimate};
use crate::trap;
use crate::units::{FrequencyUnit, UnitSystem};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Usage(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "spectrometer", version, about = "Heating-based noise spectrometer for a trapped oscillator")]
pub struct Cli {
    /// Worker threads for point evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a virtual measurement campaign and write dataset.csv and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the quadrature relative tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Invert a dataset into estimate.csv, ringing.json and (when the config
    /// has a spectrum) comparison.csv.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate an analytic oracle.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Check a config and print derived quantities as JSON.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Limit {
    None,
    Narrow,
    Broad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitFlag {
    Hz,
    RadPerSec,
}

impl From<UnitFlag> for FrequencyUnit {
    fn from(u: UnitFlag) -> Self {
        match u {
            UnitFlag::Hz => FrequencyUnit::Hz,
            UnitFlag::RadPerSec => FrequencyUnit::RadPerSec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemFlag {
    Si,
    Natural,
}

#[derive(Debug, Args)]
pub struct OracleGrid {
    /// Lower end of the ωm grid.
    #[arg(long)]
    pub lo: f64,
    /// Upper end of the ωm grid.
    #[arg(long)]
    pub hi: f64,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Oscillator mass (kg).
    #[arg(long)]
    pub mass: f64,
    /// Unit of all frequency flags.
    #[arg(long, value_enum, default_value_t = UnitFlag::Hz)]
    pub frequency_unit: UnitFlag,
    #[arg(long, value_enum, default_value_t = SystemFlag::Si)]
    pub units: SystemFlag,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Reduced-integral solution for a Gaussian line, with optional limits.
    Gaussian {
        #[arg(long)]
        strength: f64,
        #[arg(long)]
        center: f64,
        #[arg(long)]
        width: f64,
        /// Measurement time (s).
        #[arg(long)]
        t: f64,
        /// Require a limit column; a guard violation is a usage error.
        #[arg(long, value_enum, default_value_t = Limit::None)]
        limit: Limit,
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        grid: OracleGrid,
    },
    /// White-noise closed form, one column per measurement time.
    White {
        /// D_p (spectral level).
        #[arg(long)]
        level: f64,
        #[arg(long, num_args = 1.., required = true)]
        t: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        n0: f64,
        #[command(flatten)]
        grid: OracleGrid,
    },
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let cfg = ScenarioConfig::load(path).map_err(|e| match e {
        crate::config::ConfigError::Io { path, source } => io_err(&path, source),
        other => CliError::Config(other),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(cfg.build(base)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(&dir.join(name), e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&dir.join(name), e))
}

fn write_table(dir: &Path, name: &str, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut w = create(dir, name)?;
    writeln!(w, "# {header}").map_err(|e| io_err(&path, e))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(columns).map_err(|e| io_err(&path, e))?;
    for row in rows {
        csv.write_record(row).map_err(|e| io_err(&path, e))?;
    }
    csv.flush().map_err(|e| io_err(&path, e))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed, tolerance } => simulate(&config, &out, seed, tolerance, cli.threads),
        Command::Reconstruct { config, dataset, out } => reconstruct_cmd(&config, &dataset, &out, cli.threads),
        Command::Oracle { which } => oracle(which),
        Command::Validate { config } => validate(&config),
    }
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, tolerance: Option<f64>, threads: Option<usize>) -> Result<(), CliError> {
    let mut loaded = load(config)?;
    if let Some(tol) = tolerance {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(CliError::Usage(format!("--tolerance must be > 0, got {tol}")));
        }
        loaded.quad.rel_tol = tol;
    }
    let seed = seed.unwrap_or(loaded.seed);
    let spectrum = loaded
        .spectrum
        .clone()
        .ok_or_else(|| crate::config::ConfigError::Invalid {
            path: "spectrum".into(),
            message: "required by simulate".into(),
        })?;
    let plan = loaded.plan.clone().ok_or_else(|| crate::config::ConfigError::Invalid {
        path: "sweep".into(),
        message: "required by simulate".into(),
    })?;
    let dataset = with_threads(threads, || run_campaign(&loaded.scenario, &spectrum, &plan, loaded.noise, seed, &loaded.quad))?
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut buf = Vec::new();
    experiment::write_dataset_csv(&dataset, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    let mut w = create(out, "dataset.csv")?;
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| io_err(&out.join("dataset.csv"), e))?;
    let regime_violations = dataset
        .records
        .iter()
        .filter(|r| {
            loaded
                .scenario
                .background_budget(r.omega_m)
                .map(|b| b.regime_ok == Some(false))
                .unwrap_or(false)
        })
        .count();
    let summary = json!({
        "fingerprint": dataset.fingerprint,
        "seed": seed,
        "n0": dataset.n0,
        "points_planned": plan.len(),
        "points_written": dataset.records.len(),
        "failures": dataset.failures,
        "noise": loaded.noise,
        "quadrature_rel_tol": loaded.quad.rel_tol,
        "calibration": loaded.scenario.coupling.calibration(loaded.scenario.units),
        "background_regime_violations": regime_violations,
    });
    write_json(out, "summary.json", &summary)
}

fn read_dataset(path: &Path) -> Result<MeasurementDataset, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    experiment::read_dataset_csv(BufReader::new(file)).map_err(|e| match e {
        experiment::ExperimentError::Io(io) => io_err(path, io),
        other => CliError::Integrity(format!("{}: {other}", path.display())),
    })
}

#[derive(Debug, Serialize)]
struct BandResult {
    band: (f64, f64),
    #[serde(flatten)]
    report: Option<reconstruct::RingingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

fn ringing_summary(estimate: &SpectrumEstimate) -> serde_json::Value {
    let cfg = RingingConfig::default();
    let Some(first) = estimate.points.first() else {
        return json!({ "detected": false, "bands": [], "note": "empty estimate" });
    };
    let t = first.t;
    if estimate.points.iter().any(|p| p.t != t) {
        return json!({ "detected": false, "bands": [], "note": "measurement time varies across the sweep; ringing check needs a single t" });
    }
    let bands = reconstruct::dense_bands(estimate, t, cfg.min_points);
    let results: Vec<BandResult> = bands
        .iter()
        .map(|&band| match reconstruct::detect_ringing_in(estimate, t, Some(band), &cfg) {
            Ok(report) => BandResult {
                band,
                report: Some(report),
                skipped: None,
            },
            Err(e) => BandResult {
                band,
                report: None,
                skipped: Some(e.to_string()),
            },
        })
        .collect();
    let detected = results.iter().any(|r| r.report.as_ref().is_some_and(|r| r.detected));
    let note = if bands.is_empty() {
        Some(format!(
            "no run of {} points with spacing below pi/(2t) = {:e} rad/s; run a denser sweep",
            cfg.min_points,
            std::f64::consts::PI / (2.0 * t)
        ))
    } else {
        None
    };
    json!({
        "detected": detected,
        "t_s": t,
        "expected_spacing": reconstruct::resolution_bandwidth(t),
        "window": cfg.window,
        "bands": results,
        "note": note,
    })
}

fn reconstruct_cmd(config: &Path, dataset: &Path, out: &Path, threads: Option<usize>) -> Result<(), CliError> {
    let loaded = load(config)?;
    let data = read_dataset(dataset)?;
    let estimate = with_threads(threads, || reconstruct::reconstruct_sweep(&data, &loaded.scenario))?.map_err(|e| match e {
        ReconstructError::Integrity { .. } => CliError::Integrity(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    })?;
    let header = format!(
        "fingerprint={} units=omega_m:rad/s,c_hat:spectral-density,resolution:rad/s",
        data.fingerprint
    );
    let rows: Vec<Vec<String>> = estimate
        .points
        .iter()
        .map(|p| vec![num(p.omega_m), num(p.c_hat), num(p.resolution), num(p.sigma_c)])
        .collect();
    write_table(out, "estimate.csv", &header, &["omega_m_rad_s", "c_hat", "resolution_rad_s", "sigma_c"], &rows)?;
    let mut ringing = ringing_summary(&estimate);
    ringing["fingerprint"] = json!(data.fingerprint);
    write_json(out, "ringing.json", &ringing)?;
    if let Some(truth) = &loaded.spectrum {
        let rows: Vec<Vec<String>> = reconstruct::compare(&estimate, truth)
            .iter()
            .map(|r| vec![num(r.omega_m), num(r.c_true), num(r.c_hat), num(r.rel_error)])
            .collect();
        write_table(out, "comparison.csv", &header, &["omega_m_rad_s", "c_true", "c_hat", "rel_error"], &rows)?;
    }
    Ok(())
}

fn grid(g: &OracleGrid) -> Result<Vec<f64>, CliError> {
    let unit: FrequencyUnit = g.frequency_unit.into();
    let plan = experiment::plan_sweep(
        (unit.to_angular(g.lo), unit.to_angular(g.hi)),
        g.points,
        experiment::TimePolicy::Fixed { t: 1.0 },
        1,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(plan.points().iter().map(|p| p.omega_m).collect())
}

fn system(flag: SystemFlag) -> UnitSystem {
    match flag {
        SystemFlag::Si => UnitSystem::Si,
        SystemFlag::Natural => UnitSystem::Natural,
    }
}

fn oracle_err(e: OracleError) -> CliError {
    match e {
        OracleError::Quadrature(q) => CliError::Numerical(q.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

fn split_out(path: &Path) -> (PathBuf, String) {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "oracle.csv".into());
    (dir, name)
}

fn oracle(which: OracleCommand) -> Result<(), CliError> {
    match which {
        OracleCommand::Gaussian {
            strength,
            center,
            width,
            t,
            limit,
            tolerance,
            grid: g,
        } => {
            let unit: FrequencyUnit = g.frequency_unit.into();
            let units = system(g.units);
            let rel_tol = tolerance.unwrap_or(1e-8);
            let mut rows = Vec::new();
            for omega_m in grid(&g)? {
                let input = GaussianOracleInput {
                    strength,
                    center: unit.to_angular(center),
                    width: unit.to_angular(width),
                    omega_m,
                    t,
                    mass: g.mass,
                };
                let exact = oracles::gaussian_nt(&input, units, rel_tol).map_err(oracle_err)?;
                let narrow = oracles::gaussian_limit_narrow(&input, units);
                let broad = oracles::gaussian_limit_broad(&input, units);
                match limit {
                    Limit::Narrow => {
                        narrow.clone().map_err(oracle_err)?;
                    }
                    Limit::Broad => {
                        broad.clone().map_err(oracle_err)?;
                    }
                    Limit::None => {}
                }
                let narrow = narrow.ok();
                rows.push(vec![
                    num(omega_m),
                    num(exact),
                    opt_num(narrow.map(|n| n.closed_form)),
                    opt_num(narrow.and_then(|n| n.peak_approximation)),
                    opt_num(broad.ok()),
                ]);
            }
            let (dir, name) = split_out(&g.out);
            let header = format!("oracle=gaussian strength={strength:e} center={center:e} width={width:e} t={t:e} units=omega_m:rad/s,n:phonons");
            write_table(&dir, &name, &header, &["omega_m_rad_s", "n_exact", "n_narrow", "n_narrow_peak", "n_broad"], &rows)
        }
        OracleCommand::White { level, t, n0, grid: g } => {
            let units = system(g.units);
            let mut rows = Vec::new();
            for omega_m in grid(&g)? {
                let mut row = vec![num(omega_m)];
                for &ti in &t {
                    let n = oracles::white_noise_nt(level, g.mass, omega_m, ti, n0, units).map_err(oracle_err)?;
                    row.push(num(n));
                }
                rows.push(row);
            }
            let mut columns = vec!["omega_m_rad_s".to_string()];
            columns.extend(t.iter().map(|ti| format!("n_t={ti:e}")));
            let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
            let (dir, name) = split_out(&g.out);
            let header = format!("oracle=white level={level:e} n0={n0:e} units=omega_m:rad/s,n:phonons");
            write_table(&dir, &name, &header, &columns, &rows)
        }
    }
}

fn validate(config: &Path) -> Result<(), CliError> {
    let loaded = load(config)?;
    let s = &loaded.scenario;
    let mut report = json!({
        "fingerprint": s.fingerprint(),
        "mass_kg": s.mass(),
        "charge_c": s.particle.charge(),
        "coupling": s.coupling,
        "calibration": s.coupling.calibration(s.units),
        "n0": s.n0,
    });
    if let Some(v) = s.trap_voltage {
        let omega = trap::mechanical_frequency(&trap::TrapConfig { voltage: v, geometry: s.trap }, &s.particle)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        report["fixed_voltage"] = json!({
            "voltage": v,
            "omega_m_rad_s": omega,
            "operating_range": format!("{:?}", trap::validate_operating_range(omega)),
        });
    }
    if let Some(plan) = &loaded.plan {
        let ends = [plan.points()[0].omega_m, plan.points()[plan.len() - 1].omega_m];
        let mut at = Vec::new();
        for w in ends {
            let budget = s.background_budget(w).map_err(|e| CliError::Usage(e.to_string()))?;
            let voltage = s.voltage_for(w).map_err(|e| CliError::Usage(e.to_string()))?;
            at.push(json!({
                "omega_m_rad_s": w,
                "trap_voltage": voltage,
                "operating_range": format!("{:?}", trap::validate_operating_range(w)),
                "background": budget,
            }));
        }
        report["sweep"] = json!({ "points": plan.len(), "ends": at });
        if let (Some(params), Some(theta)) = (&s.csl, loaded.csl_theta) {
            let variance = csl::thermal_position_variance(s.n0.max(1.0), s.mass(), ends[0], s.units);
            report["csl_small_oscillation"] = json!(format!("{:?}", csl::small_oscillation_check(variance, params.r_c, theta)));
        }
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(())
}
