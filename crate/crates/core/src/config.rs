//! TOML scenario configuration: parsing with path-addressed errors, lossless
//! re-serialisation and conversion into a validated [`Scenario`].
//!
//! User-facing frequencies (sweep range, drive frequency, spectrum
//! frequencies) are written in `units.frequency` and converted to rad/s.
//! Spectral densities and environment parameters are always SI.

use crate::csl::{self, CslParams};
use crate::environment::{
    self, BackgroundChannel, BlackbodyParams, CalibrationReference, EFieldNoiseModel, Environment, FieldShape, GasParams, GasSpecies,
};
use crate::experiment::{plan_sweep, NoiseModel, SweepPlan, TimePolicy};
use crate::kernel::QuadratureConfig;
use crate::scenario::{Coupling, Scenario};
use crate::spectra::{build_spectrum, Extrapolation, Interpolation, NoiseSpectrum, SpectrumComponent, SpectrumError, Table};
use crate::trap::{Particle, TrapGeometry};
use crate::units::{FrequencyUnit, UnitSystem, NUCLEON_MASS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    /// Dotted location of the offending field.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { path, .. } | ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io { .. } => None,
        }
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be >= 0, got {v}")))
    }
}

fn is_true(v: &bool) -> bool {
    *v
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    #[serde(default)]
    pub frequency: FrequencyUnit,
    #[serde(default)]
    pub system: UnitSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    /// m.
    pub radius: f64,
    /// kg/m³.
    pub density: f64,
    /// Elementary charges.
    pub charge: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfigBlock {
    /// Fixed AC amplitude (V). Without it the voltage tracks each target ωm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<f64>,
    pub beta: f64,
    /// In `units.frequency`.
    pub drive_frequency: f64,
    /// m.
    pub endcap_distance: f64,
}

/// Molecular mass: a preset species or a value in kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GasMass {
    Species(GasSpecies),
    Kilograms(f64),
}

impl GasMass {
    pub fn kilograms(self) -> f64 {
        match self {
            GasMass::Species(s) => s.mass(),
            GasMass::Kilograms(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasConfig {
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub enabled: bool,
    /// Pa.
    pub pressure: f64,
    /// K.
    pub temperature: f64,
    pub m_g: GasMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackbodyConfig {
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub enabled: bool,
    /// Internal temperature (K).
    pub temperature: f64,
    /// Defaults to the particle density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    pub im_eps: f64,
}

/// g_E given directly or calibrated against a reference system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeSource {
    Value(f64),
    Reference(ReferenceSystem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSystem {
    /// ⁴⁰Ca⁺ at 2π·5.5 kHz heating at 1 phonon/s, same electrodes.
    CalciumIon,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    3.0
}
fn default_chi() -> f64 {
    0.57
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EFieldConfig {
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub enabled: bool,
    pub g_e: GeSource,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub distance_exponent: f64,
    #[serde(default = "default_chi")]
    pub temperature_exponent: f64,
    /// m.
    pub electrode_distance: f64,
    /// K.
    pub electrode_temperature: f64,
}

fn default_n0() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default = "default_n0")]
    pub n0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas: Option<GasConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blackbody: Option<BlackbodyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efield: Option<EFieldConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Force,
    #[default]
    ElectricField,
    Csl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
}

fn default_m0() -> f64 {
    NUCLEON_MASS
}
fn default_theta() -> f64 {
    csl::DEFAULT_THETA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CslConfig {
    /// Hz.
    pub lambda: f64,
    /// m.
    pub r_c: f64,
    #[serde(default = "default_m0")]
    pub m0: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

/// One spectrum component; frequencies in `units.frequency`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentConfig {
    White {
        level: f64,
    },
    GaussianPeak {
        strength: f64,
        center: f64,
        width: f64,
    },
    /// `prefactor · f^-exponent` with f in the configured unit.
    PowerLaw {
        prefactor: f64,
        exponent: f64,
        cutoff: f64,
    },
    /// Inline samples, or a two-column CSV (frequency,value) relative to the config.
    Tabulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frequencies: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default)]
        interpolation: Interpolation,
        #[serde(default)]
        extrapolation: Extrapolation,
    },
}

fn default_reps() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// In `units.frequency`.
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    pub time: TimePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub units: UnitsConfig,
    pub particle: ParticleConfig,
    pub trap: TrapConfigBlock,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csl: Option<CslConfig>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<ComponentConfig>>,
}

/// Everything a run needs, in SI and rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub scenario: Scenario,
    pub spectrum: Option<NoiseSpectrum>,
    pub plan: Option<SweepPlan>,
    pub noise: NoiseModel,
    pub seed: u64,
    pub quad: QuadratureConfig,
    pub frequency_unit: FrequencyUnit,
    /// Threshold for the CSL small-oscillation check.
    pub csl_theta: Option<f64>,
}

// "missing field `x`" is reported at the parent; move it onto the field.
fn parse_error(path: String, message: &str) -> ConfigError {
    let message = message.trim();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            let path = if path.is_empty() || path == "." { field.to_string() } else { format!("{path}.{field}") };
            return ConfigError::Parse {
                path,
                message: "missing required field".into(),
            };
        }
    }
    ConfigError::Parse {
        path: if path.is_empty() { ".".into() } else { path },
        message: message.to_string(),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            parse_error(path, e.inner().message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Validates and converts; relative table files resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Loaded, ConfigError> {
        let unit = self.units.frequency;
        let p = &self.particle;
        positive("particle.radius", p.radius)?;
        positive("particle.density", p.density)?;
        if p.charge == 0 {
            return Err(invalid("particle.charge", "an uncharged particle is not trapped"));
        }
        let particle = Particle::new(p.radius, p.density, p.charge).map_err(|e| invalid("particle", e.to_string()))?;

        let t = &self.trap;
        if !(t.beta > 0.0 && t.beta <= 1.0) {
            return Err(invalid("trap.beta", format!("must lie in (0, 1], got {}", t.beta)));
        }
        let trap = TrapGeometry {
            beta: t.beta,
            drive_frequency: unit.to_angular(positive("trap.drive_frequency", t.drive_frequency)?),
            endcap_distance: positive("trap.endcap_distance", t.endcap_distance)?,
        };
        if let Some(v) = t.voltage {
            positive("trap.voltage", v)?;
        }

        let env = &self.environment;
        let n0 = nonnegative("environment.n0", env.n0)?;
        let gas = match env.gas {
            Some(g) if g.enabled => Some(GasParams {
                pressure: nonnegative("environment.gas.pressure", g.pressure)?,
                temperature: positive("environment.gas.temperature", g.temperature)?,
                molecular_mass: positive("environment.gas.m_g", g.m_g.kilograms())?,
            }),
            _ => None,
        };
        let blackbody = match env.blackbody {
            Some(b) if b.enabled => Some(BlackbodyParams {
                temperature: nonnegative("environment.blackbody.temperature", b.temperature)?,
                density: positive("environment.blackbody.density", b.density.unwrap_or(p.density))?,
                im_eps: nonnegative("environment.blackbody.im_eps", b.im_eps)?,
            }),
            _ => None,
        };
        let field_model = match env.efield {
            Some(e) => Some(efield_model(&e)?),
            None => None,
        };
        let efield_enabled = env.efield.is_some_and(|e| e.enabled);

        let (coupling, csl_params) = match self.channel.kind {
            ChannelKind::Force => (Coupling::Force, None),
            ChannelKind::ElectricField => {
                let model = field_model
                    .as_ref()
                    .ok_or_else(|| invalid("environment.efield", "required by the electric_field channel for k_E"))?;
                let k_e = environment::coupling_constant(model, particle.charge()).map_err(|e| invalid("environment.efield", e.to_string()))?;
                (Coupling::ElectricField { k_e }, None)
            }
            ChannelKind::Csl => {
                let c = self.csl.ok_or_else(|| invalid("csl", "required by the csl channel"))?;
                let params = CslParams {
                    lambda: nonnegative("csl.lambda", c.lambda)?,
                    r_c: positive("csl.r_c", c.r_c)?,
                    m0: positive("csl.m0", c.m0)?,
                    total_mass: particle.mass(),
                };
                let eta_z = csl::eta_z(&params, particle.radius).map_err(|e| invalid("csl", e.to_string()))?;
                (Coupling::Csl { eta_z }, Some(params))
            }
        };
        let csl_theta = match self.csl {
            Some(c) => Some(positive("csl.theta", c.theta)?),
            None => None,
        };
        let environment = Environment {
            gas,
            blackbody,
            efield: if efield_enabled { field_model } else { None },
            under_reconstruction: (self.channel.kind == ChannelKind::ElectricField).then_some(BackgroundChannel::EField),
        };
        let scenario = Scenario {
            units: self.units.system,
            particle,
            trap,
            trap_voltage: t.voltage,
            environment,
            coupling,
            csl: csl_params,
            n0,
        };
        scenario.validate().map_err(|e| invalid(".", e.to_string()))?;

        let spectrum = match &self.spectrum {
            Some(components) => Some(build_components(components, unit, base_dir)?),
            None => None,
        };
        let plan = match &self.sweep {
            Some(s) => Some(build_plan(s, unit)?),
            None => None,
        };
        self.noise.validate().map_err(|e| invalid("noise", e.to_string()))?;
        self.quadrature.validate().map_err(|e| invalid("quadrature", e.to_string()))?;
        Ok(Loaded {
            scenario,
            spectrum,
            plan,
            noise: self.noise,
            seed: self.seed,
            quad: self.quadrature,
            frequency_unit: unit,
            csl_theta,
        })
    }
}

fn efield_model(e: &EFieldConfig) -> Result<EFieldNoiseModel, ConfigError> {
    let distance = positive("environment.efield.electrode_distance", e.electrode_distance)?;
    let temperature = positive("environment.efield.electrode_temperature", e.electrode_temperature)?;
    let g_e = match e.g_e {
        GeSource::Value(v) => nonnegative("environment.efield.g_e", v)?,
        GeSource::Reference(ReferenceSystem::CalciumIon) => {
            let mut reference = CalibrationReference::calcium_ion(distance, temperature);
            reference.alpha = e.alpha;
            reference.distance_exponent = e.distance_exponent;
            reference.temperature_exponent = e.temperature_exponent;
            environment::calibrate_g_e(&reference).map_err(|err| invalid("environment.efield.g_e", err.to_string()))?
        }
    };
    let model = EFieldNoiseModel {
        g_e,
        shape: FieldShape::PowerLaw { alpha: e.alpha },
        distance_exponent: e.distance_exponent,
        temperature_exponent: e.temperature_exponent,
        electrode_distance: distance,
        electrode_temperature: temperature,
    };
    model.validate().map_err(|err| invalid("environment.efield", err.to_string()))?;
    Ok(model)
}

fn build_plan(s: &SweepConfig, unit: FrequencyUnit) -> Result<SweepPlan, ConfigError> {
    let lo = unit.to_angular(positive("sweep.lo", s.lo)?);
    let hi = unit.to_angular(positive("sweep.hi", s.hi)?);
    if lo >= hi {
        return Err(invalid("sweep.hi", "must exceed sweep.lo"));
    }
    if s.points < 2 {
        return Err(invalid("sweep.points", format!("need at least 2, got {}", s.points)));
    }
    if s.repetitions == 0 {
        return Err(invalid("sweep.repetitions", "must be >= 1"));
    }
    match s.time {
        TimePolicy::Fixed { t } => positive("sweep.time.t", t)?,
        TimePolicy::InverseFrequency { t_at_lo } => positive("sweep.time.t_at_lo", t_at_lo)?,
    };
    plan_sweep((lo, hi), s.points, s.time, s.repetitions).map_err(|e| invalid("sweep", e.to_string()))
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| e.to_string())?;
    let mut frequencies = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != 2 {
            return Err(format!("row {}: expected 2 columns, got {}", row + 1, rec.len()));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| format!("row {}: `{}` is not a number", row + 1, &rec[i]));
        frequencies.push(num(0)?);
        values.push(num(1)?);
    }
    Ok((frequencies, values))
}

fn build_components(components: &[ComponentConfig], unit: FrequencyUnit, base_dir: &Path) -> Result<NoiseSpectrum, ConfigError> {
    let scale = unit.scale();
    let mut out = Vec::with_capacity(components.len());
    for (i, c) in components.iter().enumerate() {
        let path = format!("spectrum[{i}]");
        out.push(match c {
            ComponentConfig::White { level } => SpectrumComponent::White { level: *level },
            ComponentConfig::GaussianPeak { strength, center, width } => SpectrumComponent::GaussianPeak {
                strength: *strength,
                center: center * scale,
                width: width * scale,
            },
            ComponentConfig::PowerLaw { prefactor, exponent, cutoff } => SpectrumComponent::PowerLaw {
                prefactor: prefactor * scale.powf(*exponent),
                exponent: *exponent,
                cutoff: cutoff * scale,
            },
            ComponentConfig::Tabulated {
                file,
                frequencies,
                values,
                interpolation,
                extrapolation,
            } => {
                let (f, v) = match (file, frequencies, values) {
                    (Some(file), None, None) => read_table(&base_dir.join(file)).map_err(|e| invalid(format!("{path}.file"), e))?,
                    (None, Some(f), Some(v)) => (f.clone(), v.clone()),
                    _ => return Err(invalid(&path, "give either `file` or both `frequencies` and `values`")),
                };
                SpectrumComponent::Tabulated(Table {
                    frequencies: f.iter().map(|x| x * scale).collect(),
                    values: v,
                    interpolation: *interpolation,
                    extrapolation: *extrapolation,
                })
            }
        });
    }
    build_spectrum(out).map_err(|e| match e {
        SpectrumError::Validation { index, reason, .. } => invalid(format!("spectrum[{index}]"), reason),
        other => invalid("spectrum", other.to_string()),
    })
}
