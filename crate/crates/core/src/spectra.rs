//! Two-sided noise power spectral densities.
//!
//! A [`NoiseSpectrum`] is a sum of analytic or tabulated components defined
//! for ν ≥ 0 and extended evenly to negative frequencies. All frequencies are
//! angular (rad/s); PSD values are in whatever units the coupling channel
//! expects (N²·s for a force channel in SI mode).

use crate::quad::{self, Integral, QuadError, Tolerance};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Distance, in widths, beyond which a Gaussian's mirror image is ignored.
const MIRROR_SEPARATION: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("component {index} ({kind}): {reason}")]
    Validation {
        index: usize,
        kind: &'static str,
        reason: String,
    },
    #[error("{operation} is not available for {kind} components")]
    Capability {
        kind: &'static str,
        operation: &'static str,
    },
    #[error("invalid band [{lo:e}, {hi:e}]")]
    InvalidBand { lo: f64, hi: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    #[default]
    LogLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    #[default]
    ConstantEdge,
    Zero,
}

/// Tabulated PSD samples on ν ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// Strictly increasing frequencies (rad/s).
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub extrapolation: Extrapolation,
}

impl Table {
    fn value_at(&self, nu: f64) -> f64 {
        let f = &self.frequencies;
        let v = &self.values;
        let last = f.len() - 1;
        if nu < f[0] || nu > f[last] {
            return match self.extrapolation {
                Extrapolation::Zero => 0.0,
                Extrapolation::ConstantEdge => {
                    if nu < f[0] {
                        v[0]
                    } else {
                        v[last]
                    }
                }
            };
        }
        if last == 0 {
            return v[0];
        }
        let upper = f.partition_point(|&x| x <= nu).min(last).max(1);
        let (x0, x1, y0, y1) = (f[upper - 1], f[upper], v[upper - 1], v[upper]);
        if nu == x0 {
            return y0;
        }
        if nu == x1 {
            return y1;
        }
        let loglog = self.interpolation == Interpolation::LogLog && x0 > 0.0 && y0 > 0.0 && y1 > 0.0;
        if loglog {
            let s = (nu / x0).ln() / (x1 / x0).ln();
            (y0.ln() + s * (y1 / y0).ln()).exp()
        } else {
            y0 + (y1 - y0) * (nu - x0) / (x1 - x0)
        }
    }

    fn sup_beyond(&self, threshold: f64) -> f64 {
        let f = &self.frequencies;
        let last = f.len() - 1;
        let mut sup = match self.extrapolation {
            Extrapolation::ConstantEdge => self.values[last],
            Extrapolation::Zero => 0.0,
        };
        if threshold < f[0] && self.extrapolation == Extrapolation::ConstantEdge {
            sup = sup.max(self.values[0]);
        }
        if threshold <= f[last] {
            sup = sup.max(self.value_at(threshold.max(f[0])));
            for (x, y) in f.iter().zip(&self.values) {
                if *x >= threshold {
                    sup = sup.max(*y);
                }
            }
        }
        sup
    }
}

/// One additive piece of a spectrum, defined for ν ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumComponent {
    /// Flat spectrum of the given level.
    White { level: f64 },
    /// `strength · exp(-(ν - center)² / 2 width²)`.
    GaussianPeak { strength: f64, center: f64, width: f64 },
    /// `prefactor · ν^-exponent` above `cutoff`, constant below it.
    PowerLaw { prefactor: f64, exponent: f64, cutoff: f64 },
    Tabulated(Table),
}

/// Time-domain autocorrelation value of a component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Autocorrelation {
    /// `weight · δ(y)`.
    Delta { weight: f64 },
    Value(f64),
}

impl SpectrumComponent {
    pub fn kind(&self) -> &'static str {
        match self {
            SpectrumComponent::White { .. } => "white",
            SpectrumComponent::GaussianPeak { .. } => "gaussian_peak",
            SpectrumComponent::PowerLaw { .. } => "power_law",
            SpectrumComponent::Tabulated(_) => "tabulated",
        }
    }

    fn validate(&self, index: usize) -> Result<(), SpectrumError> {
        let fail = |reason: String| SpectrumError::Validation {
            index,
            kind: self.kind(),
            reason,
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(fail(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(fail(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match self {
            SpectrumComponent::White { level } => nonneg("level", *level),
            SpectrumComponent::GaussianPeak { strength, center, width } => {
                nonneg("strength", *strength)?;
                nonneg("center", *center)?;
                positive("width", *width)
            }
            SpectrumComponent::PowerLaw { prefactor, exponent, cutoff } => {
                nonneg("prefactor", *prefactor)?;
                nonneg("exponent", *exponent)?;
                positive("cutoff", *cutoff)
            }
            SpectrumComponent::Tabulated(table) => {
                if table.frequencies.is_empty() {
                    return Err(fail("table is empty".into()));
                }
                if table.frequencies.len() != table.values.len() {
                    return Err(fail(format!(
                        "{} frequencies but {} values",
                        table.frequencies.len(),
                        table.values.len()
                    )));
                }
                for (&nu, &v) in table.frequencies.iter().zip(&table.values) {
                    nonneg("table frequency", nu)?;
                    nonneg("table value", v)?;
                }
                if let Some(k) = table.frequencies.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(fail(format!("table frequencies not strictly increasing at row {}", k + 1)));
                }
                Ok(())
            }
        }
    }

    /// Value at a nonnegative frequency.
    fn value_at(&self, nu: f64) -> f64 {
        match self {
            SpectrumComponent::White { level } => *level,
            SpectrumComponent::GaussianPeak { strength, center, width } => {
                let z = (nu - center) / width;
                strength * (-0.5 * z * z).exp()
            }
            SpectrumComponent::PowerLaw { prefactor, exponent, cutoff } => {
                if *exponent == 0.0 {
                    *prefactor
                } else {
                    prefactor * nu.max(*cutoff).powf(-exponent)
                }
            }
            SpectrumComponent::Tabulated(table) => table.value_at(nu),
        }
    }

    fn sup_beyond(&self, threshold: f64) -> f64 {
        match self {
            SpectrumComponent::White { level } => *level,
            SpectrumComponent::GaussianPeak { strength, center, .. } => {
                if threshold <= *center {
                    *strength
                } else {
                    self.value_at(threshold)
                }
            }
            SpectrumComponent::PowerLaw { .. } => self.value_at(threshold),
            SpectrumComponent::Tabulated(table) => table.sup_beyond(threshold),
        }
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            SpectrumComponent::White { .. } => {}
            SpectrumComponent::GaussianPeak { center, width, .. } => {
                for k in [-8.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0] {
                    let nu = center + k * width;
                    if nu > 0.0 {
                        out.push(nu);
                    }
                }
            }
            SpectrumComponent::PowerLaw { cutoff, .. } => out.push(*cutoff),
            SpectrumComponent::Tabulated(table) => out.extend(table.frequencies.iter().copied().filter(|&x| x > 0.0)),
        }
    }

    /// Inverse Fourier transform `C(y) = (1/2π)∫ C̃(ν) e^{-iνy} dν` of the
    /// component's even extension.
    pub fn autocorrelation(&self, y: f64) -> Result<Autocorrelation, SpectrumError> {
        match self {
            SpectrumComponent::White { level } => Ok(Autocorrelation::Delta { weight: *level }),
            SpectrumComponent::GaussianPeak { strength, center, width } => {
                let envelope = strength * width / SQRT_2PI * (-0.5 * (width * y).powi(2)).exp();
                if *center == 0.0 {
                    Ok(Autocorrelation::Value(envelope))
                } else if *center >= MIRROR_SEPARATION * width {
                    Ok(Autocorrelation::Value(2.0 * envelope * (center * y).cos()))
                } else {
                    self.overlapping_gaussian_autocorrelation(y).map(Autocorrelation::Value)
                }
            }
            _ => Err(SpectrumError::Capability {
                kind: self.kind(),
                operation: "autocorrelation",
            }),
        }
    }

    // (1/π)∫₀^∞ C̃(ν) cos(νy) dν for a Gaussian whose two mirrored lobes overlap.
    fn overlapping_gaussian_autocorrelation(&self, y: f64) -> Result<f64, SpectrumError> {
        let SpectrumComponent::GaussianPeak { center, width, .. } = self else {
            unreachable!()
        };
        let hi = center + 40.0 * width;
        let periods = (hi * y.abs() / PI).ceil() as usize;
        let integral = quad::integrate(
            |nu| self.value_at(nu) * (nu * y).cos(),
            0.0,
            hi,
            (periods + 8).min(200_000),
            Tolerance {
                relative: 1e-10,
                absolute: 1e-12 * self.value_at(*center) * width,
            },
            1_000_000,
        )?;
        Ok(integral.value / PI)
    }
}

/// Even two-sided PSD built from validated components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SpectrumComponent>", into = "Vec<SpectrumComponent>")]
pub struct NoiseSpectrum {
    components: Vec<SpectrumComponent>,
}

impl TryFrom<Vec<SpectrumComponent>> for NoiseSpectrum {
    type Error = SpectrumError;

    fn try_from(components: Vec<SpectrumComponent>) -> Result<Self, Self::Error> {
        build_spectrum(components)
    }
}

impl From<NoiseSpectrum> for Vec<SpectrumComponent> {
    fn from(s: NoiseSpectrum) -> Self {
        s.components
    }
}

/// Validates the components and assembles the spectrum.
pub fn build_spectrum(components: Vec<SpectrumComponent>) -> Result<NoiseSpectrum, SpectrumError> {
    for (i, c) in components.iter().enumerate() {
        c.validate(i)?;
    }
    Ok(NoiseSpectrum { components })
}

impl NoiseSpectrum {
    pub fn zero() -> Self {
        NoiseSpectrum { components: Vec::new() }
    }

    pub fn white(level: f64) -> Result<Self, SpectrumError> {
        build_spectrum(vec![SpectrumComponent::White { level }])
    }

    pub fn gaussian(strength: f64, center: f64, width: f64) -> Result<Self, SpectrumError> {
        build_spectrum(vec![SpectrumComponent::GaussianPeak { strength, center, width }])
    }

    pub fn components(&self) -> &[SpectrumComponent] {
        &self.components
    }

    /// C̃(|ν|).
    pub fn evaluate(&self, nu: f64) -> f64 {
        let a = nu.abs();
        self.components.iter().map(|c| c.value_at(a)).sum()
    }

    /// True when the spectrum vanishes identically.
    pub fn is_zero(&self) -> bool {
        self.sup_beyond(0.0) == 0.0
    }

    /// Upper bound on C̃(ν) over |ν| ≥ `threshold`.
    pub fn sup_beyond(&self, threshold: f64) -> f64 {
        let t = threshold.max(0.0);
        self.components.iter().map(|c| c.sup_beyond(t)).sum()
    }

    /// Sorted, deduplicated frequencies (ν > 0) where the spectrum has
    /// structure worth splitting a quadrature panel at.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.components {
            c.breakpoints(&mut out);
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// ∫ C̃(ν) dν over `[lo, hi]` with the default relative tolerance 1e-8.
    pub fn total_weight(&self, lo: f64, hi: f64) -> Result<Integral, SpectrumError> {
        self.total_weight_with(lo, hi, Tolerance::relative(1e-8), 100_000)
    }

    pub fn total_weight_with(&self, lo: f64, hi: f64, tol: Tolerance, max_segments: usize) -> Result<Integral, SpectrumError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SpectrumError::InvalidBand { lo, hi });
        }
        let mut breaks = vec![lo, hi];
        if lo < 0.0 && hi > 0.0 {
            breaks.push(0.0);
        }
        for b in self.breakpoints() {
            for x in [b, -b] {
                if x > lo && x < hi {
                    breaks.push(x);
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        Ok(quad::integrate_breaks(|nu| self.evaluate(nu), &breaks, tol, max_segments)?)
    }
}
