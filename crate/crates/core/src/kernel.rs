//! Forward model: the sinc² filter kernel, heating-rate integrals, the
//! moment coefficients Γ(t) and Θ(t), expected phonon numbers and the
//! damped moment equation.
//!
//! Spectral integrals are taken in the detuning x = ν − ωm over the whole
//! real line, so both the peak at ν = ωm and its mirror at ν = −ωm are
//! included. Within a few kernel periods of x = 0 the full integrand goes
//! through Gauss–Kronrod panels one period wide; further out the kernel is
//! written as a smooth amplitude times 1 − cos(tx) or sin(tx) and handled by
//! Legendre–Filon panels on geometrically growing intervals. The truncation
//! point is pushed out until an analytic tail bound is negligible.

use crate::quad::{self, gauss_kronrod21, legendre_filon, OscillatoryWeight, Panel, QuadError, Tolerance, Workspace};
use crate::spectra::{Autocorrelation, NoiseSpectrum, SpectrumComponent, SpectrumError};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("invalid prefactor {0:e}: must be finite and > 0")]
    InvalidPrefactor(f64),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical convergence failure: {0}")]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error("time stepper failed at t = {t:e} (last good n = {phonons:e}): {reason}")]
    Stepper { t: f64, phonons: f64, reason: String },
}

/// Mechanical frequency and measurement time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterKernelParams {
    /// ωm (rad/s).
    pub omega_m: f64,
    /// Measurement time t (s).
    pub t: f64,
}

impl FilterKernelParams {
    pub fn new(omega_m: f64, t: f64) -> Result<Self, KernelError> {
        let p = FilterKernelParams { omega_m, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.omega_m.is_finite() && self.omega_m > 0.0) {
            return Err(KernelError::InvalidParams(format!("omega_m must be > 0, got {}", self.omega_m)));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(KernelError::InvalidParams(format!("t must be > 0, got {}", self.t)));
        }
        Ok(())
    }

    /// Kernel period 2π/t in detuning.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    /// Minimum number of nodes per kernel period 2π/t near the peak.
    pub nodes_per_period: usize,
    /// Half-width of the Kronrod core window, in kernel periods.
    pub core_periods: f64,
    /// The truncated tail may contribute at most this fraction of the tolerance.
    pub tail_fraction: f64,
    /// Maximum number of panels before giving up.
    pub max_segments: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-6,
            nodes_per_period: 8,
            core_periods: 4.0,
            tail_fraction: 0.1,
            max_segments: 200_000,
        }
    }
}

impl QuadratureConfig {
    pub fn with_tolerance(rel_tol: f64) -> Self {
        QuadratureConfig {
            rel_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(KernelError::Validation(format!("tolerance must be > 0, got {}", self.rel_tol)));
        }
        if self.nodes_per_period < 4 {
            return Err(KernelError::Validation(format!("nodes_per_period must be >= 4, got {}", self.nodes_per_period)));
        }
        if !(self.core_periods.is_finite() && self.core_periods >= 1.0) {
            return Err(KernelError::Validation(format!("core_periods must be >= 1, got {}", self.core_periods)));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(KernelError::Validation(format!("tail_fraction must lie in (0, 1], got {}", self.tail_fraction)));
        }
        if self.max_segments < 16 {
            return Err(KernelError::Validation("max_segments must be >= 16".into()));
        }
        Ok(())
    }
}

/// A value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
}

/// Γ(t) and Θ(t) of the no-dissipation moment equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCoefficients {
    pub gamma: f64,
    pub theta: f64,
}

/// sin²[(ωm − ν)t/2]/(ωm − ν)².
pub fn filter_kernel(params: FilterKernelParams, nu: f64) -> f64 {
    sinc2_kernel(params.omega_m - nu, params.t)
}

/// sin[(ωm − ν)t]/(2(ωm − ν)), the time derivative of [`filter_kernel`].
pub fn rate_kernel(params: FilterKernelParams, nu: f64) -> f64 {
    sine_kernel(params.omega_m - nu, params.t)
}

fn sinc2_kernel(x: f64, t: f64) -> f64 {
    let u = 0.5 * x * t;
    if (x * t).abs() < 1e-6 {
        let u2 = u * u;
        0.25 * t * t * (1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 45.0)
    } else {
        let s = u.sin();
        s * s / (x * x)
    }
}

fn sine_kernel(x: f64, t: f64) -> f64 {
    let u = x * t;
    if u.abs() < 1e-6 {
        0.5 * t * (1.0 - u * u / 6.0)
    } else {
        u.sin() / (2.0 * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weighting {
    Phonons,
    Rate,
}

const CORE: u8 = 0;
const FAR: u8 = 1;

/// Adds `[lo, hi]` split at every sorted breakpoint strictly inside it.
fn push_split<F>(ws: &mut Workspace, lo: f64, hi: f64, kind: u8, breaks: &[f64], min_width: f64, rule: &mut F) -> Result<(), QuadError>
where
    F: FnMut(f64, f64, u8) -> Result<Panel, QuadError>,
{
    let mut left = lo;
    let start = breaks.partition_point(|&b| b <= lo);
    for &b in &breaks[start..] {
        if b >= hi {
            break;
        }
        if b - left > min_width && hi - b > min_width {
            ws.push(left, b, kind, rule)?;
            left = b;
        }
    }
    ws.push(left, hi, kind, rule)
}

fn filtered_integral(spectrum: &NoiseSpectrum, params: FilterKernelParams, quad: &QuadratureConfig, weighting: Weighting) -> Result<Estimate, KernelError> {
    params.validate()?;
    quad.validate()?;
    if spectrum.is_zero() {
        return Ok(Estimate {
            value: 0.0,
            abs_error: 0.0,
        });
    }
    let wm = params.omega_m;
    let t = params.t;
    let period = params.period();
    let core = quad.core_periods * period;
    let step = period * (21.0 / quad.nodes_per_period as f64).min(1.0);
    let min_width = 1e-9 * period;

    let mut breaks = vec![-wm];
    for b in spectrum.breakpoints() {
        breaks.push(b - wm);
        breaks.push(-b - wm);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let reach = breaks.iter().fold(0.0f64, |m, b| m.max(b.abs()));

    let amplitude = |x: f64| -> f64 {
        let c = spectrum.evaluate(wm + x);
        match weighting {
            Weighting::Phonons => c / (2.0 * x * x),
            Weighting::Rate => c / (2.0 * x),
        }
    };
    let weight = match weighting {
        Weighting::Phonons => OscillatoryWeight {
            omega: t,
            constant: 1.0,
            cos_coeff: -1.0,
            sin_coeff: 0.0,
        },
        Weighting::Rate => OscillatoryWeight {
            omega: t,
            constant: 0.0,
            cos_coeff: 0.0,
            sin_coeff: 1.0,
        },
    };
    let full = |x: f64| -> f64 {
        let c = spectrum.evaluate(wm + x);
        match weighting {
            Weighting::Phonons => c * sinc2_kernel(x, t),
            Weighting::Rate => c * sine_kernel(x, t),
        }
    };
    let mut rule = |a: f64, b: f64, kind: u8| -> Result<Panel, QuadError> {
        if kind == CORE {
            gauss_kronrod21(&full, a, b)
        } else {
            legendre_filon(&amplitude, a, b, &weight)
        }
    };

    let mut ws = Workspace::new();
    let n_core = (2.0 * core / step).round().max(1.0) as usize;
    for i in 0..n_core {
        let a = -core + 2.0 * core * i as f64 / n_core as f64;
        let b = if i + 1 == n_core { core } else { -core + 2.0 * core * (i + 1) as f64 / n_core as f64 };
        push_split(&mut ws, a, b, CORE, &breaks, min_width, &mut rule)?;
    }
    let mut edge = core;
    let initial_reach = (2.0 * core).max(2.0 * reach);
    while edge < initial_reach {
        let next = 2.0 * edge;
        push_split(&mut ws, edge, next, FAR, &breaks, min_width, &mut rule)?;
        push_split(&mut ws, -next, -edge, FAR, &breaks, min_width, &mut rule)?;
        edge = next;
    }

    // The rate integral changes sign, so it also gets an absolute floor: the
    // white-noise rate at the spectrum's peak level.
    let tol = match weighting {
        Weighting::Phonons => Tolerance::relative(quad.rel_tol),
        Weighting::Rate => Tolerance {
            relative: quad.rel_tol,
            absolute: quad.rel_tol * FRAC_PI_2 * spectrum.sup_beyond(0.0),
        },
    };
    let tail_bound = |edge: f64| -> f64 {
        let sup = spectrum.sup_beyond(edge - wm);
        match weighting {
            Weighting::Phonons => 2.0 * sup / edge,
            Weighting::Rate => 2.0 * sup / (edge * t),
        }
    };
    ws.refine(tol, quad.max_segments, &mut rule)?;
    let mut doublings = 0;
    loop {
        let current = ws.estimate();
        let bound = tail_bound(edge);
        if bound <= quad.tail_fraction * (quad.rel_tol * current.value.abs()).max(tol.absolute) || bound == 0.0 {
            break;
        }
        if doublings > 400 || ws.len() >= quad.max_segments {
            return Err(QuadError::NonConvergent {
                estimate: current.value,
                abs_error: current.abs_error + bound,
                segments: ws.len(),
            }
            .into());
        }
        let next = 2.0 * edge;
        ws.push(edge, next, FAR, &mut rule)?;
        ws.push(-next, -edge, FAR, &mut rule)?;
        edge = next;
        doublings += 1;
        if doublings % 4 == 0 {
            ws.refine(tol, quad.max_segments, &mut rule)?;
        }
    }
    ws.refine(tol, quad.max_segments, &mut rule)?;
    let result = ws.estimate();
    Ok(Estimate {
        value: result.value,
        abs_error: result.abs_error + tail_bound(edge),
    })
}

/// ∫ C̃(ν)·sin²[(ωm − ν)t/2]/(ωm − ν)² dν over the real line.
pub fn kernel_integral(spectrum: &NoiseSpectrum, params: FilterKernelParams, quad: &QuadratureConfig) -> Result<Estimate, KernelError> {
    let mut e = filtered_integral(spectrum, params, quad, Weighting::Phonons)?;
    e.value = e.value.max(0.0);
    Ok(e)
}

/// ∫ C̃(ν)·sin[(ωm − ν)t]/(2(ωm − ν)) dν over the real line.
pub fn rate_integral(spectrum: &NoiseSpectrum, params: FilterKernelParams, quad: &QuadratureConfig) -> Result<Estimate, KernelError> {
    filtered_integral(spectrum, params, quad, Weighting::Rate)
}

/// ∫ kernel dν; analytically πt/2.
pub fn kernel_normalization(params: FilterKernelParams, quad: &QuadratureConfig) -> Result<Estimate, KernelError> {
    kernel_integral(&NoiseSpectrum::white(1.0)?, params, quad)
}

fn check_prefactor(prefactor: f64) -> Result<(), KernelError> {
    if prefactor.is_finite() && prefactor > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidPrefactor(prefactor))
    }
}

/// ⟨n⟩_t = n₀ + D'_p·t + A·∫C̃(ν)·kernel dν.
pub fn expected_phonons(
    spectrum: &NoiseSpectrum,
    prefactor: f64,
    background_rate: f64,
    n0: f64,
    params: FilterKernelParams,
    quad: &QuadratureConfig,
) -> Result<Estimate, KernelError> {
    check_prefactor(prefactor)?;
    if !(n0.is_finite() && n0 >= 0.0) {
        return Err(KernelError::Validation(format!("n0 must be >= 0, got {n0}")));
    }
    if !(background_rate.is_finite() && background_rate >= 0.0) {
        return Err(KernelError::Validation(format!("background rate must be >= 0, got {background_rate}")));
    }
    let integral = kernel_integral(spectrum, params, quad)?;
    Ok(Estimate {
        value: n0 + background_rate * params.t + prefactor * integral.value,
        abs_error: prefactor * integral.abs_error,
    })
}

/// d⟨n⟩/dt from the spectrum alone (no background term).
pub fn heating_rate(spectrum: &NoiseSpectrum, prefactor: f64, params: FilterKernelParams, quad: &QuadratureConfig) -> Result<Estimate, KernelError> {
    check_prefactor(prefactor)?;
    let integral = rate_integral(spectrum, params, quad)?;
    Ok(Estimate {
        value: prefactor * integral.value,
        abs_error: prefactor * integral.abs_error,
    })
}

/// Γ(t) = −∫₀ᵗ C(y)cos(ωm y)dy and Θ(t) = (1/mωm)∫₀ᵗ C(y)sin(ωm y)dy.
///
/// A white component contributes a delta at the endpoint y = 0, which
/// counts with weight one half.
pub fn moment_coefficients(component: &SpectrumComponent, params: FilterKernelParams, mass: f64) -> Result<MomentCoefficients, KernelError> {
    params.validate()?;
    if !(mass.is_finite() && mass > 0.0) {
        return Err(KernelError::Validation(format!("mass must be > 0, got {mass}")));
    }
    let wm = params.omega_m;
    match component.autocorrelation(0.0)? {
        Autocorrelation::Delta { weight } => {
            return Ok(MomentCoefficients {
                gamma: -0.5 * weight,
                theta: 0.0,
            })
        }
        Autocorrelation::Value(_) => {}
    }
    let SpectrumComponent::GaussianPeak { strength, center, width } = component else {
        unreachable!("only gaussian components have numeric autocorrelations")
    };
    let upper = params.t.min(40.0 / width);
    let periods = (upper * (wm + center) / PI).ceil() as usize;
    let pieces = (periods + 4).min(500_000);
    let tol = Tolerance {
        relative: 1e-10,
        absolute: 1e-12 * strength * width,
    };
    let corr = |y: f64| match component.autocorrelation(y) {
        Ok(Autocorrelation::Value(v)) => v,
        _ => f64::NAN,
    };
    let cos_part = quad::integrate(|y| corr(y) * (wm * y).cos(), 0.0, upper, pieces, tol, 4_000_000)?;
    let sin_part = quad::integrate(|y| corr(y) * (wm * y).sin(), 0.0, upper, pieces, tol, 4_000_000)?;
    Ok(MomentCoefficients {
        gamma: -cos_part.value,
        theta: sin_part.value / (mass * wm),
    })
}

/// Adaptive step control for [`damped_evolution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Tolerance for the rate integrals evaluated at every stage.
    pub quad: QuadratureConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 100_000,
            quad: QuadratureConfig::with_tolerance(1e-10),
        }
    }
}

/// Accepted steps of a ⟨n⟩ trajectory, ending at the requested time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phonons: Vec<f64>,
}

impl Trajectory {
    pub fn final_phonons(&self) -> f64 {
        *self.phonons.last().expect("trajectory holds at least the initial state")
    }
}

/// Couplings of the damped moment equation dn/dt = A(t) − γ(t)·n.
///
/// `drive` is C̃₁ and `total` is C̃₂; the damping spectrum C̃₃ = C̃₂ − C̃₁ is
/// only ever used through the difference of the two rate integrals.
#[derive(Debug, Clone, Copy)]
pub struct DampedModel<'a> {
    pub drive: &'a NoiseSpectrum,
    pub total: &'a NoiseSpectrum,
    pub prefactor: f64,
    pub background_rate: f64,
}

impl DampedModel<'_> {
    fn coefficients(&self, omega_m: f64, t: f64, quad: &QuadratureConfig) -> Result<(f64, f64), KernelError> {
        let params = FilterKernelParams::new(omega_m, t)?;
        let drive = rate_integral(self.drive, params, quad)?.value;
        let damping = if self.drive == self.total {
            0.0
        } else {
            rate_integral(self.total, params, quad)?.value - drive
        };
        Ok((self.prefactor * drive + self.background_rate, self.prefactor * damping))
    }
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the damped moment equation from 0 to `params.t` with an
/// adaptive Dormand–Prince 5(4) stepper.
pub fn damped_evolution(model: &DampedModel<'_>, params: FilterKernelParams, n0: f64, step: &StepConfig) -> Result<Trajectory, KernelError> {
    params.validate()?;
    check_prefactor(model.prefactor)?;
    if !(n0.is_finite() && n0 >= 0.0) {
        return Err(KernelError::Validation(format!("n0 must be >= 0, got {n0}")));
    }
    let t_end = params.t;
    let floor = 1e-9 * t_end;
    let rhs = |t: f64, n: f64| -> Result<f64, KernelError> {
        let (drive, damping) = model.coefficients(params.omega_m, t.max(floor), &step.quad)?;
        Ok(drive - damping * n)
    };

    let mut traj = Trajectory {
        times: vec![0.0],
        phonons: vec![n0],
    };
    let (mut t, mut n) = (0.0, n0);
    let mut h = t_end * 1e-3;
    let mut k = [0.0; 7];
    k[0] = rhs(t, n)?;
    let mut steps = 0;
    while t < t_end {
        if steps >= step.max_steps {
            return Err(KernelError::Stepper {
                t,
                phonons: n,
                reason: format!("exceeded {} steps", step.max_steps),
            });
        }
        steps += 1;
        h = h.min(t_end - t);
        for i in 1..7 {
            let incr: f64 = (0..i).map(|j| DP_A[i][j] * k[j]).sum();
            k[i] = rhs(t + DP_C[i] * h, n + h * incr)?;
        }
        let n5 = n + h * (0..7).map(|i| DP_B5[i] * k[i]).sum::<f64>();
        let n4 = n + h * (0..7).map(|i| DP_B4[i] * k[i]).sum::<f64>();
        let scale = step.abs_tol + step.rel_tol * n.abs().max(n5.abs());
        let err = ((n5 - n4) / scale).abs();
        if !err.is_finite() {
            return Err(KernelError::Stepper {
                t,
                phonons: n,
                reason: "non-finite error estimate".into(),
            });
        }
        if err <= 1.0 {
            t = if t_end - (t + h) < 1e-12 * t_end { t_end } else { t + h };
            n = n5;
            k[0] = k[6];
            traj.times.push(t);
            traj.phonons.push(n);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * t_end {
            return Err(KernelError::Stepper {
                t,
                phonons: n,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::build_spectrum;
    use proptest::prelude::*;

    fn params(omega_m: f64, t: f64) -> FilterKernelParams {
        FilterKernelParams::new(omega_m, t).unwrap()
    }

    #[test]
    fn kernel_special_values() {
        let p = params(1e4, 1e-3);
        assert_eq!(filter_kernel(p, 1e4), 0.25e-6);
        for k in [1.0, 2.0, -3.0] {
            let v = filter_kernel(p, 1e4 + 2.0 * PI * k / p.t);
            assert!(v < 1e-20, "{v}");
        }
        let near = filter_kernel(p, 1e4 + 1e-5);
        assert!((near - 0.25e-6).abs() < 1e-18);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(FilterKernelParams::new(0.0, 1.0).is_err());
        assert!(FilterKernelParams::new(1.0, -1.0).is_err());
        let s = NoiseSpectrum::white(1.0).unwrap();
        let q = QuadratureConfig::default();
        assert!(matches!(expected_phonons(&s, 0.0, 0.0, 0.0, params(1.0, 1.0), &q), Err(KernelError::InvalidPrefactor(_))));
        let bad = QuadratureConfig {
            nodes_per_period: 2,
            ..Default::default()
        };
        assert!(expected_phonons(&s, 1.0, 0.0, 0.0, params(1.0, 1.0), &bad).is_err());
    }

    #[test]
    fn normalization_is_pi_t_over_two() {
        let q = QuadratureConfig::with_tolerance(1e-9);
        for &(wm, t) in &[(2.0 * PI * 100.0, 1e-2), (1e6, 1e-4), (3.0, 0.1)] {
            let e = kernel_normalization(params(wm, t), &q).unwrap();
            let exact = PI * t / 2.0;
            assert!(((e.value - exact) / exact).abs() < 1e-8, "{wm} {t}: {}", e.value / exact - 1.0);
        }
    }

    #[test]
    fn zero_spectrum_gives_initial_population() {
        let z = NoiseSpectrum::zero();
        let q = QuadratureConfig::default();
        for t in [1e-4, 1.0] {
            let n = expected_phonons(&z, 1.0, 0.0, 10.0, params(1e3, t), &q).unwrap();
            assert_eq!(n.value, 10.0);
            assert_eq!(heating_rate(&z, 1.0, params(1e3, t), &q).unwrap().value, 0.0);
        }
    }

    #[test]
    fn white_rate_is_constant() {
        let s = NoiseSpectrum::white(2.0).unwrap();
        let q = QuadratureConfig::with_tolerance(1e-8);
        let prefactor = 1.0 / (2.0 * PI * 3.0 * 1e4);
        for t in [1e-4, 1e-3, 1e-2] {
            let r = heating_rate(&s, prefactor, params(1e4, t), &q).unwrap();
            let exact = 2.0 / (4.0 * 3.0 * 1e4);
            assert!(((r.value - exact) / exact).abs() < 1e-7);
        }
    }

    #[test]
    fn rate_integrates_to_phonons() {
        let s = NoiseSpectrum::gaussian(1.0, 1.2e4, 300.0).unwrap();
        let q = QuadratureConfig::with_tolerance(1e-10);
        let (wm, t_end) = (1.0e4, 2e-3);
        let rate = |t: f64| rate_integral(&s, params(wm, t.max(1e-12)), &q).unwrap().value;
        let integrated = quad::integrate(rate, 0.0, t_end, 16, Tolerance::relative(1e-9), 10_000).unwrap();
        let direct = kernel_integral(&s, params(wm, t_end), &q).unwrap();
        assert!(((integrated.value - direct.value) / direct.value).abs() < 1e-6);
    }

    // Uniform Riemann sum over a wide window with 10⁶ nodes.
    fn riemann(s: &NoiseSpectrum, p: FilterKernelParams, half_width: f64) -> f64 {
        let n = 1_000_000;
        let h = 2.0 * half_width / n as f64;
        (0..n)
            .map(|i| {
                let nu = p.omega_m - half_width + (i as f64 + 0.5) * h;
                s.evaluate(nu) * filter_kernel(p, nu)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn agrees_with_brute_force_summation() {
        let q = QuadratureConfig::with_tolerance(1e-8);
        let p = params(5e3, 1e-2);
        let coarse = [
            NoiseSpectrum::gaussian(1.0, 5.1e3, 200.0).unwrap(),
            build_spectrum(vec![crate::spectra::SpectrumComponent::Tabulated(crate::spectra::Table {
                frequencies: vec![4e3, 5e3, 6e3],
                values: vec![1.0, 2.0, 0.5],
                interpolation: crate::spectra::Interpolation::Linear,
                extrapolation: crate::spectra::Extrapolation::Zero,
            })])
            .unwrap(),
        ];
        for s in &coarse {
            let fast = kernel_integral(s, p, &q).unwrap().value;
            let slow = riemann(s, p, 1.2e4);
            assert!(((fast - slow) / fast).abs() < 1e-4, "{fast} vs {slow}");
        }
    }

    #[test]
    fn tighter_tolerance_moves_less_than_error_estimate() {
        let s = build_spectrum(vec![
            crate::spectra::SpectrumComponent::GaussianPeak {
                strength: 2.0,
                center: 3e4,
                width: 50.0,
            },
            crate::spectra::SpectrumComponent::PowerLaw {
                prefactor: 1e3,
                exponent: 1.0,
                cutoff: 10.0,
            },
        ])
        .unwrap();
        let p = params(3.01e4, 1e-2);
        let loose = kernel_integral(&s, p, &QuadratureConfig::with_tolerance(1e-6)).unwrap();
        let tight = kernel_integral(&s, p, &QuadratureConfig::with_tolerance(5e-7)).unwrap();
        assert!((loose.value - tight.value).abs() <= loose.abs_error);
    }

    #[test]
    fn white_moment_coefficients() {
        let c = SpectrumComponent::White { level: 3.0 };
        let m = moment_coefficients(&c, params(1e3, 0.5), 1e-18).unwrap();
        assert_eq!(m.gamma, -1.5);
        assert_eq!(m.theta, 0.0);
        let p = SpectrumComponent::PowerLaw {
            prefactor: 1.0,
            exponent: 1.0,
            cutoff: 1.0,
        };
        assert!(matches!(moment_coefficients(&p, params(1.0, 1.0), 1.0), Err(KernelError::Spectrum(SpectrumError::Capability { .. }))));
    }

    #[test]
    fn gaussian_gamma_matches_heating_rate() {
        let mass = 2.0;
        let wm = 1e3;
        let c = SpectrumComponent::GaussianPeak {
            strength: 1.0,
            center: 1.05e3,
            width: 40.0,
        };
        let s = build_spectrum(vec![c.clone()]).unwrap();
        let q = QuadratureConfig::with_tolerance(1e-10);
        for t in [1e-3, 2e-2, 0.3] {
            let p = params(wm, t);
            let m = moment_coefficients(&c, p, mass).unwrap();
            let prefactor = 1.0 / (2.0 * PI * mass * wm);
            let rate = heating_rate(&s, prefactor, p, &q).unwrap().value;
            let from_gamma = -m.gamma / (2.0 * mass * wm);
            assert!(((rate - from_gamma) / rate).abs() < 1e-7, "t={t}: {rate} vs {from_gamma}");
        }
    }

    // Θ(t) from the double integral over the spectrum: (1/mωm)·(1/π)∫₀^∞ C̃(ν)∫₀ᵗ cos(νy) sin(ωm y) dy dν.
    #[test]
    fn gaussian_theta_matches_spectral_double_integral() {
        let (mass, wm) = (1.5, 800.0);
        let (strength, center, width) = (2.0, 900.0, 60.0);
        let c = SpectrumComponent::GaussianPeak { strength, center, width };
        let t = 0.01;
        let m = moment_coefficients(&c, params(wm, t), mass).unwrap();
        let inner = |nu: f64| {
            // ∫₀ᵗ cos(νy) sin(ωm y) dy in closed form
            let f = |a: f64| if a.abs() < 1e-12 { 0.0 } else { (1.0 - (a * t).cos()) / a };
            0.5 * (f(wm + nu) + f(wm - nu))
        };
        let spectral = quad::integrate(
            |nu| strength * (-0.5 * ((nu - center) / width).powi(2)).exp() * inner(nu),
            0.0,
            center + 40.0 * width,
            400,
            Tolerance::relative(1e-12),
            100_000,
        )
        .unwrap();
        let expected = spectral.value / PI / (mass * wm);
        assert!(((m.theta - expected) / expected).abs() < 1e-7, "{} vs {expected}", m.theta);
    }

    #[test]
    fn damped_without_damping_matches_forward_model() {
        let s = NoiseSpectrum::gaussian(3.0, 1.1e4, 500.0).unwrap();
        let model = DampedModel {
            drive: &s,
            total: &s,
            prefactor: 0.7,
            background_rate: 5.0,
        };
        let p = params(1.08e4, 5e-3);
        let traj = damped_evolution(&model, p, 10.0, &StepConfig::default()).unwrap();
        let direct = expected_phonons(&s, 0.7, 5.0, 10.0, p, &QuadratureConfig::with_tolerance(1e-10)).unwrap();
        assert_eq!(*traj.times.last().unwrap(), p.t);
        assert!(((traj.final_phonons() - direct.value) / direct.value).abs() < 1e-6);
    }

    #[test]
    fn zero_spectra_keep_initial_population() {
        let z = NoiseSpectrum::zero();
        let model = DampedModel {
            drive: &z,
            total: &z,
            prefactor: 1.0,
            background_rate: 0.0,
        };
        let traj = damped_evolution(&model, params(1e3, 1.0), 4.0, &StepConfig::default()).unwrap();
        assert!(traj.phonons.iter().all(|&n| n == 4.0));
    }

    #[test]
    fn constant_damping_saturates() {
        let d1 = 2.0;
        let d2 = 6.0;
        let prefactor = 0.1;
        let drive = NoiseSpectrum::white(d1).unwrap();
        let total = NoiseSpectrum::white(d2).unwrap();
        let model = DampedModel {
            drive: &drive,
            total: &total,
            prefactor,
            background_rate: 0.0,
        };
        let a = prefactor * d1 * PI / 2.0;
        let g = prefactor * (d2 - d1) * PI / 2.0;
        let t_end = 3.0 / g;
        let traj = damped_evolution(&model, params(50.0, t_end), 1.0, &StepConfig::default()).unwrap();
        for (&t, &n) in traj.times.iter().zip(&traj.phonons) {
            let exact = a / g + (1.0 - a / g) * (-g * t).exp();
            assert!(((n - exact) / exact).abs() < 1e-6, "t={t}: {n} vs {exact}");
            assert!(n <= 1.0 + a * t + 1e-9);
        }
    }

    // A narrow feature far from ωm makes ⟨n⟩_t oscillate like
    // (1 − cos δt)/δ²; monotonicity in t is not a general property.
    #[test]
    fn detuned_narrow_feature_oscillates_in_t() {
        let s = NoiseSpectrum::gaussian(1.0, 5.875e4, 10.0).unwrap();
        let q = QuadratureConfig::default();
        let at = |t: f64| expected_phonons(&s, 1.0, 0.0, 0.0, params(100.0, t), &q).unwrap().value;
        let delta = 5.875e4 - 100.0;
        let t_peak = PI / delta;
        assert!(at(2.0 * t_peak) < 1e-3 * at(t_peak));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_symmetric(wm in 1.0..1e6f64, t in 1e-5..1.0f64, delta in 0.0..1e6f64) {
            let p = params(wm, t);
            let up = filter_kernel(p, wm + delta);
            let down = filter_kernel(p, wm - delta);
            prop_assert!((up - down).abs() <= 1e-9 * 0.25 * t * t, "{} vs {}", up, down);
        }

        // Holds when C̃ is symmetric about ωm and nonincreasing in |ν − ωm|
        // (plus any white floor): the rate kernel sin(xt)/x then integrates
        // against a decreasing weight and stays positive.
        #[test]
        fn phonons_non_decreasing_in_t(center in 1e3..1e5f64, width in 10.0..1e4f64, level in 0.0..1e-3f64) {
            let s = build_spectrum(vec![
                SpectrumComponent::GaussianPeak { strength: 1.0, center, width: width.min(center / 10.0) },
                SpectrumComponent::White { level },
            ]).unwrap();
            let wm = center;
            let q = QuadratureConfig::default();
            let mut last = 0.0;
            for k in 0..8 {
                let t = 1e-4 * 2f64.powi(k);
                let n = expected_phonons(&s, 1.0, 0.0, 0.0, params(wm, t), &q).unwrap();
                prop_assert!(n.value >= last - n.abs_error);
                last = n.value;
            }
        }
    }
}
