//! Adaptive quadrature: a global error-driven bisection engine, the
//! Gauss–Kronrod 21-point rule and a Legendre–Filon rule for panels whose
//! integrand is a smooth amplitude times cos/sin of a fixed frequency.

mod filon;
mod rules;

pub use filon::{legendre_filon, spherical_bessel_sequence, OscillatoryWeight};
pub use rules::{gauss_kronrod21, gauss_legendre};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge after {segments} segments: estimate {estimate:e} with error bound {abs_error:e}")]
    NonConvergent {
        estimate: f64,
        abs_error: f64,
        segments: usize,
    },
    #[error("integrand is not finite at x = {at:e}")]
    NonFinite { at: f64 },
    #[error("invalid integration interval [{lo:e}, {hi:e}]")]
    InvalidInterval { lo: f64, hi: f64 },
}

/// Requested accuracy: the sum of panel errors must fall below
/// `max(absolute, relative * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Tolerance {
    pub fn relative(relative: f64) -> Self {
        Tolerance {
            relative,
            absolute: 0.0,
        }
    }

    pub fn target(&self, value: f64) -> f64 {
        self.absolute.max(self.relative * value.abs())
    }
}

/// Result of integrating over one panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Integral value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    kind: u8,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

/// Global adaptive integration over a growing set of panels.
///
/// Each panel carries a `kind` tag that is handed back to the panel rule, so
/// one workspace can mix rules (e.g. Kronrod near a peak, Filon in the far
/// field). Bisection keeps the tag.
#[derive(Debug, Default)]
pub struct Workspace {
    heap: BinaryHeap<Segment>,
    value: f64,
    error: f64,
    evaluations: usize,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Evaluates `rule` on `[lo, hi]` and adds the panel.
    pub fn push<F>(&mut self, lo: f64, hi: f64, kind: u8, rule: &mut F) -> Result<(), QuadError>
    where
        F: FnMut(f64, f64, u8) -> Result<Panel, QuadError>,
    {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(QuadError::InvalidInterval { lo, hi });
        }
        if hi == lo {
            return Ok(());
        }
        let panel = rule(lo, hi, kind)?;
        self.insert(lo, hi, kind, panel);
        Ok(())
    }

    fn insert(&mut self, lo: f64, hi: f64, kind: u8, panel: Panel) {
        self.value += panel.value;
        self.error += panel.error;
        self.evaluations += panel.evaluations;
        self.heap.push(Segment {
            lo,
            hi,
            kind,
            value: panel.value,
            error: panel.error,
        });
    }

    fn resum(&mut self) {
        let (mut value, mut error) = (0.0, 0.0);
        for seg in self.heap.iter() {
            value += seg.value;
            error += seg.error;
        }
        self.value = value;
        self.error = error;
    }

    /// Bisects the worst panel until the summed error meets `tol`.
    pub fn refine<F>(&mut self, tol: Tolerance, max_segments: usize, rule: &mut F) -> Result<(), QuadError>
    where
        F: FnMut(f64, f64, u8) -> Result<Panel, QuadError>,
    {
        let mut iterations = 0usize;
        loop {
            if iterations.is_multiple_of(256) {
                self.resum();
            }
            iterations += 1;
            if self.error <= tol.target(self.value) {
                self.resum();
                if self.error <= tol.target(self.value) {
                    return Ok(());
                }
            }
            if self.heap.len() >= max_segments {
                return Err(self.non_convergent());
            }
            let worst = match self.heap.pop() {
                Some(seg) => seg,
                None => return Ok(()),
            };
            let mid = 0.5 * (worst.lo + worst.hi);
            if !(mid > worst.lo && mid < worst.hi) {
                self.heap.push(worst);
                return Err(self.non_convergent());
            }
            self.value -= worst.value;
            self.error -= worst.error;
            let left = rule(worst.lo, mid, worst.kind)?;
            let right = rule(mid, worst.hi, worst.kind)?;
            self.insert(worst.lo, mid, worst.kind, left);
            self.insert(mid, worst.hi, worst.kind, right);
        }
    }

    fn non_convergent(&mut self) -> QuadError {
        self.resum();
        QuadError::NonConvergent {
            estimate: self.value,
            abs_error: self.error,
            segments: self.heap.len(),
        }
    }

    pub fn estimate(&mut self) -> Integral {
        self.resum();
        Integral {
            value: self.value,
            abs_error: self.error,
            evaluations: self.evaluations,
        }
    }
}

/// Integrates `f` over `[lo, hi]` with Gauss–Kronrod panels, starting from
/// `initial` equal subdivisions.
pub fn integrate<F>(f: F, lo: f64, hi: f64, initial: usize, tol: Tolerance, max_segments: usize) -> Result<Integral, QuadError>
where
    F: Fn(f64) -> f64,
{
    let n = initial.max(1);
    let step = (hi - lo) / n as f64;
    let breaks: Vec<f64> = (0..=n)
        .map(|i| if i == n { hi } else { lo + step * i as f64 })
        .collect();
    integrate_breaks(f, &breaks, tol, max_segments)
}

/// Integrates `f` over the span of `breaks` (sorted), with each consecutive
/// pair forming an initial panel.
pub fn integrate_breaks<F>(f: F, breaks: &[f64], tol: Tolerance, max_segments: usize) -> Result<Integral, QuadError>
where
    F: Fn(f64) -> f64,
{
    let mut rule = |a: f64, b: f64, _kind: u8| gauss_kronrod21(&f, a, b);
    let mut ws = Workspace::new();
    for pair in breaks.windows(2) {
        if pair[1] < pair[0] {
            return Err(QuadError::InvalidInterval {
                lo: pair[0],
                hi: pair[1],
            });
        }
        ws.push(pair[0], pair[1], 0, &mut rule)?;
    }
    ws.refine(tol, max_segments.max(ws.len() + 1), &mut rule)?;
    Ok(ws.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1, Tolerance::relative(1e-12), 100).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_integrand_converges() {
        let r = integrate(|x| (50.0 * x).sin().powi(2), 0.0, PI, 4, Tolerance::relative(1e-10), 10_000).unwrap();
        assert!((r.value - PI / 2.0).abs() < 1e-9, "{}", r.value);
        assert!(r.abs_error < 1e-9);
    }

    #[test]
    fn endpoint_singularity_refines() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 1e-300, 1.0, 1, Tolerance::relative(1e-8), 10_000).unwrap();
        assert!((r.value - 2.0).abs() < 1e-7);
    }

    #[test]
    fn budget_exhaustion_reports_estimate() {
        let err = integrate(|x| (1e6 * x).sin().abs(), 0.0, 1.0, 1, Tolerance::relative(1e-14), 8).unwrap_err();
        match err {
            QuadError::NonConvergent { estimate, segments, .. } => {
                assert!(estimate.is_finite());
                assert!(segments <= 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, 1, Tolerance::relative(1e-8), 100).unwrap_err();
        assert!(matches!(err, QuadError::NonFinite { .. }));
    }
}
