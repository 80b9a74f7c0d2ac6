use super::{gauss_legendre, Panel, QuadError};
use std::sync::OnceLock;

const ORDER: usize = 20;

/// Weight `constant + cos_coeff·cos(ω x) + sin_coeff·sin(ω x)` multiplying a
/// smooth amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatoryWeight {
    pub omega: f64,
    pub constant: f64,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

struct Basis {
    nodes: Vec<f64>,
    // projection[k][i] = (2k+1)/2 · w_i · P_k(y_i)
    projection: Vec<[f64; ORDER]>,
}

fn basis() -> &'static Basis {
    static BASIS: OnceLock<Basis> = OnceLock::new();
    BASIS.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(ORDER);
        let mut projection = vec![[0.0; ORDER]; ORDER];
        for (i, (&y, &w)) in nodes.iter().zip(&weights).enumerate() {
            let mut p_prev = 1.0;
            let mut p = y;
            for (k, row) in projection.iter_mut().enumerate() {
                let pk = match k {
                    0 => 1.0,
                    1 => y,
                    _ => {
                        let next = ((2 * k - 1) as f64 * y * p - (k - 1) as f64 * p_prev) / k as f64;
                        p_prev = p;
                        p = next;
                        next
                    }
                };
                row[i] = (2 * k + 1) as f64 * 0.5 * w * pk;
            }
        }
        Basis { nodes, projection }
    })
}

/// Spherical Bessel functions j_0(w) .. j_{n-1}(w) for w ≥ 0.
///
/// Forward recurrence when w exceeds the highest order, Miller's backward
/// recurrence otherwise, and the power series for w < 1.
pub fn spherical_bessel_sequence(w: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if w == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if w < 1.0 {
        let z = -0.5 * w * w;
        let mut lead = 1.0;
        for (k, slot) in out.iter_mut().enumerate() {
            if k > 0 {
                lead *= w / (2 * k + 1) as f64;
            }
            let mut term = 1.0;
            let mut sum = 1.0;
            for m in 1..30 {
                term *= z / (m as f64 * (2 * k + 2 * m + 1) as f64);
                sum += term;
                if term.abs() < 1e-17 * sum.abs() {
                    break;
                }
            }
            *slot = lead * sum;
        }
        return out;
    }
    let (s, c) = w.sin_cos();
    let j0 = s / w;
    let j1 = s / (w * w) - c / w;
    if w > n as f64 {
        out[0] = j0;
        if n > 1 {
            out[1] = j1;
        }
        for k in 1..n.saturating_sub(1) {
            out[k + 1] = (2 * k + 1) as f64 / w * out[k] - out[k - 1];
        }
        return out;
    }
    let start = 2 * n + 20 + w.ceil() as usize;
    let mut upper = 0.0;
    let mut current = 1e-30;
    for k in (1..=start).rev() {
        let lower = (2 * k + 1) as f64 / w * current - upper;
        upper = current;
        current = lower;
        if k - 1 < n {
            out[k - 1] = lower;
        }
        if lower.abs() > 1e200 {
            upper *= 1e-200;
            current *= 1e-200;
            for v in out.iter_mut() {
                *v *= 1e-200;
            }
        }
    }
    let scale = if j0.abs() >= j1.abs() || n < 2 {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// Integrates `amplitude(x)·weight(x)` over `[lo, hi]` by expanding the
/// amplitude in Legendre polynomials and integrating each term against the
/// oscillatory weight exactly.
pub fn legendre_filon<F: Fn(f64) -> f64>(amplitude: &F, lo: f64, hi: f64, weight: &OscillatoryWeight) -> Result<Panel, QuadError> {
    let basis = basis();
    let center = 0.5 * (lo + hi);
    let radius = 0.5 * (hi - lo);
    let mut samples = [0.0; ORDER];
    let mut peak = 0.0f64;
    for (slot, &y) in samples.iter_mut().zip(&basis.nodes) {
        let x = center + radius * y;
        let v = amplitude(x);
        if !v.is_finite() {
            return Err(QuadError::NonFinite { at: x });
        }
        peak = peak.max(v.abs());
        *slot = v;
    }
    let mut coeffs = [0.0; ORDER];
    for (k, c) in coeffs.iter_mut().enumerate() {
        *c = basis.projection[k].iter().zip(&samples).map(|(p, s)| p * s).sum();
    }

    let mut value = weight.constant * 2.0 * coeffs[0] * radius;
    if weight.cos_coeff != 0.0 || weight.sin_coeff != 0.0 {
        let j = spherical_bessel_sequence((weight.omega * radius).abs(), ORDER);
        let sign = if weight.omega * radius < 0.0 { -1.0 } else { 1.0 };
        let (mut re, mut im) = (0.0, 0.0);
        for k in 0..ORDER {
            // i^k with j_k(-w) = (-1)^k j_k(w)
            let jk = if k % 2 == 1 { sign * j[k] } else { j[k] };
            let term = 2.0 * coeffs[k] * jk;
            match k % 4 {
                0 => re += term,
                1 => im += term,
                2 => re -= term,
                _ => im -= term,
            }
        }
        let (s, c) = (weight.omega * center).sin_cos();
        let cos_part = radius * (c * re - s * im);
        let sin_part = radius * (s * re + c * im);
        value += weight.cos_coeff * cos_part + weight.sin_coeff * sin_part;
    }

    let scale = 2.0 * radius.abs() * (weight.constant.abs() + weight.cos_coeff.abs() + weight.sin_coeff.abs());
    let tail = coeffs[ORDER - 1].abs() + coeffs[ORDER - 2].abs() + coeffs[ORDER - 3].abs();
    let error = scale * (tail + 100.0 * f64::EPSILON * peak);
    Ok(Panel {
        value,
        error,
        evaluations: ORDER,
    })
}
