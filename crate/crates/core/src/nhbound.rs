//! Annealed void magnon: the harmonic oscillator with imaginary potential,
//! its quasispectrum, and the survival lower bound built from it.
//!
//! The dissipation rate is set to one throughout. The generator is
//! `ε = p²/m* − i (t/ℓ² + k x²)` and the magnon is evolved by `exp(−i ε t)`.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};

/// Curvature of the two-pole profile at its minimum, `12 t / ℓ⁴`.
pub fn void_curvature(ell: f64, t: f64) -> f64 {
    12.0 * t / ell.powi(4)
}

/// Density `(t/8)[(ℓ/2 + x)⁻² + (ℓ/2 − x)⁻²]` inside a void of width `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoidProfile {
    pub ell: f64,
    pub t: f64,
    /// Constant term of the expansion about `x = 0`, `t/ℓ²`.
    pub floor: f64,
    /// Coefficient of `x²` in the expansion, `12 t/ℓ⁴`.
    pub curvature: f64,
    pub samples: Vec<(f64, f64)>,
}

impl VoidProfile {
    pub fn density(&self, x: f64) -> Result<f64> {
        let h = 0.5 * self.ell;
        if x.abs() >= h {
            return domain(format!("|x| = {} reaches the void edge {h}", x.abs()));
        }
        Ok(self.t / 8.0 * ((h + x).powi(-2) + (h - x).powi(-2)))
    }

    /// Quadratic approximation `t/ℓ² + k x²`.
    pub fn expansion(&self, x: f64) -> f64 {
        self.floor + self.curvature * x * x
    }
}

/// Profile of a void of width `ell` at time `t`, sampled on 129 interior points.
pub fn void_profile(ell: f64, t: f64) -> Result<VoidProfile> {
    if !(t > 0.0) {
        return argument(format!("t must be positive, got {t}"));
    }
    if !(ell > 2.0) {
        return argument(format!("void width must exceed 2, got {ell}"));
    }
    let mut p = VoidProfile {
        ell,
        t,
        floor: t / (ell * ell),
        curvature: void_curvature(ell, t),
        samples: Vec::new(),
    };
    let m = 129;
    let h = 0.5 * ell;
    for i in 0..m {
        let x = -h + ell * (i as f64 + 0.5) / m as f64;
        p.samples.push((x, p.density(x)?));
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub m_star: f64,
    /// Imaginary-potential curvature.
    pub k: f64,
    /// Constant damping.
    pub floor: f64,
    pub ell: Option<f64>,
    pub t: Option<f64>,
}

impl OscillatorParams {
    pub fn new(m_star: f64, k: f64, floor: f64) -> Result<Self> {
        if !(m_star > 0.0) || !(k > 0.0) || !(floor >= 0.0) {
            return argument(format!(
                "need m* > 0, k > 0, floor >= 0; got {m_star}, {k}, {floor}"
            ));
        }
        Ok(Self {
            m_star,
            k,
            floor,
            ell: None,
            t: None,
        })
    }

    /// Parameters of the void of width `ell` at time `t`.
    pub fn from_void(m_star: f64, ell: f64, t: f64) -> Result<Self> {
        if !(t > 0.0) || !(ell > 0.0) {
            return argument(format!("need t > 0 and ell > 0; got {t}, {ell}"));
        }
        let mut p = Self::new(m_star, void_curvature(ell, t), t / (ell * ell))?;
        p.ell = Some(ell);
        p.t = Some(t);
        Ok(p)
    }

    /// `e^{−iπ/4} √(k/m*)`.
    pub fn omega(&self) -> Complex64 {
        Complex64::from_polar((self.k / self.m_star).sqrt(), -FRAC_PI_4)
    }

    /// Scaled coordinate `z = e^{−iπ/8} (k m*)^{1/4} x`.
    pub fn z(&self, x: f64) -> Complex64 {
        Complex64::from_polar((self.k * self.m_star).powf(0.25) * x, -FRAC_PI_8)
    }
}

/// `λ_n = ω(2n + 1) − i·floor` for `n = 0..=n_max`.
pub fn quasispectrum(params: &OscillatorParams, n_max: usize) -> Vec<Complex64> {
    let w = params.omega();
    (0..=n_max)
        .map(|n| w * (2 * n + 1) as f64 - Complex64::new(0.0, params.floor))
        .collect()
}

/// Unnormalised eigenfunction `e^{−z²/2} H_n(z)` at position `x`, with the
/// physicists' Hermite polynomials (`H_2 = 4z² − 2`).
pub fn eigenfunction(params: &OscillatorParams, n: usize, x: f64) -> Complex64 {
    let z = params.z(x);
    let mut prev = Complex64::new(1.0, 0.0);
    let mut cur = z * 2.0;
    let he = match n {
        0 => prev,
        _ => {
            for j in 1..n {
                let next = z * cur * 2.0 - prev * (2 * j) as f64;
                prev = cur;
                cur = next;
            }
            cur
        }
    };
    (-z * z * 0.5).exp() * he
}

/// `|e^{−iλ_0 t}|² = exp(−√(2k/m*) t − 2t²/ℓ²)` with `k = 12t/ℓ⁴`.
pub fn survival_lower_bound(t: f64, ell: f64, m_star: f64) -> f64 {
    log_survival_lower_bound(t, ell, m_star).exp()
}

pub fn log_survival_lower_bound(t: f64, ell: f64, m_star: f64) -> f64 {
    let k = void_curvature(ell, t);
    -(2.0 * k / m_star).sqrt() * t - 2.0 * t * t / (ell * ell)
}

/// Sum over the whole ladder, `bound / (1 − e^{−√(8k/m*) t})`.
pub fn survival_ladder_sum(t: f64, ell: f64, m_star: f64) -> f64 {
    let k = void_curvature(ell, t);
    survival_lower_bound(t, ell, m_star) / (1.0 - (-(8.0 * k / m_star).sqrt() * t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoidOptimum {
    pub ell_star: f64,
    pub log_bound: f64,
    /// Power of `t` in both `ell_star` and `log_bound`.
    pub exponent: f64,
}

/// Maximises `−a₁ℓ − a₂t²/ℓ²` over `ℓ`.
pub fn optimal_void(t: f64, a1: f64, a2: f64) -> Result<VoidOptimum> {
    if !(a1 > 0.0) || !(a2 > 0.0) || !(t > 0.0) {
        return argument(format!("need a1, a2, t > 0; got {a1}, {a2}, {t}"));
    }
    let exponent = 2.0 / 3.0;
    Ok(VoidOptimum {
        ell_star: (2.0 * a2 / a1).cbrt() * t.powf(exponent),
        log_bound: -3.0 / 2f64.powf(exponent) * a1.powf(exponent) * a2.cbrt() * t.powf(exponent),
        exponent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subleading {
    /// Power of `t` contributed by the `x^{2m}` term after time integration.
    pub exponent: f64,
    /// Leading power `2 − 2α`.
    pub leading: f64,
    pub subleading: bool,
    /// The contribution does not grow with `t` at all.
    pub vanishing: bool,
}

/// `2 − m/2 − 2α` for the `x^{2m}` term of the profile.
pub fn subleading_exponent(m: u32, alpha: f64) -> Result<Subleading> {
    if m < 1 || !(alpha > 0.0 && alpha <= 1.0) {
        return argument(format!("need m >= 1 and alpha in (0, 1]; got {m}, {alpha}"));
    }
    let exponent = 2.0 - m as f64 / 2.0 - 2.0 * alpha;
    let leading = 2.0 - 2.0 * alpha;
    Ok(Subleading {
        exponent,
        leading,
        subleading: exponent < leading,
        vanishing: exponent <= 0.0,
    })
}
