//! Closed-form intensity fields τ(r, t) of the zero-drift diffusion equation
//! and their exact radial and time derivatives.
//!
//! Every field here is radially symmetric about its source, so the primary
//! API takes `(r, t)`; [`FieldParams::radius_of`] turns a point into `r`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{self, Tolerance};
use crate::specfun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Diffusion coefficient (length²/time).
    pub nu: f64,
    /// Source strength (intensity · length^dim).
    pub q: f64,
    pub source_pos: Vec<f64>,
    /// Decay rate (1/time); 0 means a sustained, non-decaying source.
    pub lambda: f64,
    pub dim: usize,
}

impl FieldParams {
    pub fn new(nu: f64, q: f64, dim: usize) -> Result<Self> {
        let p = Self {
            nu,
            q,
            source_pos: vec![0.0; dim],
            lambda: 0.0,
            dim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn with_source(mut self, pos: Vec<f64>) -> Result<Self> {
        self.source_pos = pos;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(domain(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(domain(format!("q must be positive, got {}", self.q)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.dim == 2 || self.dim == 3) {
            return Err(domain(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.source_pos.len() != self.dim {
            return Err(domain(format!(
                "source position has {} coordinates, expected {}",
                self.source_pos.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Euclidean distance from the source.
    pub fn radius_of(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(domain(format!("point has {} coordinates, expected {}", x.len(), self.dim)));
        }
        Ok(distance(x, &self.source_pos))
    }

    fn require_dim(&self, dim: usize, what: &str) -> Result<()> {
        self.validate()?;
        if self.dim != dim {
            return Err(domain(format!("{what} requires dim = {dim}, got {}", self.dim)));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Field value with its exact radial and time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldEval {
    pub value: f64,
    pub d_dr: f64,
    pub d_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEvent {
    pub pos: Vec<f64>,
    pub time: f64,
    pub strength: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// Point-source solution in three dimensions,
/// τ = Q e^{−λt} (4πνt)^{−3/2} exp(−r²/4νt).
///
/// With λ = 0 this is the heat kernel scaled by Q; λ > 0 damps the whole
/// pulse at rate λ.
pub fn gaussian_field(p: &FieldParams, r: f64, t: f64) -> Result<FieldEval> {
    p.require_dim(3, "gaussian_field")?;
    check_time(t)?;
    if !(r >= 0.0) {
        return Err(domain(format!("radius must be >= 0, got {r}")));
    }
    let four_nu_t = 4.0 * p.nu * t;
    let value = p.q * (-p.lambda * t).exp() * (PI * four_nu_t).powf(-1.5) * (-r * r / four_nu_t).exp();
    Ok(FieldEval {
        value,
        d_dr: -r / (2.0 * p.nu * t) * value,
        d_dt: value * (-p.lambda - 1.5 / t + r * r / (4.0 * p.nu * t * t)),
    })
}

/// [`gaussian_field`] evaluated at a point.
pub fn gaussian_field_at(p: &FieldParams, x: &[f64], t: f64) -> Result<FieldEval> {
    gaussian_field(p, p.radius_of(x)?, t)
}

/// Cylindrical (two-dimensional) profile τ = (A/t) K₀(r / 2√(νt)).
///
/// Derivatives use K₀′ = −K₁ with K₁ evaluated directly.
pub fn bessel_field(p: &FieldParams, amplitude: f64, r: f64, t: f64) -> Result<FieldEval> {
    p.require_dim(2, "bessel_field")?;
    check_time(t)?;
    if !(amplitude > 0.0) {
        return Err(domain(format!("amplitude must be positive, got {amplitude}")));
    }
    if !(r > 0.0) {
        return Err(domain(format!("bessel_field is singular at r = 0, got r = {r}")));
    }
    let scale = 2.0 * (p.nu * t).sqrt();
    let z = r / scale;
    let (k0, k1) = specfun::bessel_k01(z)?;
    let value = amplitude / t * k0.value;
    Ok(FieldEval {
        value,
        d_dr: -amplitude / t * k1.value / scale,
        d_dt: -value / t + amplitude / t * k1.value * z / (2.0 * t),
    })
}

/// Truncated radial Kummer series τ = t⁻¹ Σ Cₙ M(n + ½, 2n + 1, r²/4νt).
pub fn kummer_field(coeffs: &[(f64, u32)], p: &FieldParams, r: f64, t: f64) -> Result<f64> {
    kummer_field_eval(coeffs, p, r, t).map(|e| e.value)
}

/// [`kummer_field`] with derivatives, from dM/dz = (a/b) M(a + 1, b + 1, z).
pub fn kummer_field_eval(coeffs: &[(f64, u32)], p: &FieldParams, r: f64, t: f64) -> Result<FieldEval> {
    p.validate()?;
    check_time(t)?;
    if !(r >= 0.0) {
        return Err(domain(format!("radius must be >= 0, got {r}")));
    }
    let z = r * r / (4.0 * p.nu * t);
    let (mut sum, mut dsum) = (0.0, 0.0);
    for &(c, n) in coeffs {
        let a = n as f64 + 0.5;
        let b = 2.0 * n as f64 + 1.0;
        sum += c * specfun::kummer_m(a, b, z)?.value;
        dsum += c * a / b * specfun::kummer_m(a + 1.0, b + 1.0, z)?.value;
    }
    let value = sum / t;
    Ok(FieldEval {
        value,
        d_dr: dsum / t * r / (2.0 * p.nu * t),
        d_dt: -value / t - dsum / t * z / t,
    })
}

fn decay_tolerance() -> Tolerance {
    Tolerance::new(0.0, 1e-8)
}

const DECAY_MAX_REL_ERR: f64 = 1e-6;

/// Sustained emission at rate Q whose emitted material decays at rate λ:
///
/// τ(r, t) = Q (4πν)^{−3/2} ∫₀ᵗ e^{−λw} w^{−3/2} exp(−r²/4νw) dw,
///
/// with `w` the age of the material. Integrated after the substitution
/// w = v², which leaves a smooth integrand for r > 0. For λt ≫ 1 it settles
/// to the screened profile Q e^{−r√(λ/ν)} / (4πνr).
pub fn decaying_source_field(p: &FieldParams, r: f64, t: f64) -> Result<f64> {
    decaying_source_value(p, r, t)
}

fn decaying_source_value(p: &FieldParams, r: f64, t: f64) -> Result<f64> {
    p.require_dim(3, "decaying_source_field")?;
    check_time(t)?;
    if !(r > 0.0) {
        return Err(domain(format!("decaying_source_field requires r > 0, got {r}")));
    }
    let c = r * r / (4.0 * p.nu);
    let pref = p.q * (4.0 * PI * p.nu).powf(-1.5);
    // ∫ e^{-λw} w^{-3/2} e^{-c/w} dw = 2 ∫ e^{-λv²} v^{-2} e^{-c/v²} dv
    let integrand = |v: f64| {
        let v2 = v * v;
        2.0 * (-p.lambda * v2 - c / v2).exp() / v2
    };
    let res = quad::integrate_pieces(integrand, &age_breaks(c, p.lambda, t), decay_tolerance())?;
    check_quadrature("decaying_source_field", res.value, res.abs_err)?;
    Ok(pref * res.value)
}

/// Full evaluation with derivatives. ∂τ/∂t is exact (Leibniz rule on the
/// upper limit); ∂τ/∂r needs a second quadrature.
pub fn decaying_source_eval(p: &FieldParams, r: f64, t: f64) -> Result<FieldEval> {
    let value = decaying_source_value(p, r, t)?;
    let c = r * r / (4.0 * p.nu);
    let pref = p.q * (4.0 * PI * p.nu).powf(-1.5);
    let integrand = |v: f64| {
        let v2 = v * v;
        2.0 * (-p.lambda * v2 - c / v2).exp() / (v2 * v2)
    };
    let res = quad::integrate_pieces(integrand, &age_breaks(c, p.lambda, t), decay_tolerance())?;
    check_quadrature("decaying_source_field radial derivative", res.value, res.abs_err)?;
    Ok(FieldEval {
        value,
        d_dr: -pref * r / (2.0 * p.nu) * res.value,
        d_dt: pref * (-p.lambda * t).exp() * t.powf(-1.5) * (-c / t).exp(),
    })
}

/// Breakpoints in √age: around the integrand peak and the decay scale.
fn age_breaks(c: f64, lambda: f64, t: f64) -> Vec<f64> {
    let top = t.sqrt();
    let mut b = vec![0.0];
    let peak = c.sqrt().max(1e-300);
    for &x in &[0.25 * peak, peak, 4.0 * peak] {
        if x > *b.last().unwrap() && x < top {
            b.push(x);
        }
    }
    if lambda > 0.0 {
        let decay = (10.0 / lambda).sqrt();
        if decay > *b.last().unwrap() && decay < top {
            b.push(decay);
        }
    }
    b.push(top);
    b
}

fn check_quadrature(what: &'static str, value: f64, err: f64) -> Result<()> {
    if err > DECAY_MAX_REL_ERR * value.abs() {
        return Err(Error::Numerical {
            what,
            diagnostics: format!("estimated error {err:e} exceeds {DECAY_MAX_REL_ERR:e} of value {value:e}"),
        });
    }
    Ok(())
}

/// Free-space Green's function (unit impulse at `y`, time `s`), in the
/// dimension of the points. Zero for t ≤ s.
pub fn greens_eval(x: &[f64], t: f64, y: &[f64], s: f64, nu: f64) -> f64 {
    let dt = t - s;
    if dt <= 0.0 {
        return 0.0;
    }
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (4.0 * PI * nu * dt).powf(-0.5 * d) * (-r2 / (4.0 * nu * dt)).exp()
}

/// Superposition of impulse events.
pub fn superpose(events: &[SourceEvent], nu: f64, x: &[f64], t: f64) -> f64 {
    events
        .iter()
        .map(|e| e.strength * greens_eval(x, t, &e.pos, e.time, nu))
        .sum()
}

/// Radially symmetric field usable by the functionals and boundary dynamics.
pub trait RadialField {
    fn dim(&self) -> usize;

    fn eval(&self, r: f64, t: f64) -> Result<FieldEval>;

    fn value(&self, r: f64, t: f64) -> Result<f64> {
        self.eval(r, t).map(|e| e.value)
    }

    /// Natural radial length at time `t`; seeds boundary searches and
    /// quadrature ranges.
    fn length_scale(&self, t: f64) -> f64;

    /// Natural time at distance `r`.
    fn time_scale(&self, _r: f64) -> f64 {
        1.0
    }

    /// Whether τ(0, t) is finite.
    fn finite_at_source(&self) -> bool {
        true
    }

    /// Upper bound on ∫_T^∞ τ(r, t) dt, if the tail is integrable.
    fn exposure_tail_bound(&self, _r: f64, _t_cut: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Field {
    Gaussian(FieldParams),
    Bessel { params: FieldParams, amplitude: f64 },
    Kummer { params: FieldParams, coeffs: Vec<(f64, u32)> },
    DecayingSource(FieldParams),
    /// Time-independent exponential profile A e^{−κr}.
    Exponential { amplitude: f64, kappa: f64, dim: usize },
    Constant { level: f64, dim: usize },
}

impl RadialField for Field {
    fn dim(&self) -> usize {
        match self {
            Field::Gaussian(p) | Field::DecayingSource(p) => p.dim,
            Field::Bessel { params, .. } | Field::Kummer { params, .. } => params.dim,
            Field::Exponential { dim, .. } | Field::Constant { dim, .. } => *dim,
        }
    }

    fn eval(&self, r: f64, t: f64) -> Result<FieldEval> {
        match self {
            Field::Gaussian(p) => gaussian_field(p, r, t),
            Field::Bessel { params, amplitude } => bessel_field(params, *amplitude, r, t),
            Field::Kummer { params, coeffs } => kummer_field_eval(coeffs, params, r, t),
            Field::DecayingSource(p) => decaying_source_eval(p, r, t),
            Field::Exponential { amplitude, kappa, .. } => {
                if !(r >= 0.0) {
                    return Err(domain(format!("radius must be >= 0, got {r}")));
                }
                let value = amplitude * (-kappa * r).exp();
                Ok(FieldEval {
                    value,
                    d_dr: -kappa * value,
                    d_dt: 0.0,
                })
            }
            Field::Constant { level, .. } => Ok(FieldEval {
                value: *level,
                d_dr: 0.0,
                d_dt: 0.0,
            }),
        }
    }

    fn value(&self, r: f64, t: f64) -> Result<f64> {
        match self {
            Field::DecayingSource(p) => decaying_source_value(p, r, t),
            _ => self.eval(r, t).map(|e| e.value),
        }
    }

    fn length_scale(&self, t: f64) -> f64 {
        match self {
            Field::Gaussian(p) | Field::Bessel { params: p, .. } | Field::Kummer { params: p, .. } => {
                (p.nu * t).sqrt()
            }
            Field::DecayingSource(p) => {
                let diffusive = (p.nu * t).sqrt();
                if p.lambda > 0.0 {
                    diffusive.min((p.nu / p.lambda).sqrt())
                } else {
                    diffusive
                }
            }
            Field::Exponential { kappa, .. } => 1.0 / kappa,
            Field::Constant { .. } => 1.0,
        }
    }

    fn time_scale(&self, r: f64) -> f64 {
        match self {
            Field::Gaussian(p)
            | Field::Bessel { params: p, .. }
            | Field::Kummer { params: p, .. }
            | Field::DecayingSource(p) => (r * r / (4.0 * p.nu)).max(f64::MIN_POSITIVE),
            _ => 1.0,
        }
    }

    fn finite_at_source(&self) -> bool {
        !matches!(self, Field::Bessel { .. } | Field::DecayingSource(_))
    }

    fn exposure_tail_bound(&self, _r: f64, t_cut: f64) -> Option<f64> {
        match self {
            // ∫_T^∞ Q (4πνt)^{-3/2} dt, dropping factors bounded by one
            Field::Gaussian(p) => Some(p.q * (4.0 * PI * p.nu).powf(-1.5) * 2.0 / t_cut.sqrt()),
            _ => None,
        }
    }
}
