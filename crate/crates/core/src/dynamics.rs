//! Boundary evolution: the implicit-function ODE for d*(t), steady states of
//! decaying sources, and first-order perturbation formulas.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fields::RadialField;
use crate::functionals::BoundarySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    HorizonReached,
    BoundaryVanished,
    SteadyStateDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryTrajectory {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub terminated_reason: TerminationReason,
}

impl BoundaryTrajectory {
    pub fn last(&self) -> (f64, f64) {
        (*self.times.last().unwrap(), *self.radii.last().unwrap())
    }
}

/// dd*/dt from differentiating τ(d*(t), t) = θ(t):
/// dd*/dt = −(∂τ/∂t − θ′(t)) / ∂τ/∂r.
pub fn boundary_ode_rhs<F: RadialField + ?Sized>(field: &F, spec: &BoundarySpec, d: f64, t: f64) -> Result<f64> {
    let e = field.eval(d, t)?;
    let forcing = e.d_dt - spec.threshold_rate(field, t)?;
    if e.d_dr.abs() <= 1e-14 * forcing.abs() || e.d_dr == 0.0 {
        if forcing == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Numerical {
            what: "boundary_ode",
            diagnostics: format!("singular gradient at r = {d}, t = {t}: d_dr = {:e}, forcing = {forcing:e}", e.d_dr),
        });
    }
    Ok(-forcing / e.d_dr)
}

const STALL_TOL: f64 = 1e-6;
const STALL_STEPS: usize = 10;

/// Fixed-step RK4 integration of the boundary ODE from (t0, d0) to t1.
pub fn boundary_ode_integrate<F: RadialField + ?Sized>(
    field: &F,
    spec: &BoundarySpec,
    d0: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<BoundaryTrajectory> {
    spec.validate()?;
    if !(d0 > 0.0) {
        return Err(domain(format!("initial radius must be positive, got {d0}")));
    }
    if !(t0 > 0.0 && t1 > t0) {
        return Err(domain(format!("need 0 < t0 < t1, got t0 = {t0}, t1 = {t1}")));
    }
    if steps == 0 {
        return Err(domain("steps must be positive"));
    }
    let h = (t1 - t0) / steps as f64;
    let f = |d: f64, t: f64| boundary_ode_rhs(field, spec, d, t);

    let mut times = Vec::with_capacity(steps + 1);
    let mut radii = Vec::with_capacity(steps + 1);
    times.push(t0);
    radii.push(d0);
    let mut d = d0;
    let mut stalled = 0;
    for i in 0..steps {
        let t = t0 + h * i as f64;
        let Some((next, k1)) = rk4_step(&f, d, t, h)? else {
            return finish(times, radii, TerminationReason::BoundaryVanished);
        };
        let t_next = if i + 1 == steps { t1 } else { t0 + h * (i + 1) as f64 };
        d = next;
        times.push(t_next);
        radii.push(d);

        if (k1.abs() * t / d) < STALL_TOL {
            stalled += 1;
            if stalled >= STALL_STEPS {
                return finish(times, radii, TerminationReason::SteadyStateDetected);
            }
        } else {
            stalled = 0;
        }
    }
    finish(times, radii, TerminationReason::HorizonReached)
}

/// One RK4 step; `None` once any stage leaves the positive half-line.
fn rk4_step<G: Fn(f64, f64) -> Result<f64>>(f: &G, d: f64, t: f64, h: f64) -> Result<Option<(f64, f64)>> {
    let k1 = f(d, t)?;
    let d2 = d + 0.5 * h * k1;
    if !(d2 > 0.0) {
        return Ok(None);
    }
    let k2 = f(d2, t + 0.5 * h)?;
    let d3 = d + 0.5 * h * k2;
    if !(d3 > 0.0) {
        return Ok(None);
    }
    let k3 = f(d3, t + 0.5 * h)?;
    let d4 = d + h * k3;
    if !(d4 > 0.0) {
        return Ok(None);
    }
    let k4 = f(d4, t + h)?;
    let next = d + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Ok((next > 0.0).then_some((next, k1)))
}

fn finish(times: Vec<f64>, radii: Vec<f64>, reason: TerminationReason) -> Result<BoundaryTrajectory> {
    Ok(BoundaryTrajectory {
        times,
        radii,
        terminated_reason: reason,
    })
}

/// Screening length ℓ = √(ν/λ) and the closed form d*_∞ = ℓ ln(Q₀ / (λ ℓ τ_min)).
///
/// `None` when the logarithm's argument is at most one.
pub fn steady_state_boundary(nu: f64, lambda: f64, q0: f64, tau_min: f64) -> Result<Option<f64>> {
    check_steady_args(nu, lambda, q0, tau_min)?;
    let ell = (nu / lambda).sqrt();
    let arg = q0 / (lambda * ell * tau_min);
    Ok((arg > 1.0).then(|| ell * arg.ln()))
}

/// Root of Q e^{−r/ℓ} / (4πνr) = τ_min, the exact threshold crossing of the
/// steady profile of [`crate::fields::decaying_source_field`].
pub fn yukawa_steady_boundary(nu: f64, lambda: f64, q0: f64, tau_min: f64) -> Result<f64> {
    check_steady_args(nu, lambda, q0, tau_min)?;
    let ell = (nu / lambda).sqrt();
    // g(r) = ln(Q/(4πν τ_min)) − r/ℓ − ln r is strictly decreasing on (0, ∞).
    let c = (q0 / (4.0 * PI * nu * tau_min)).ln();
    let g = |r: f64| c - r / ell - r.ln();
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, ell);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while g(lo) < 0.0 {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_steady_args(nu: f64, lambda: f64, q0: f64, tau_min: f64) -> Result<()> {
    for (name, v) in [("nu", nu), ("lambda", lambda), ("q0", q0), ("tau_min", tau_min)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// d*₀ + ε τ₁(d*₀) / |∂τ₀/∂r(d*₀)|.
pub fn perturbed_boundary(d0_star: f64, tau1_at_boundary: f64, grad_tau0_at_boundary: f64, eps: f64) -> Result<f64> {
    if !(grad_tau0_at_boundary.abs() > 0.0) {
        return Err(domain("unperturbed gradient at the boundary must be nonzero"));
    }
    Ok(d0_star + eps * tau1_at_boundary / grad_tau0_at_boundary.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdiabaticBoundary {
    pub exact: f64,
    pub first_order: f64,
}

/// Relative-threshold Gaussian boundary under slowly growing diffusion
/// ν(t) = ν₀(1 + αt): exact 2√(ν₀(1+αt) t ln(1/(1−ε))) and the first-order
/// expansion d*₀(t)(1 + αt/2).
pub fn adiabatic_boundary(nu0: f64, alpha: f64, eps_threshold: f64, t: f64) -> Result<AdiabaticBoundary> {
    if !(nu0 > 0.0) {
        return Err(domain(format!("nu0 must be positive, got {nu0}")));
    }
    if !(alpha >= 0.0) {
        return Err(domain(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(eps_threshold > 0.0 && eps_threshold < 1.0) {
        return Err(domain(format!("epsilon must lie in (0, 1), got {eps_threshold}")));
    }
    if !(t > 0.0) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    let log_term = (1.0 / (1.0 - eps_threshold)).ln();
    let static_d = 2.0 * (nu0 * t * log_term).sqrt();
    Ok(AdiabaticBoundary {
        exact: 2.0 * (nu0 * (1.0 + alpha * t) * t * log_term).sqrt(),
        first_order: static_d * (1.0 + 0.5 * alpha * t),
    })
}
