//! Functionals of a radial intensity field: boundary radius and velocity,
//! cumulative exposure, spatial moments, energy, sensitivities, optimal
//! placement and first variations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fields::{FieldParams, RadialField};
use crate::quad::{self, QuadResult, Tolerance};
use crate::specfun;

/// Threshold that defines the boundary d*(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundarySpec {
    /// τ(d*, t) = τ_min.
    Absolute { tau_min: f64 },
    /// τ(d*, t) = (1 − ε) τ(0, t).
    DecayByEpsilon { epsilon: f64 },
    /// τ(d*, t) = p τ(0, t).
    DecayToFraction { fraction: f64 },
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundarySpec::Absolute { tau_min } if !(tau_min > 0.0 && tau_min.is_finite()) => {
                Err(domain(format!("tau_min must be positive, got {tau_min}")))
            }
            BoundarySpec::DecayByEpsilon { epsilon } if !(epsilon > 0.0 && epsilon < 1.0) => {
                Err(domain(format!("epsilon must lie in (0, 1), got {epsilon}")))
            }
            BoundarySpec::DecayToFraction { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(domain(format!("fraction must lie in (0, 1), got {fraction}")))
            }
            _ => Ok(()),
        }
    }

    /// Multiplier on the source value for relative thresholds.
    pub fn relative_factor(&self) -> Option<f64> {
        match *self {
            BoundarySpec::Absolute { .. } => None,
            BoundarySpec::DecayByEpsilon { epsilon } => Some(1.0 - epsilon),
            BoundarySpec::DecayToFraction { fraction } => Some(fraction),
        }
    }

    pub fn threshold<F: RadialField + ?Sized>(&self, field: &F, t: f64) -> Result<f64> {
        self.validate()?;
        match (*self, self.relative_factor()) {
            (BoundarySpec::Absolute { tau_min }, _) => Ok(tau_min),
            (_, Some(c)) => {
                if !field.finite_at_source() {
                    return Err(domain("relative thresholds need a field that is finite at the source"));
                }
                Ok(c * field.value(0.0, t)?)
            }
            _ => unreachable!(),
        }
    }

    /// d/dt of the threshold along the source value.
    pub fn threshold_rate<F: RadialField + ?Sized>(&self, field: &F, t: f64) -> Result<f64> {
        match self.relative_factor() {
            None => Ok(0.0),
            Some(c) => Ok(c * field.eval(0.0, t)?.d_dt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundary {
    pub radius: f64,
    /// Set when the field was seen rising again with distance; `radius` is
    /// then the first crossing only.
    pub non_unique: bool,
}

const SEARCH_SAMPLES: usize = 64;
const SEARCH_DOUBLINGS: u32 = 10;

/// Smallest r with τ(r, t) at the threshold, or `None` when the threshold is
/// never crossed within the search radius (10·L doubled up to 2¹⁰ times).
pub fn boundary_radius<F: RadialField + ?Sized>(field: &F, spec: &BoundarySpec, t: f64) -> Result<Option<Boundary>> {
    let threshold = spec.threshold(field, t)?;
    let scale = field.length_scale(t);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Numerical {
            what: "boundary_radius",
            diagnostics: format!("field length scale {scale} is not usable"),
        });
    }
    let start = if field.finite_at_source() { 0.0 } else { 1e-12 * scale };
    let v0 = field.value(start, t)?;
    if v0 <= threshold {
        return Ok(None);
    }

    let mut prev_r = start;
    let mut seg_lo = start;
    let mut seg_hi = 10.0 * scale;
    let mut crossing = None;
    'search: for _ in 0..=SEARCH_DOUBLINGS {
        let step = (seg_hi - seg_lo) / SEARCH_SAMPLES as f64;
        for i in 1..=SEARCH_SAMPLES {
            let r = seg_lo + step * i as f64;
            let v = field.value(r, t)?;
            if v <= threshold {
                crossing = Some((prev_r, r));
                break 'search;
            }
            prev_r = r;
        }
        seg_lo = seg_hi;
        seg_hi *= 2.0;
    }
    let Some((mut lo, mut hi)) = crossing else {
        return Ok(None);
    };

    // Look past the crossing for a second rise above the threshold.
    let span = hi - start;
    let mut non_unique = false;
    for i in 1..=SEARCH_SAMPLES {
        let r = hi + span * i as f64 / SEARCH_SAMPLES as f64;
        if field.value(r, t)? > threshold {
            non_unique = true;
            break;
        }
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if field.value(mid, t)? > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(Boundary {
        radius: 0.5 * (lo + hi),
        non_unique,
    }))
}

/// Central difference of d*(t) with step 1e-5·t.
pub fn boundary_velocity<F: RadialField + ?Sized>(field: &F, spec: &BoundarySpec, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    let h = 1e-5 * t;
    let plus = boundary_radius(field, spec, t + h)?;
    let minus = boundary_radius(field, spec, t - h)?;
    match (plus, minus) {
        (Some(p), Some(m)) => Ok((p.radius - m.radius) / (2.0 * h)),
        _ => Err(domain(format!("boundary not differentiable here (absent near t = {t})"))),
    }
}

const EXPOSURE_REL_TOL: f64 = 1e-8;
const EXPOSURE_TAIL_REL: f64 = 1e-10;

fn exposure_tol() -> Tolerance {
    Tolerance::new(0.0, EXPOSURE_REL_TOL)
}

/// ∫ τ(r, t) dt over [t_a, t_b] in log-time, t_a > 0.
fn log_time_integral<F: RadialField + ?Sized>(field: &F, r: f64, t_a: f64, t_b: f64) -> Result<QuadResult> {
    let mut failure = None;
    let res = quad::integrate(
        |s| {
            let t = s.exp();
            match field.value(r, t) {
                Ok(v) => v * t,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        t_a.ln(),
        t_b.ln(),
        exposure_tol(),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

fn linear_time_integral<F: RadialField + ?Sized>(field: &F, r: f64, t_a: f64, t_b: f64) -> Result<QuadResult> {
    let mut failure = None;
    let res = quad::integrate(
        |t| {
            if t <= 0.0 {
                return 0.0;
            }
            match field.value(r, t) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        t_a,
        t_b,
        exposure_tol(),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

fn add(a: QuadResult, b: QuadResult) -> QuadResult {
    QuadResult {
        value: a.value + b.value,
        abs_err: a.abs_err + b.abs_err,
        evaluations: a.evaluations + b.evaluations,
    }
}

/// Cumulative exposure Φ(r) = ∫_{t_min}^{T} τ(r, t) dt; `t_max = None` means
/// an infinite horizon, truncated once the field's analytic tail bound falls
/// below 1e-10 of the running integral.
pub fn cumulative_exposure<F: RadialField + ?Sized>(
    field: &F,
    r: f64,
    t_min: f64,
    t_max: Option<f64>,
) -> Result<QuadResult> {
    if !(r > 0.0) {
        return Err(domain(format!("exposure diverges at the source; need r > 0, got {r}")));
    }
    if !(t_min >= 0.0) {
        return Err(domain(format!("t_min must be >= 0, got {t_min}")));
    }
    if let Some(t_max) = t_max {
        if !(t_max >= t_min) {
            return Err(domain(format!("t_max {t_max} precedes t_min {t_min}")));
        }
        if t_max == t_min {
            return Ok(QuadResult {
                value: 0.0,
                abs_err: 0.0,
                evaluations: 0,
            });
        }
    }

    // Linear piece up to the diffusive arrival time, log-time beyond it.
    let arrival = field.time_scale(r);
    let t_a = match t_max {
        Some(tm) => tm.min(t_min.max(arrival)),
        None => t_min.max(arrival),
    };
    let mut acc = linear_time_integral(field, r, t_min, t_a)?;
    match t_max {
        Some(tm) => {
            if tm > t_a {
                acc = add(acc, log_time_integral(field, r, t_a.max(f64::MIN_POSITIVE), tm)?);
            }
            Ok(acc)
        }
        None => {
            let mut lo = t_a.max(arrival);
            for _ in 0..400 {
                let hi = lo * 4.0;
                acc = add(acc, log_time_integral(field, r, lo, hi)?);
                let Some(tail) = field.exposure_tail_bound(r, hi) else {
                    return Err(Error::Numerical {
                        what: "cumulative_exposure",
                        diagnostics: "field has no integrable time tail; infinite horizon diverges".into(),
                    });
                };
                if tail < EXPOSURE_TAIL_REL * acc.value.abs() {
                    acc.abs_err += tail;
                    return Ok(acc);
                }
                lo = hi;
            }
            Err(Error::Numerical {
                what: "cumulative_exposure",
                diagnostics: "tail bound never met the truncation criterion".into(),
            })
        }
    }
}

/// Surface area of the unit sphere in `dim` dimensions, 2π^{d/2}/Γ(d/2).
pub fn unit_sphere_area(dim: usize) -> f64 {
    let half = 0.5 * dim as f64;
    2.0 * PI.powf(half) / specfun::gamma_fn(half).expect("dim >= 1")
}

const RADIAL_REL_TOL: f64 = 1e-10;

/// ω_d ∫₀^∞ r^{d−1} g(r) dr, extending the range by doubling until a whole
/// segment contributes below 1e-14 of the total.
fn radial_integral<F, G>(field: &F, t: f64, what: &'static str, mut g: G) -> Result<QuadResult>
where
    F: RadialField + ?Sized,
    G: FnMut(f64) -> Result<f64>,
{
    if !(t > 0.0) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    let dim = field.dim() as i32;
    let scale = field.length_scale(t);
    let mut failure = None;
    let mut integrand = |r: f64| match g(r) {
        Ok(v) => r.powi(dim - 1) * v,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let tol = Tolerance::new(0.0, RADIAL_REL_TOL);
    let mut acc = quad::integrate_pieces(&mut integrand, &[0.0, scale, 4.0 * scale], tol)?;
    let mut lo = 4.0 * scale;
    let mut converged = false;
    for _ in 0..60 {
        let hi = 2.0 * lo;
        let seg = quad::integrate(&mut integrand, lo, hi, tol)?;
        acc = add(acc, seg);
        lo = hi;
        if seg.value.abs() <= 1e-14 * acc.value.abs() {
            converged = true;
            break;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if !converged {
        return Err(Error::Numerical {
            what,
            diagnostics: format!("radial integral did not converge by r = {lo:e}"),
        });
    }
    let w = unit_sphere_area(field.dim());
    Ok(QuadResult {
        value: w * acc.value,
        abs_err: w * acc.abs_err,
        evaluations: acc.evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentResult {
    pub k: u32,
    pub value: f64,
    pub quadrature_error: f64,
}

/// Radial moment M_k(t) = ω_d ∫ r^{k+d−1} τ(r, t) dr for even k.
pub fn spatial_moment<F: RadialField + ?Sized>(field: &F, k: u32, t: f64) -> Result<MomentResult> {
    if k % 2 != 0 {
        return Err(domain(format!("only even moment orders are supported, got k = {k}")));
    }
    let res = radial_integral(field, t, "spatial_moment", |r| Ok(r.powi(k as i32) * field.value(r, t)?))?;
    Ok(MomentResult {
        k,
        value: res.value,
        quadrature_error: res.abs_err,
    })
}

/// E(t) = ∫ τ² dx.
pub fn energy<F: RadialField + ?Sized>(field: &F, t: f64) -> Result<QuadResult> {
    radial_integral(field, t, "energy", |r| {
        let v = field.value(r, t)?;
        Ok(v * v)
    })
}

/// ∫ |∇τ|² dx, the dissipation integrand of the energy identity.
pub fn gradient_energy<F: RadialField + ?Sized>(field: &F, t: f64) -> Result<QuadResult> {
    radial_integral(field, t, "gradient_energy", |r| {
        let g = field.eval(r, t)?.d_dr;
        Ok(g * g)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    Nu,
    Q,
}

/// ∂d*/∂θ by a central difference with relative step 1e-5 in θ.
pub fn boundary_sensitivity<F, B>(
    family: B,
    params: &FieldParams,
    spec: &BoundarySpec,
    t: f64,
    param: SensitivityParam,
) -> Result<f64>
where
    F: RadialField,
    B: Fn(&FieldParams) -> Result<F>,
{
    let base = match param {
        SensitivityParam::Nu => params.nu,
        SensitivityParam::Q => params.q,
    };
    let h = 1e-5 * base;
    let shifted = |delta: f64| -> Result<f64> {
        let mut p = params.clone();
        match param {
            SensitivityParam::Nu => p.nu = base + delta,
            SensitivityParam::Q => p.q = base + delta,
        }
        boundary_radius(&family(&p)?, spec, t)?
            .map(|b| b.radius)
            .ok_or_else(|| domain(format!("no boundary at t = {t} for the perturbed parameters")))
    };
    Ok((shifted(h)? - shifted(-h)?) / (2.0 * h))
}

/// Population-weighted centroid Σ wᵢxᵢ / Σ wᵢ.
pub fn optimal_centroid(population: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let Some((first, _)) = population.first() else {
        return Err(domain("optimal_centroid needs at least one point"));
    };
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (x, w) in population {
        if x.len() != dim {
            return Err(domain("points have inconsistent dimensions"));
        }
        if !(*w > 0.0) {
            return Err(domain(format!("weights must be positive, got {w}")));
        }
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += w * xi;
        }
        total += w;
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}

/// Snapshot of a radial field on an increasing grid of radii.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    pub r: Vec<f64>,
    pub tau: Vec<f64>,
    pub dim: usize,
}

impl RadialGrid {
    /// Evenly spaced samples on [0, r_max] (or (0, r_max] when the field is
    /// singular at the source).
    pub fn sample<F: RadialField + ?Sized>(field: &F, t: f64, r_max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(r_max > 0.0) {
            return Err(domain("grid needs n >= 2 and r_max > 0"));
        }
        let h = r_max / (n - 1) as f64;
        let offset = if field.finite_at_source() { 0.0 } else { h };
        let r: Vec<f64> = (0..n).map(|i| offset + h * i as f64).collect();
        let tau = r.iter().map(|&ri| field.value(ri, t)).collect::<Result<_>>()?;
        Ok(Self {
            r,
            tau,
            dim: field.dim(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// ∫ τ dx
    TotalIntensity,
    /// ∫ τ² dx
    Energy,
    /// ∫ |∇τ|² dx
    GradientEnergy,
    /// ∫ ρ τ dx
    WeightedExposure,
}

pub const MIN_GRID_NODES: usize = 200;

/// First variation δF/δτ at grid node `index`.
pub fn functional_derivative(
    kind: FunctionalKind,
    grid: &RadialGrid,
    index: usize,
    weight: Option<&dyn Fn(f64) -> f64>,
) -> Result<f64> {
    let n = grid.r.len();
    if n < MIN_GRID_NODES || grid.tau.len() != n {
        return Err(Error::InsufficientData(format!(
            "radial grid needs at least {MIN_GRID_NODES} nodes with matching values, got {n}"
        )));
    }
    if index >= n {
        return Err(domain(format!("index {index} outside grid of {n} nodes")));
    }
    match kind {
        FunctionalKind::TotalIntensity => Ok(1.0),
        FunctionalKind::Energy => Ok(2.0 * grid.tau[index]),
        FunctionalKind::WeightedExposure => weight
            .map(|w| w(grid.r[index]))
            .ok_or_else(|| domain("weighted_exposure needs a weight function")),
        FunctionalKind::GradientEnergy => {
            if index == 0 || index == n - 1 {
                return Err(domain("gradient_energy stencil incomplete at the grid boundary"));
            }
            let (r0, r1, r2) = (grid.r[index - 1], grid.r[index], grid.r[index + 1]);
            let (f0, f1, f2) = (grid.tau[index - 1], grid.tau[index], grid.tau[index + 1]);
            let (hl, hr) = (r1 - r0, r2 - r1);
            let d1 = (hl * hl * (f2 - f1) + hr * hr * (f1 - f0)) / (hl * hr * (hl + hr));
            let d2 = 2.0 * (hl * (f2 - f1) - hr * (f1 - f0)) / (hl * hr * (hl + hr));
            let laplacian = d2 + (grid.dim as f64 - 1.0) / r1 * d1;
            Ok(-2.0 * laplacian)
        }
    }
}
