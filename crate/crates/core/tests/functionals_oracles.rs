mod common;

use std::f64::consts::PI;

use common::{rel_err, simpson, simpson_log};
use tefield::fields::{gaussian_field, Field, FieldParams, RadialField};
use tefield::functionals::{
    boundary_radius, boundary_sensitivity, boundary_velocity, cumulative_exposure, energy, functional_derivative,
    gradient_energy, spatial_moment, BoundarySpec, FunctionalKind, RadialGrid, SensitivityParam,
};

fn gaussian(nu: f64, q: f64) -> Field {
    Field::Gaussian(FieldParams::new(nu, q, 3).unwrap())
}

const EPS10: BoundarySpec = BoundarySpec::DecayByEpsilon { epsilon: 0.1 };

fn xi_star() -> f64 {
    2.0 * (10.0f64 / 9.0).ln().sqrt()
}

fn d_star(field: &Field, spec: &BoundarySpec, t: f64) -> f64 {
    boundary_radius(field, spec, t).unwrap().unwrap().radius
}

#[test]
fn gaussian_boundary_closed_form() {
    let d = d_star(&gaussian(1.0, 1.0), &EPS10, 4.0);
    assert!(rel_err(d, 2.0 * xi_star()) < 1e-10);
    assert!((d - 1.2984).abs() < 5e-4);
    for &nu in &[0.3, 1.0, 4.5] {
        for &t in &[0.1, 2.0, 30.0] {
            let d = d_star(&gaussian(nu, 2.0), &EPS10, t);
            let closed = 2.0 * (nu * t * (10.0f64 / 9.0).ln()).sqrt();
            assert!(rel_err(d, closed) < 1e-10);
        }
    }
}

#[test]
fn exponential_profile_fraction_boundary() {
    let f = Field::Exponential { amplitude: 0.8, kappa: 0.05, dim: 3 };
    let d = d_star(&f, &BoundarySpec::DecayToFraction { fraction: 0.1 }, 1.0);
    assert!(rel_err(d, 10f64.ln() / 0.05) < 1e-10);
}

#[test]
fn boundary_scales_as_root_time() {
    let f = gaussian(1.0, 1.0);
    let base = d_star(&f, &EPS10, 1.0);
    for &t in &[0.25f64, 4.0, 16.0] {
        assert!(rel_err(d_star(&f, &EPS10, t) / t.sqrt(), base) < 1e-9);
    }
}

#[test]
fn velocity_matches_power_law() {
    let f = gaussian(1.0, 1.0);
    let v1 = boundary_velocity(&f, &EPS10, 1.0).unwrap();
    assert!(rel_err(v1, xi_star() / 2.0) < 1e-5);
    assert!((v1 - 0.3246).abs() < 1e-4);
    let v4 = boundary_velocity(&f, &EPS10, 4.0).unwrap();
    assert!(rel_err(v4, v1 / 2.0) < 1e-5);
}

fn exposure_oracle(nu: f64, q: f64, r: f64) -> f64 {
    let g = |t: f64| gaussian_field(&FieldParams::new(nu, q, 3).unwrap(), r, t).unwrap().value;
    let t_scale = r * r / (4.0 * nu);
    // Beyond 1e8 arrival times the remaining tail is ≈ 2Q(4πν)^{-3/2}/√T.
    let top = 1e8 * t_scale;
    simpson_log(g, 1e-4 * t_scale, top, 200_000) + 2.0 * q * (4.0 * PI * nu).powf(-1.5) / top.sqrt()
}

// Infinite-horizon exposure of the 3D point release falls off as 1/r. The
// inverse-square law sometimes quoted for this quantity does not survive the
// time integral: ∫ t^{-3/2} e^{-r²/4νt} dt scales as r^{-1}.
#[test]
fn exposure_follows_inverse_distance() {
    let f = gaussian(1.0, 1.0);
    let phi1 = cumulative_exposure(&f, 1.0, 0.0, None).unwrap().value;
    assert!(rel_err(phi1, 1.0 / (4.0 * PI)) < 1e-6);
    assert!(rel_err(phi1, 0.079_577_5) < 1e-6);
    assert!(rel_err(phi1, exposure_oracle(1.0, 1.0, 1.0)) < 1e-6);
    let phi2 = cumulative_exposure(&f, 2.0, 0.0, None).unwrap().value;
    assert!(rel_err(phi2 / phi1, 0.5) < 1e-6);
    for &(nu, q) in &[(1.0, 1.0), (0.4, 3.0)] {
        let f = gaussian(nu, q);
        for &r in &[0.1, 1.0, 10.0] {
            let phi = cumulative_exposure(&f, r, 0.0, None).unwrap().value;
            assert!(rel_err(phi, q / (4.0 * PI * nu * r)) < 1e-6, "nu={nu} r={r}");
        }
    }
}

#[test]
fn finite_horizon_exposure_matches_quadrature() {
    let f = gaussian(0.7, 1.5);
    let p = FieldParams::new(0.7, 1.5, 3).unwrap();
    for &(r, t0, t1) in &[(0.5, 0.0, 2.0), (2.0, 0.5, 40.0), (1.0, 3.0, 3.5)] {
        let got = cumulative_exposure(&f, r, t0, Some(t1)).unwrap().value;
        let oracle = simpson(|t| if t > 0.0 { gaussian_field(&p, r, t).unwrap().value } else { 0.0 }, t0, t1, 200_000);
        assert!(rel_err(got, oracle) < 1e-7, "r={r} [{t0}, {t1}]");
    }
}

#[test]
fn moments_of_gaussian() {
    let f = gaussian(1.0, 1.0);
    assert!(rel_err(spatial_moment(&f, 0, 3.0).unwrap().value, 1.0) < 1e-7);
    assert!(rel_err(spatial_moment(&f, 2, 2.0).unwrap().value, 12.0) < 1e-7);
    assert!(rel_err(spatial_moment(&f, 4, 1.0).unwrap().value, 60.0) < 1e-7);
    for &t in &[0.5, 1.0, 2.0, 4.0, 8.0] {
        let m = spatial_moment(&f, 0, t).unwrap();
        assert!(rel_err(m.value, 1.0) < 1e-7);
        assert!(m.quadrature_error >= 0.0);
    }
}

#[test]
fn second_moment_grows_linearly() {
    let (nu, q) = (0.6, 2.5);
    let f = gaussian(nu, q);
    let ts: Vec<f64> = (1..=8).map(f64::from).collect();
    let m2: Vec<f64> = ts.iter().map(|&t| spatial_moment(&f, 2, t).unwrap().value).collect();
    let tbar = ts.iter().sum::<f64>() / 8.0;
    let mbar = m2.iter().sum::<f64>() / 8.0;
    let slope = ts.iter().zip(&m2).map(|(t, m)| (t - tbar) * (m - mbar)).sum::<f64>()
        / ts.iter().map(|t| (t - tbar).powi(2)).sum::<f64>();
    assert!(rel_err(slope, 6.0 * nu * q) < 0.005);
    for (&t, &m) in ts.iter().zip(&m2) {
        let m0 = spatial_moment(&f, 0, t).unwrap().value;
        assert!(rel_err((m / m0).sqrt(), (6.0 * nu * t).sqrt()) < 0.005);
    }
    for &k in &[2u32, 4] {
        let base = spatial_moment(&f, k, 1.0).unwrap().value;
        for &t in &[0.5f64, 3.0, 9.0] {
            let scaled = spatial_moment(&f, k, t).unwrap().value / t.powf(k as f64 / 2.0);
            assert!(rel_err(scaled, base) < 0.005);
        }
    }
}

#[test]
fn energy_of_gaussian() {
    let (nu, q) = (1.0, 1.0);
    let f = gaussian(nu, q);
    let e1 = energy(&f, 1.0).unwrap().value;
    assert!(rel_err(e1, (8.0 * PI).powf(-1.5)) < 1e-6);
    assert!((e1 - 0.007_936_5).abs() < 1e-6);
    assert!(rel_err(energy(&f, 2.0).unwrap().value / e1, 2f64.powf(-1.5)) < 1e-6);
    let mut prev = f64::INFINITY;
    for i in 1..=16 {
        let t = 0.5 * i as f64;
        let e = energy(&f, t).unwrap().value;
        assert!(rel_err(e, q * q * (8.0 * PI * nu * t).powf(-1.5)) < 1e-6);
        assert!(e < prev);
        prev = e;
    }
}

#[test]
fn energy_dissipation_identity() {
    let nu = 0.8;
    let f = gaussian(nu, 1.3);
    for &t in &[0.5, 2.0, 6.0] {
        let h = 1e-4 * t;
        let de_dt = (energy(&f, t + h).unwrap().value - energy(&f, t - h).unwrap().value) / (2.0 * h);
        let dissipation = -2.0 * nu * gradient_energy(&f, t).unwrap().value;
        assert!(rel_err(de_dt, dissipation) < 0.01);
    }
}

#[test]
fn diffusion_sensitivity_closed_form() {
    let family = |p: &FieldParams| Ok(Field::Gaussian(p.clone()));
    let s = boundary_sensitivity(family, &FieldParams::new(1.0, 1.0, 3).unwrap(), &EPS10, 4.0, SensitivityParam::Nu).unwrap();
    assert!((s - 0.6492).abs() < 1e-4);
    for &nu in &[0.5, 1.0, 2.0] {
        let p = FieldParams::new(nu, 1.0, 3).unwrap();
        let d = d_star(&Field::Gaussian(p.clone()), &EPS10, 4.0);
        let s = boundary_sensitivity(family, &p, &EPS10, 4.0, SensitivityParam::Nu).unwrap();
        assert!(rel_err(s, d / (2.0 * nu)) < 1e-5);
        assert!(rel_err(nu / d * s, 0.5) < 1e-5);
    }
    let quad = d_star(&gaussian(4.0, 1.0), &EPS10, 4.0);
    assert!(rel_err(quad, 2.0 * d_star(&gaussian(1.0, 1.0), &EPS10, 4.0)) < 1e-10);
}

#[test]
fn relative_boundary_ignores_source_strength() {
    let family = |p: &FieldParams| Ok(Field::Gaussian(p.clone()));
    let s = boundary_sensitivity(family, &FieldParams::new(1.0, 1.0, 3).unwrap(), &EPS10, 4.0, SensitivityParam::Q).unwrap();
    assert!(s.abs() < 1e-6);
}

// (E[τ + ηb] − E[τ]) / η − ∫ (δE/δτ) b dx = η ∫ b² dx on the grid, so the
// gap halves with η.
#[test]
fn energy_first_variation_converges_at_first_order() {
    let f = gaussian(1.0, 1.0);
    let grid = RadialGrid::sample(&f, 1.0, 10.0, 1001).unwrap();
    let h = grid.r[1] - grid.r[0];
    let w: Vec<f64> = grid
        .r
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let simpson_w = if i == 0 || i == grid.r.len() - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            simpson_w * h / 3.0 * 4.0 * PI * r * r
        })
        .collect();
    let bump: Vec<f64> = grid.r.iter().map(|&r| (-(r - 1.5) * (r - 1.5) / 0.1).exp()).collect();
    let e = |eta: f64| -> f64 {
        grid.tau.iter().zip(&bump).zip(&w).map(|((t, b), wi)| wi * (t + eta * b).powi(2)).sum()
    };
    let predicted: f64 = (0..grid.r.len())
        .map(|i| w[i] * functional_derivative(FunctionalKind::Energy, &grid, i, None).unwrap() * bump[i])
        .sum();
    let gaps: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eta| ((e(eta) - e(0.0)) / eta - predicted).abs())
        .collect();
    for pair in gaps.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }
}

#[test]
fn no_boundary_is_a_value() {
    let f = Field::Constant { level: 1.0, dim: 3 };
    for spec in [EPS10, BoundarySpec::DecayToFraction { fraction: 0.5 }] {
        assert_eq!(boundary_radius(&f, &spec, 1.0).unwrap(), None);
    }
    let level = Field::Constant { level: 1.0, dim: 3 };
    assert_eq!(boundary_radius(&level, &BoundarySpec::Absolute { tau_min: 0.5 }, 1.0).unwrap(), None);
    let g = gaussian(1.0, 1.0);
    assert!(g.value(0.0, 1.0).unwrap() > 0.0);
}
