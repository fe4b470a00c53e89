//! Real-argument special functions: Γ, Pochhammer symbols, Kummer's M,
//! and the modified Bessel functions I_ν, K₀, K₁.
//!
//! Series are truncated once the next term drops below `1e-16` of the running
//! sum (capped at 500 terms). Every routine returning [`SpecFunResult`] also
//! reports a conservative absolute error estimate.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{domain, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082;

const SERIES_REL_STOP: f64 = 1e-16;
const SERIES_MAX_TERMS: usize = 500;
const KUMMER_SERIES_MAX_Z: f64 = 30.0;
/// K₀/K₁ switch from the power series to Steed's continued fraction here.
pub const BESSEL_K_SWITCH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecFunResult {
    pub value: f64,
    pub est_abs_error: f64,
}

impl SpecFunResult {
    fn new(value: f64, est_abs_error: f64) -> Self {
        Self {
            value,
            est_abs_error: est_abs_error.abs(),
        }
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument z - 1
    LANCZOS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS[0], |acc, (i, &c)| acc + c / (x + (i + 1) as f64))
}

/// ln Γ(z) for z > 0.
pub fn ln_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("ln_gamma requires z > 0, got {z}")));
    }
    if z < 0.5 {
        // Γ(z) = Γ(z + 1) / z keeps the Lanczos sum in its accurate range.
        return Ok(ln_gamma(z + 1.0)? - z.ln());
    }
    let x = z - 1.0;
    let t = x + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln())
}

/// Γ(z) for z > 0.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("gamma_fn requires z > 0, got {z}")));
    }
    if z < 0.5 {
        return Ok(gamma_fn(z + 1.0)? / z);
    }
    if z > 171.6 {
        return Ok(f64::INFINITY);
    }
    // Exact factorials for small integers.
    if z == z.trunc() && z <= 23.0 {
        return Ok((1..z as u64).fold(1.0, |acc, k| acc * k as f64));
    }
    let x = z - 1.0;
    let t = x + LANCZOS_G + 0.5;
    // Split the power to avoid overflow near the top of the range.
    let half = t.powf(0.5 * (x + 0.5));
    Ok((2.0 * PI).sqrt() * half * (half * (-t).exp()) * lanczos_sum(x))
}

/// 1/Γ(z) for any real z, zero at the poles.
fn recip_gamma(z: f64) -> f64 {
    if z > 0.0 {
        return gamma_fn(z).map(|g| 1.0 / g).unwrap_or(0.0);
    }
    if z == z.trunc() {
        return 0.0;
    }
    // Reflection: 1/Γ(z) = Γ(1 - z) sin(πz) / π
    let g = gamma_fn(1.0 - z).unwrap_or(f64::INFINITY);
    g * (PI * z).sin() / PI
}

/// Rising factorial (a)_n = a (a + 1) … (a + n − 1); 1 for n = 0.
pub fn pochhammer(a: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * (a + k as f64))
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.trunc()
}

/// Kummer's confluent hypergeometric function M(a, b, z) for z ≥ 0.
///
/// Power series up to z = 30; above that the optimally truncated large-z
/// expansion Γ(b)/Γ(a) eᶻ z^(a−b) Σ (b−a)_s (1−a)_s / (s! zˢ), falling back to
/// the series whenever the expansion cannot reach 1e-10 relative accuracy.
pub fn kummer_m(a: f64, b: f64, z: f64) -> Result<SpecFunResult> {
    if is_nonpositive_integer(b) {
        return Err(domain(format!("kummer_m: b = {b} is a non-positive integer")));
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(domain(format!("kummer_m requires finite z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(SpecFunResult::new(1.0, 0.0));
    }
    // A non-positive integer `a` truncates the series to a polynomial.
    if z > KUMMER_SERIES_MAX_Z && !is_nonpositive_integer(a) {
        if let Some(r) = kummer_large_z(a, b, z) {
            return Ok(r);
        }
    }
    Ok(kummer_series(a, b, z))
}

fn kummer_series(a: f64, b: f64, z: f64) -> SpecFunResult {
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut abs_sum = 1.0_f64;
    let mut converged = false;
    for n in 0..SERIES_MAX_TERMS {
        let nf = n as f64;
        term *= (a + nf) / (b + nf) * z / (nf + 1.0);
        sum += term;
        abs_sum += term.abs();
        if term == 0.0 || (term.abs() < SERIES_REL_STOP * sum.abs() && nf + 1.0 > z - a) {
            converged = true;
            break;
        }
    }
    let rounding = 4.0 * f64::EPSILON * abs_sum;
    let tail = if converged { term.abs() } else { term.abs() * z.max(1.0) * 1e3 };
    SpecFunResult::new(sum, rounding + tail)
}

fn kummer_large_z(a: f64, b: f64, z: f64) -> Option<SpecFunResult> {
    let prefactor = gamma_fn(b).ok()? * recip_gamma(a);
    if prefactor == 0.0 {
        return None;
    }
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut smallest = f64::INFINITY;
    for s in 0..SERIES_MAX_TERMS {
        let sf = s as f64;
        let next = term * (b - a + sf) * (1.0 - a + sf) / ((sf + 1.0) * z);
        if next.abs() >= term.abs() && s > 0 {
            break;
        }
        term = next;
        smallest = term.abs();
        sum += term;
        if term.abs() < SERIES_REL_STOP * sum.abs() {
            break;
        }
    }
    if smallest > 1e-10 * sum.abs() {
        return None;
    }
    let log_mag = z + (a - b) * z.ln();
    let value = prefactor * log_mag.exp() * sum;
    if !value.is_finite() {
        return None;
    }
    let err = value.abs() * (smallest / sum.abs() + 64.0 * f64::EPSILON * (1.0 + log_mag.abs()));
    Some(SpecFunResult::new(value, err))
}

/// Modified Bessel function of the first kind I_ν(z), ν ≥ 0, z ≥ 0, by its
/// defining power series.
pub fn bessel_i(nu: f64, z: f64) -> Result<SpecFunResult> {
    if !(nu >= 0.0) || !(z >= 0.0) || !z.is_finite() {
        return Err(domain(format!("bessel_i requires nu >= 0 and finite z >= 0, got nu={nu}, z={z}")));
    }
    if z == 0.0 {
        return Ok(SpecFunResult::new(if nu == 0.0 { 1.0 } else { 0.0 }, 0.0));
    }
    let half = 0.5 * z;
    let q = half * half;
    let mut term = (nu * half.ln() - ln_gamma(nu + 1.0)?).exp();
    let mut sum = term;
    let mut converged = false;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (nu + kf + 1.0));
        sum += term;
        if term < SERIES_REL_STOP * sum && kf + 1.0 > half {
            converged = true;
            break;
        }
    }
    let tail = if converged { term } else { term * 1e3 };
    Ok(SpecFunResult::new(sum, 4.0 * f64::EPSILON * sum * (1.0 + nu) + tail))
}

/// Power series for (K₀, K₁), accurate for small z.
fn bessel_k01_series(z: f64) -> (SpecFunResult, SpecFunResult) {
    let half = 0.5 * z;
    let q = half * half;
    let log_term = half.ln() + EULER_GAMMA;

    // K₀ = -(ln(z/2) + γ) I₀ + Σ H_k qᵏ/(k!)²
    // K₁ = 1/z + (ln(z/2) + γ) I₁ - (z/4) Σ (H_k + H_{k+1}) qᵏ/(k!(k+1)!)
    let mut i0 = 1.0;
    let mut i1 = half;
    let mut s0 = 0.0;
    let mut s1 = 1.0; // k = 0 term: H_0 + H_1 = 1
    let mut t0 = 1.0; // qᵏ/(k!)²
    let mut t1 = 1.0; // qᵏ/(k!(k+1)!)
    let mut harmonic = 0.0; // H_k
    let mut abs0 = log_term.abs();
    for k in 1..SERIES_MAX_TERMS {
        let kf = k as f64;
        t0 *= q / (kf * kf);
        t1 *= q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        i0 += t0;
        i1 += half * t1;
        s0 += harmonic * t0;
        s1 += (2.0 * harmonic + 1.0 / (kf + 1.0)) * t1;
        abs0 += (harmonic + log_term.abs()) * t0;
        if t0 * (harmonic + 1.0) < SERIES_REL_STOP * 1e-2 {
            break;
        }
    }
    let k0 = -log_term * i0 + s0;
    let k1 = 1.0 / z + log_term * i1 - 0.5 * half * s1;
    let e0 = 8.0 * f64::EPSILON * abs0;
    let e1 = 8.0 * f64::EPSILON * (1.0 / z + log_term.abs() * i1 + half * s1);
    (SpecFunResult::new(k0, e0), SpecFunResult::new(k1, e1))
}

/// Steed's continued fraction (Temme's CF2) for (K₀, K₁) at z ≥ 2.
fn bessel_k01_cf(z: f64) -> (SpecFunResult, SpecFunResult) {
    let mut b = 2.0 * (1.0 + z);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    let mut iterations = 0;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        iterations = i;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * z)).sqrt() * (-z).exp() / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    let rel = (iterations as f64 + 8.0) * f64::EPSILON;
    (SpecFunResult::new(k0, rel * k0), SpecFunResult::new(k1, rel * k1))
}

/// (K₀(z), K₁(z)) for z > 0.
pub fn bessel_k01(z: f64) -> Result<(SpecFunResult, SpecFunResult)> {
    if !(z > 0.0) {
        return Err(domain(format!("modified Bessel K requires z > 0, got {z}")));
    }
    if z.is_infinite() {
        let zero = SpecFunResult::new(0.0, 0.0);
        return Ok((zero, zero));
    }
    Ok(if z < BESSEL_K_SWITCH {
        bessel_k01_series(z)
    } else {
        bessel_k01_cf(z)
    })
}

/// Modified Bessel function of the second kind, order zero.
pub fn bessel_k0(z: f64) -> Result<SpecFunResult> {
    bessel_k01(z).map(|(k0, _)| k0)
}

/// Modified Bessel function of the second kind, order one (K₀′ = −K₁).
pub fn bessel_k1(z: f64) -> Result<SpecFunResult> {
    bessel_k01(z).map(|(_, k1)| k1)
}

#[doc(hidden)]
pub mod branches {
    //! Direct access to the two K evaluation regimes, for seam checks.
    use super::*;

    pub fn k01_series(z: f64) -> (SpecFunResult, SpecFunResult) {
        bessel_k01_series(z)
    }
    pub fn k01_continued_fraction(z: f64) -> (SpecFunResult, SpecFunResult) {
        bessel_k01_cf(z)
    }
    pub fn kummer_series(a: f64, b: f64, z: f64) -> SpecFunResult {
        super::kummer_series(a, b, z)
    }
    pub fn kummer_large_z(a: f64, b: f64, z: f64) -> Option<SpecFunResult> {
        super::kummer_large_z(a, b, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_identities() {
        assert_eq!(gamma_fn(1.0).unwrap(), 1.0);
        assert_eq!(gamma_fn(5.0).unwrap(), 24.0);
        assert_relative_eq!(gamma_fn(0.5).unwrap(), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma_fn(1.5).unwrap(), 0.5 * PI.sqrt(), max_relative = 1e-14);
        assert!(gamma_fn(0.0).is_err());
        assert!(gamma_fn(-1.5).is_err());
    }

    #[test]
    fn gamma_recurrence_on_range() {
        let mut z = 0.5;
        while z < 49.0 {
            let lhs = gamma_fn(z + 1.0).unwrap();
            let rhs = z * gamma_fn(z).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            assert_relative_eq!(ln_gamma(z).unwrap(), gamma_fn(z).unwrap().ln(), epsilon = 1e-12);
            z += 0.37;
        }
    }

    #[test]
    fn pochhammer_examples() {
        assert_eq!(pochhammer(3.0, 0), 1.0);
        assert_eq!(pochhammer(2.0, 3), 24.0);
        assert_eq!(pochhammer(0.5, 2), 0.75);
    }

    #[test]
    fn kummer_examples() {
        let m = kummer_m(1.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(m.value, 2f64.exp(), max_relative = 1e-14);
        assert_eq!(kummer_m(0.3, 2.5, 0.0).unwrap().value, 1.0);
        assert!(kummer_m(1.0, -2.0, 1.0).is_err());
        assert!(kummer_m(1.0, 0.0, 1.0).is_err());
        assert!(kummer_m(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn kummer_terminating_polynomial() {
        // M(-2, b, z) = 1 - 2z/b + z²/(b(b+1))
        let (b, z) = (1.5, 40.0);
        let exact = 1.0 - 2.0 * z / b + z * z / (b * (b + 1.0));
        assert_relative_eq!(kummer_m(-2.0, b, z).unwrap().value, exact, max_relative = 1e-13);
    }

    #[test]
    fn bessel_i_small_cases() {
        assert_eq!(bessel_i(0.0, 0.0).unwrap().value, 1.0);
        assert_eq!(bessel_i(1.0, 0.0).unwrap().value, 0.0);
        assert!(bessel_i(-1.0, 1.0).is_err());
    }

    #[test]
    fn k_domain() {
        assert!(bessel_k0(0.0).is_err());
        assert!(bessel_k0(-1.0).is_err());
    }

    #[test]
    fn wronskian_identity() {
        // I₀K₁ + I₁K₀ = 1/z couples both K regimes to the I series.
        for &z in &[0.01, 0.3, 1.0, 1.99, 2.0, 3.5, 10.0, 25.0] {
            let (k0, k1) = bessel_k01(z).unwrap();
            let i0 = bessel_i(0.0, z).unwrap().value;
            let i1 = bessel_i(1.0, z).unwrap().value;
            assert_relative_eq!(i0 * k1.value + i1 * k0.value, 1.0 / z, max_relative = 1e-12);
        }
    }
}
