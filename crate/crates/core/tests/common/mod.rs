#![allow(dead_code)]

/// Composite Simpson rule with `n` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Simpson on a geometric grid for ∫ₐᵇ f over many decades: substitutes x = eᵘ.
pub fn simpson_log<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    simpson(|u| {
        let x = u.exp();
        f(x) * x
    }, a.ln(), b.ln(), n)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Tanh-sinh rule on (0, 1). `f` receives (u, 1 − u), each computed without
/// cancellation, so algebraic endpoint singularities integrate to near machine
/// precision.
pub fn tanh_sinh_unit<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
    let h = 1.0 / 128.0;
    let mut sum = 0.0;
    let n = (6.5 / h) as i64;
    for k in -n..=n {
        let t = k as f64 * h;
        let s = std::f64::consts::PI * t.sinh();
        let u = 1.0 / (1.0 + (-s).exp());
        let v = 1.0 / (1.0 + s.exp());
        let w = std::f64::consts::PI * t.cosh() * u * v;
        if w == 0.0 || u == 0.0 || v == 0.0 {
            continue;
        }
        sum += f(u, v) * w;
    }
    sum * h
}
