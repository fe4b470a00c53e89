use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ols::Z95;
use crate::error::{domain, Error, Result};

/// Minimum sample size for the local regression.
pub const MIN_NONPAR_OBS: usize = 50;
/// Kernel weights are dropped beyond this many bandwidths.
const KERNEL_REACH: f64 = 5.0;
/// Cross-validation searches bandwidths from CV_LOW to CV_HIGH times the rule of thumb.
const CV_LOW: f64 = 0.5;
const CV_HIGH: f64 = 16.0;

/// Link between the local linear predictor and the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// m(x) ≈ a + b(x − x₀); exact for affine mean functions.
    #[default]
    Identity,
    /// m(x) ≈ exp(a + b(x − x₀)); exact for exponential mean functions.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// 1.06·σ_d·n^{−1/5}.
    RuleOfThumb,
    /// Rule of thumb refined by leave-one-bin-out cross-validation over ten
    /// log-spaced multiples between ½ and 16.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherOptions {
    pub bandwidth: Bandwidth,
    pub link: Link,
    pub grid_points: usize,
    /// Observations are pre-aggregated into this many equal-width bins.
    pub n_bins: usize,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Auto,
            link: Link::Identity,
            grid_points: 401,
            n_bins: 400,
        }
    }
}

/// Binned sufficient statistics: mean distance, mean outcome, count and
/// within-bin variance of each non-empty bin.
#[derive(Debug, Clone, Default)]
struct Bins {
    x: Vec<f64>,
    ybar: Vec<f64>,
    n: Vec<f64>,
    s2: Vec<f64>,
}

struct BinLayout {
    lo: f64,
    width: f64,
    count: usize,
}

impl BinLayout {
    fn index(&self, d: f64) -> usize {
        (((d - self.lo) / self.width) as usize).min(self.count - 1)
    }

    fn bin<'a>(&self, points: impl Iterator<Item = &'a (f64, f64)>) -> Bins {
        let mut sx = vec![0.0; self.count];
        let mut sy = vec![0.0; self.count];
        let mut syy = vec![0.0; self.count];
        let mut cnt = vec![0.0; self.count];
        for &(d, y) in points {
            let k = self.index(d);
            sx[k] += d;
            sy[k] += y;
            syy[k] += y * y;
            cnt[k] += 1.0;
        }
        let mut b = Bins::default();
        let mut pooled_ss = 0.0;
        let mut pooled_df = 0.0;
        for k in 0..self.count {
            if cnt[k] > 0.0 {
                let m = sy[k] / cnt[k];
                b.x.push(sx[k] / cnt[k]);
                b.ybar.push(m);
                b.n.push(cnt[k]);
                let ss = (syy[k] - cnt[k] * m * m).max(0.0);
                b.s2.push(if cnt[k] > 1.0 { ss / (cnt[k] - 1.0) } else { f64::NAN });
                pooled_ss += ss;
                pooled_df += cnt[k] - 1.0;
            }
        }
        let pooled = if pooled_df > 0.0 { pooled_ss / pooled_df } else { 0.0 };
        for s in b.s2.iter_mut() {
            if s.is_nan() {
                *s = pooled;
            }
        }
        b
    }
}

/// Local regression fit on an even distance grid.
#[derive(Debug, Clone, Serialize)]
pub struct NonparFit {
    pub grid: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub bandwidth: f64,
    pub link: Link,
    /// Set by [`NonparFit::record`] after [`detect_boundary`].
    pub boundary: Option<f64>,
    pub reject_null: bool,
    #[serde(skip)]
    data: Vec<(f64, f64)>,
    #[serde(skip)]
    bins: Bins,
    #[serde(skip)]
    bin_lo: f64,
    #[serde(skip)]
    bin_width: f64,
    #[serde(skip)]
    n_bins: usize,
}

impl NonparFit {
    pub fn record(&mut self, det: &BoundaryDetection) {
        self.boundary = det.boundary;
        self.reject_null = det.reject_null;
    }

    /// Fitted mean and slope at an arbitrary distance.
    pub fn evaluate(&self, x: f64) -> Result<(f64, f64)> {
        let lf = local_fit(&self.bins, x, self.bandwidth, self.link, None, false)?;
        Ok((lf.value, lf.slope))
    }

    fn layout(&self) -> BinLayout {
        BinLayout {
            lo: self.bin_lo,
            width: self.bin_width,
            count: self.n_bins,
        }
    }
}

struct LocalFit {
    value: f64,
    slope: f64,
    /// Parameters on the link scale, for warm starts.
    theta: (f64, f64),
    /// Sensitivity of `value` to each bin mean, as (bin index, weight).
    influence: Vec<(usize, f64)>,
}

fn kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

fn window(bins: &Bins, x0: f64, h: f64) -> (usize, usize) {
    let lo = bins.x.partition_point(|&x| x < x0 - KERNEL_REACH * h);
    let hi = bins.x.partition_point(|&x| x <= x0 + KERNEL_REACH * h);
    (lo, hi)
}

fn local_fit(bins: &Bins, x0: f64, h: f64, link: Link, start: Option<(f64, f64)>, influence: bool) -> Result<LocalFit> {
    local_fit_excluding(bins, x0, h, link, start, influence, None)
}

fn local_fit_excluding(
    bins: &Bins,
    x0: f64,
    h: f64,
    link: Link,
    start: Option<(f64, f64)>,
    influence: bool,
    skip: Option<usize>,
) -> Result<LocalFit> {
    let (lo, hi) = window(bins, x0, h);
    let idx: Vec<usize> = (lo..hi).filter(|&j| Some(j) != skip).collect();
    let w: Vec<f64> = idx.iter().map(|&j| kernel((bins.x[j] - x0) / h) * bins.n[j]).collect();
    let u: Vec<f64> = idx.iter().map(|&j| bins.x[j] - x0).collect();
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &j) in idx.iter().enumerate() {
        s0 += w[k];
        s1 += w[k] * u[k];
        s2 += w[k] * u[k] * u[k];
        t0 += w[k] * bins.ybar[j];
        t1 += w[k] * u[k] * bins.ybar[j];
    }
    let det = s0 * s2 - s1 * s1;
    if !(s0 > 0.0) || det <= 1e-12 * s0 * s2 {
        return Err(Error::Numerical {
            what: "local regression",
            diagnostics: format!("fewer than two distinct distances within reach of x = {x0} (bandwidth {h})"),
        });
    }
    let a = (s2 * t0 - s1 * t1) / det;
    let b = (s0 * t1 - s1 * t0) / det;
    let identity = |influence: bool| LocalFit {
        value: a,
        slope: b,
        theta: (a, b),
        influence: if influence {
            idx.iter()
                .enumerate()
                .map(|(k, &j)| (j, w[k] * (s2 - s1 * u[k]) / det))
                .collect()
        } else {
            Vec::new()
        },
    };
    match link {
        Link::Identity => Ok(identity(influence)),
        Link::Log => {
            if !(t0 > 0.0) {
                // Locally non-positive mean: the log link is undefined here.
                return Ok(LocalFit {
                    theta: (f64::NAN, f64::NAN),
                    ..identity(influence)
                });
            }
            let (mut la, mut lb) = start.filter(|s| s.0.is_finite() && s.1.is_finite()).unwrap_or_else(|| {
                let m = a.max(1e-3 * t0 / s0);
                (m.ln(), b / m)
            });
            let obj = |la: f64, lb: f64| -> f64 {
                idx.iter()
                    .enumerate()
                    .map(|(k, &j)| {
                        let r = bins.ybar[j] - (la + lb * u[k]).exp();
                        w[k] * r * r
                    })
                    .sum()
            };
            let mut f = obj(la, lb);
            if !f.is_finite() {
                let m = a.max(1e-3 * t0 / s0);
                la = m.ln();
                lb = b / m;
                f = obj(la, lb);
            }
            for _ in 0..60 {
                let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (k, &j) in idx.iter().enumerate() {
                    let mu = (la + lb * u[k]).exp();
                    let r = bins.ybar[j] - mu;
                    let wm = w[k] * mu;
                    h00 += wm * mu;
                    h01 += wm * mu * u[k];
                    h11 += wm * mu * u[k] * u[k];
                    g0 += wm * r;
                    g1 += wm * r * u[k];
                }
                let dh = h00 * h11 - h01 * h01;
                if !(dh > 0.0) {
                    break;
                }
                let da = (h11 * g0 - h01 * g1) / dh;
                let db = (h00 * g1 - h01 * g0) / dh;
                let mut step = 1.0;
                let mut accepted = false;
                while step > 1e-6 {
                    let (na, nb) = (la + step * da, lb + step * db);
                    let nf = obj(na, nb);
                    if nf.is_finite() && nf <= f {
                        la = na;
                        lb = nb;
                        f = nf;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted || (step * da).abs() < 1e-9 && (step * db * h).abs() < 1e-9 {
                    break;
                }
            }
            let m0 = la.exp();
            let mut infl = Vec::new();
            if influence {
                let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
                let mus: Vec<f64> = u.iter().map(|&uk| (la + lb * uk).exp()).collect();
                for k in 0..idx.len() {
                    let wm = w[k] * mus[k] * mus[k];
                    h00 += wm;
                    h01 += wm * u[k];
                    h11 += wm * u[k] * u[k];
                }
                let dh = h00 * h11 - h01 * h01;
                infl = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| (j, m0 * w[k] * mus[k] * (h11 - h01 * u[k]) / dh))
                    .collect();
            }
            Ok(LocalFit {
                value: m0,
                slope: m0 * lb,
                theta: (la, lb),
                influence: infl,
            })
        }
    }
}

/// Fits along a sorted set of points, warm-starting each from its neighbour.
fn fit_along(bins: &Bins, xs: &[f64], h: f64, link: Link) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.len());
    let mut start = None;
    for &x in xs {
        let lf = local_fit(bins, x, h, link, start, false)?;
        start = Some(lf.theta);
        out.push(lf.value);
    }
    Ok(out)
}

fn cv_score(bins: &Bins, h: f64, link: Link) -> f64 {
    let mut score = 0.0;
    let mut start = None;
    for j in 0..bins.x.len() {
        match local_fit_excluding(bins, bins.x[j], h, link, start, false, Some(j)) {
            Ok(lf) => {
                start = Some(lf.theta);
                let e = bins.ybar[j] - lf.value;
                score += bins.n[j] * e * e;
            }
            Err(_) => return f64::INFINITY,
        }
    }
    score
}

fn rule_of_thumb(data: &[(f64, f64)]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().map(|p| p.0).sum::<f64>() / n;
    let var = data.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Local regression of outcome on distance, evaluated on an even grid
/// spanning the observed distances.
pub fn nonparametric_fit(data: &[(f64, f64)], opts: &SmootherOptions) -> Result<NonparFit> {
    if data.len() < MIN_NONPAR_OBS {
        return Err(Error::InsufficientData(format!(
            "nonparametric fit needs n >= {MIN_NONPAR_OBS}, got {}",
            data.len()
        )));
    }
    if opts.grid_points < 2 || opts.n_bins < 1 {
        return Err(domain("grid_points must be >= 2 and n_bins >= 1"));
    }
    for (i, &(d, y)) in data.iter().enumerate() {
        if !(d >= 0.0 && d.is_finite() && y.is_finite()) {
            return Err(domain(format!("observation {i}: need finite distance >= 0 and finite outcome, got ({d}, {y})")));
        }
    }
    let lo = data.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = data.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::RankDeficient("distances have zero range".into()));
    }
    let layout = BinLayout {
        lo,
        width: (hi - lo) / opts.n_bins as f64,
        count: opts.n_bins,
    };
    let bins = layout.bin(data.iter());
    let h = match opts.bandwidth {
        Bandwidth::Fixed(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(domain(format!("bandwidth must be positive, got {h}")));
            }
            h
        }
        Bandwidth::RuleOfThumb => rule_of_thumb(data),
        Bandwidth::Auto => {
            let base = rule_of_thumb(data);
            let candidates: Vec<f64> = (0..10)
                .map(|k| base * (CV_LOW.ln() + (CV_HIGH / CV_LOW).ln() * k as f64 / 9.0).exp())
                .collect();
            let scores: Vec<f64> = candidates.iter().map(|&h| cv_score(&bins, h, opts.link)).collect();
            let best = (0..10)
                .filter(|&k| scores[k].is_finite())
                .min_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            match best {
                Some(k) => candidates[k],
                None => base,
            }
        }
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(domain(format!("bandwidth must be positive, got {h}")));
    }
    let m = opts.grid_points;
    let grid: Vec<f64> = (0..m)
        .map(|k| if k + 1 == m { hi } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 })
        .collect();
    let m_hat = fit_along(&bins, &grid, h, opts.link)?;
    Ok(NonparFit {
        grid,
        m_hat,
        bandwidth: h,
        link: opts.link,
        boundary: None,
        reject_null: false,
        data: data.to_vec(),
        bins,
        bin_lo: layout.lo,
        bin_width: layout.width,
        n_bins: layout.count,
    })
}

/// How the boundary crossing was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingMode {
    /// First point where m̂(d) ≤ p·m̂(0).
    FromSource,
    /// Interior peak: first point beyond the peak where the excess over the
    /// far-field level m̂(d_max) falls to p times its peak value.
    FromPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDetection {
    pub boundary: Option<f64>,
    /// Ungated crossing, reported even when the gate does not reject.
    pub candidate: Option<f64>,
    pub mode: Option<CrossingMode>,
    pub ci: Option<(f64, f64)>,
    pub se: Option<f64>,
    /// H₀: m(0) − m(d_max) ≤ 0 rejected by the bootstrap.
    pub reject_null: bool,
    pub gate_p_value: f64,
}

fn crossing(grid: &[f64], m: &[f64], from: usize, level: f64) -> Option<f64> {
    for k in from + 1..grid.len() {
        if m[k] <= level {
            let (x0, x1, m0, m1) = (grid[k - 1], grid[k], m[k - 1], m[k]);
            let frac = if m0 > m1 { ((m0 - level) / (m0 - m1)).clamp(0.0, 1.0) } else { 1.0 };
            return Some(x0 + frac * (x1 - x0));
        }
    }
    None
}

fn candidate(fit: &NonparFit, p: f64) -> Option<(f64, CrossingMode, usize)> {
    let m = &fit.m_hat;
    let g = &fit.grid;
    if m[0] > 0.0 {
        if let Some(d) = crossing(g, m, 0, p * m[0]) {
            return Some((d, CrossingMode::FromSource, 0));
        }
    }
    let (kp, &peak) = m
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let last = m.len() - 1;
    if kp == last || g[kp] - g[0] <= fit.bandwidth || !(peak > m[last]) {
        return None;
    }
    let level = m[last] + p * (peak - m[last]);
    crossing(g, m, kp, level).map(|d| (d, CrossingMode::FromPeak, kp))
}

/// Boundary detection with a bootstrap false-positive gate.
///
/// The candidate crossing is reported as the boundary only when the paired
/// bootstrap (resample observations, rebin, refit at the grid ends with the
/// same bandwidth) rejects H₀: m(0) − m(d_max) ≤ 0 at `alpha_level`. The
/// gate refits with the identity link whatever the fit's link, so each
/// resample's statistic is linear in the bin means. The
/// interval is d̂ ± 1.96·se with se from the linearisation of the crossing
/// condition in the bin means.
pub fn detect_boundary(fit: &NonparFit, p: f64, n_boot: usize, alpha_level: f64, seed: u64) -> Result<BoundaryDetection> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("fraction p must lie in (0, 1), got {p}")));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(domain(format!("alpha_level must lie in (0, 1), got {alpha_level}")));
    }
    if n_boot == 0 {
        return Err(domain("n_boot must be positive"));
    }
    let gate_p_value = gate(fit, n_boot, seed)?;
    let reject_null = gate_p_value < alpha_level;
    let cand = candidate(fit, p);
    let max_d = *fit.grid.last().expect("grid is non-empty");
    let mut det = BoundaryDetection {
        boundary: None,
        candidate: cand.map(|c| c.0),
        mode: cand.map(|c| c.1),
        ci: None,
        se: None,
        reject_null,
        gate_p_value,
    };
    if let (true, Some((d, mode, kp))) = (reject_null, cand) {
        if d <= max_d {
            det.boundary = Some(d);
            if let Some(se) = crossing_se(fit, d, p, mode, kp) {
                det.se = Some(se);
                det.ci = Some((d - Z95 * se, d + Z95 * se));
            }
        }
    }
    Ok(det)
}

fn gate(fit: &NonparFit, n_boot: usize, seed: u64) -> Result<f64> {
    let x0 = fit.grid[0];
    let x1 = *fit.grid.last().expect("grid is non-empty");
    let layout = fit.layout();
    let h = fit.bandwidth;
    let n = fit.data.len();
    let below: usize = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let draws = (0..n).map(|_| &fit.data[rng.gen_range(0..n)]);
            let bins = layout.bin(draws);
            let m0 = local_fit(&bins, x0, h, Link::Identity, None, false);
            let m1 = local_fit(&bins, x1, h, Link::Identity, None, false);
            match (m0, m1) {
                (Ok(a), Ok(b)) if a.value - b.value > 0.0 => 0,
                _ => 1,
            }
        })
        .sum();
    Ok(below as f64 / n_boot as f64)
}

fn crossing_se(fit: &NonparFit, d: f64, p: f64, mode: CrossingMode, kp: usize) -> Option<f64> {
    let h = fit.bandwidth;
    let at = |x: f64| local_fit(&fit.bins, x, h, fit.link, None, true).ok();
    let fd = at(d)?;
    if !(fd.slope < 0.0) {
        return None;
    }
    let mut coef = vec![0.0; fit.bins.x.len()];
    for &(j, l) in &fd.influence {
        coef[j] += l;
    }
    let refs: Vec<(f64, f64)> = match mode {
        CrossingMode::FromSource => vec![(fit.grid[0], p)],
        CrossingMode::FromPeak => vec![(*fit.grid.last()?, 1.0 - p), (fit.grid[kp], p)],
    };
    for (x, c) in refs {
        for &(j, l) in &at(x)?.influence {
            coef[j] -= c * l;
        }
    }
    let var: f64 = coef
        .iter()
        .zip(fit.bins.s2.iter().zip(&fit.bins.n))
        .map(|(c, (s2, n))| c * c * s2 / n)
        .sum();
    let se = var.sqrt() / fd.slope.abs();
    se.is_finite().then_some(se)
}
