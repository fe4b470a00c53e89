use std::f64::consts::LN_10;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{domain, Error, Result};

/// z quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Log-linear decay fit, log(outcome) = α − κ_s·d + ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay rate per unit distance, positive for decay.
    pub kappa_s: f64,
    pub intercept: f64,
    pub se_classical: f64,
    /// Bartlett-kernel HAC standard error over distance pairs; the
    /// heteroskedasticity-robust SE when no cutoff is given.
    pub se_spatial: f64,
    pub r_squared: f64,
    pub n: usize,
    pub d_star: Option<f64>,
    pub d_star_ci: Option<(f64, f64)>,
    pub robust_cutoff: Option<f64>,
}

impl DecayFit {
    /// Standard error used for inference: spatial with a cutoff, classical otherwise.
    pub fn se(&self) -> f64 {
        if self.robust_cutoff.is_some() {
            self.se_spatial
        } else {
            self.se_classical
        }
    }

    pub fn t_stat(&self) -> f64 {
        self.kappa_s / self.se()
    }

    /// One-sided p-value for H₁: κ_s > 0.
    pub fn p_decay(&self) -> f64 {
        1.0 - self.t_cdf(self.t_stat())
    }

    /// One-sided p-value for H₁: κ_s < 0.
    pub fn p_rise(&self) -> f64 {
        self.t_cdf(self.t_stat())
    }

    fn t_cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return 0.5;
        }
        let df = (self.n.saturating_sub(2)).max(1) as f64;
        StudentsT::new(0.0, 1.0, df).map(|t| t.cdf(x)).unwrap_or(0.5)
    }
}

/// Boundary implied by a decay rate at the 10% threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub d_star: f64,
    pub ci: (f64, f64),
    pub half_width: f64,
}

/// d* = ln(10)/κ_s with the delta-method interval d* ± 1.96·ln(10)·se/κ_s².
pub fn boundary_from_fit(kappa_s: f64, se: f64) -> Result<BoundaryEstimate> {
    if !(kappa_s > 0.0 && kappa_s.is_finite()) {
        return Err(domain(format!("no decay boundary for kappa_s = {kappa_s}")));
    }
    if !(se >= 0.0 && se.is_finite()) {
        return Err(domain(format!("standard error must be finite and >= 0, got {se}")));
    }
    let d_star = LN_10 / kappa_s;
    let half_width = Z95 * LN_10 * se / (kappa_s * kappa_s);
    Ok(BoundaryEstimate {
        d_star,
        ci: (d_star - half_width, d_star + half_width),
        half_width,
    })
}

/// OLS of log(outcome) on distance.
///
/// `robust_cutoff` sets the Bartlett bandwidth for the spatial SE; pairs are
/// weighted by 1 − |dᵢ − dⱼ|/c. Inference (d* interval, p-values) uses the
/// spatial SE when a cutoff is given and the classical SE otherwise.
pub fn fit_loglinear(data: &[(f64, f64)], robust_cutoff: Option<f64>) -> Result<DecayFit> {
    let n = data.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("log-linear fit needs n >= 3, got {n}")));
    }
    if let Some(c) = robust_cutoff {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(domain(format!("robust cutoff must be finite and >= 0, got {c}")));
        }
    }
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, &(dist, out)) in data.iter().enumerate() {
        if !(dist >= 0.0 && dist.is_finite()) {
            return Err(domain(format!("observation {i}: distance must be finite and >= 0, got {dist}")));
        }
        if !(out > 0.0 && out.is_finite()) {
            return Err(domain(format!("observation {i}: outcome must be positive for the log transform, got {out}")));
        }
        d.push(dist);
        y.push(out.ln());
    }
    let nf = n as f64;
    let dbar = d.iter().sum::<f64>() / nf;
    let ybar = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&di, &yi) in d.iter().zip(&y) {
        sxx += (di - dbar) * (di - dbar);
        sxy += (di - dbar) * (yi - ybar);
        syy += (yi - ybar) * (yi - ybar);
    }
    if sxx <= 1e-12 * dbar.abs().max(1.0).powi(2) * nf {
        return Err(Error::RankDeficient("distances have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * dbar;
    let resid: Vec<f64> = d.iter().zip(&y).map(|(&di, &yi)| yi - intercept - slope * di).collect();
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    let se_classical = (rss / (nf - 2.0) / sxx).sqrt();
    let scores: Vec<f64> = d.iter().zip(&resid).map(|(&di, &e)| (di - dbar) * e).collect();
    let meat = bartlett_meat(&d, &scores, robust_cutoff.unwrap_or(0.0));
    let se_spatial = meat.max(0.0).sqrt() / sxx;

    let mut fit = DecayFit {
        kappa_s: -slope,
        intercept,
        se_classical,
        se_spatial,
        r_squared,
        n,
        d_star: None,
        d_star_ci: None,
        robust_cutoff,
    };
    if let Ok(b) = boundary_from_fit(fit.kappa_s, fit.se()) {
        fit.d_star = Some(b.d_star);
        fit.d_star_ci = Some(b.ci);
    }
    Ok(fit)
}

/// Σᵢ Σⱼ K(|dᵢ − dⱼ|) sᵢ sⱼ with the Bartlett weight K(u) = (1 − u/c)₊.
///
/// Sorted prefix sums of s and d·s give each window sum in O(1), so the
/// whole accumulation is O(n log n). Own-observation terms are added
/// separately so a cutoff below the smallest gap reproduces Σ sᵢ² exactly.
pub(crate) fn bartlett_meat(d: &[f64], s: &[f64], cutoff: f64) -> f64 {
    let own: f64 = s.iter().map(|v| v * v).sum();
    if cutoff <= 0.0 {
        return own;
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let ds: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
    let ss: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
    let n = ds.len();
    let mut ps = vec![0.0; n + 1];
    let mut pds = vec![0.0; n + 1];
    for k in 0..n {
        ps[k + 1] = ps[k] + ss[k];
        pds[k + 1] = pds[k] + ds[k] * ss[k];
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut cross = 0.0;
    for i in 0..n {
        let di = ds[i];
        while ds[lo] <= di - cutoff {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && ds[hi + 1] < di + cutoff {
            hi += 1;
        }
        // j in [lo, i): weight 1 − (dᵢ − dⱼ)/c
        let left = (1.0 - di / cutoff) * (ps[i] - ps[lo]) + (pds[i] - pds[lo]) / cutoff;
        // j in (i, hi]: weight 1 − (dⱼ − dᵢ)/c
        let right = (1.0 + di / cutoff) * (ps[hi + 1] - ps[i + 1]) - (pds[hi + 1] - pds[i + 1]) / cutoff;
        cross += ss[i] * (left + right);
    }
    own + cross
}

/// Percentile bootstrap interval for d*, resampling observations and refitting.
///
/// Resamples with κ̂_s ≤ 0 have no boundary and are dropped; `None` when
/// fewer than half of the resamples produce one.
pub fn bootstrap_d_star_ci(data: &[(f64, f64)], n_boot: usize, seed: u64) -> Result<Option<(f64, f64)>> {
    if n_boot < 10 {
        return Err(domain(format!("bootstrap needs at least 10 resamples, got {n_boot}")));
    }
    fit_loglinear(data, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![(0.0, 0.0); data.len()];
    let mut stars = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for slot in sample.iter_mut() {
            *slot = data[rng.gen_range(0..data.len())];
        }
        if let Ok(f) = fit_loglinear(&sample, None) {
            if let Some(d) = f.d_star {
                stars.push(d);
            }
        }
    }
    if stars.len() * 2 < n_boot {
        return Ok(None);
    }
    stars.sort_by(f64::total_cmp);
    Ok(Some((quantile_sorted(&stars, 0.025), quantile_sorted(&stars, 0.975))))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
