use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ols::{fit_loglinear, DecayFit};
use crate::error::{domain, Error, Result};

/// Smallest count allowed in a diagnostic bin before bins are widened.
pub const MIN_BIN_COUNT: usize = 5;
/// Smallest side of a regional split.
pub const MIN_REGION_OBS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    FrameworkApplies,
    FrameworkWeak,
    FrameworkRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMean {
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub spearman_rho: f64,
    /// Two-sided, from z = ρ√(n − 1).
    pub spearman_p: f64,
    pub binned_means: Vec<BinnedMean>,
    /// (first bin mean − bin mean) / first bin mean.
    pub pct_decline_from_first_bin: Vec<f64>,
    pub decision: Decision,
    /// Log-linear fit on the observations with positive outcome.
    pub fit: Option<DecayFit>,
    pub bins_requested: usize,
    pub bins_used: usize,
    pub n_nonpositive_dropped: usize,
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn equal_width_bins(data: &[(f64, f64)], k: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let width = (hi - lo) / k as f64;
    let mut out = vec![Vec::new(); k];
    for &(d, y) in data {
        let i = if width > 0.0 { (((d - lo) / width) as usize).min(k - 1) } else { 0 };
        out[i].push(y);
    }
    out
}

/// Rank correlation, binned decline profile and the pooled-fit decision rule.
///
/// The decision uses a log-linear fit on the positive outcomes: applies when
/// κ̂_s > 0 is significant at 5% (one-sided) and R² > 0.10, weak when it is
/// significant with R² in [0.05, 0.10], rejected otherwise. When a bin would
/// hold fewer than five observations the bin count is reduced until none do.
pub fn diagnostics(data: &[(f64, f64)], n_bins: usize) -> Result<DiagnosticsReport> {
    if n_bins == 0 {
        return Err(domain("n_bins must be positive"));
    }
    if data.len() < MIN_BIN_COUNT {
        return Err(Error::InsufficientData(format!(
            "diagnostics needs at least {MIN_BIN_COUNT} observations, got {}",
            data.len()
        )));
    }
    for (i, &(d, y)) in data.iter().enumerate() {
        if !(d.is_finite() && y.is_finite()) {
            return Err(domain(format!("observation {i} is not finite")));
        }
    }
    let x: Vec<f64> = data.iter().map(|p| p.0).collect();
    let y: Vec<f64> = data.iter().map(|p| p.1).collect();
    let n = data.len();
    let rho = spearman(&x, &y);
    let z = rho * ((n - 1) as f64).sqrt();
    let spearman_p = 2.0 * (1.0 - Normal::new(0.0, 1.0).expect("standard normal").cdf(z.abs()));

    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut k = n_bins.min(n / MIN_BIN_COUNT).max(1);
    let groups = loop {
        let g = equal_width_bins(data, k, lo, hi);
        if k == 1 || g.iter().all(|b| b.len() >= MIN_BIN_COUNT) {
            break g;
        }
        k -= 1;
    };
    let width = (hi - lo) / k as f64;
    let binned_means: Vec<BinnedMean> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let c = g.len() as f64;
            let mean = g.iter().sum::<f64>() / c;
            let var = if g.len() > 1 { g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c - 1.0) } else { 0.0 };
            BinnedMean {
                lo: lo + width * i as f64,
                hi: if i + 1 == k { hi } else { lo + width * (i + 1) as f64 },
                mean,
                se: (var / c).sqrt(),
                count: g.len(),
            }
        })
        .collect();
    let first = binned_means[0].mean;
    let pct_decline_from_first_bin = binned_means.iter().map(|b| (first - b.mean) / first).collect();

    let positive: Vec<(f64, f64)> = data.iter().copied().filter(|p| p.1 > 0.0).collect();
    let fit = fit_loglinear(&positive, None).ok();
    let decision = match &fit {
        Some(f) if f.kappa_s > 0.0 && f.p_decay() < 0.05 => {
            if f.r_squared > 0.10 {
                Decision::FrameworkApplies
            } else if f.r_squared >= 0.05 {
                Decision::FrameworkWeak
            } else {
                Decision::FrameworkRejected
            }
        }
        _ => Decision::FrameworkRejected,
    };
    Ok(DiagnosticsReport {
        spearman_rho: rho,
        spearman_p,
        binned_means,
        pct_decline_from_first_bin,
        decision,
        fit,
        bins_requested: n_bins,
        bins_used: k,
        n_nonpositive_dropped: n - positive.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalReport {
    pub split_distance: f64,
    pub near: DecayFit,
    pub far: DecayFit,
    /// One-sided p for decay on the near side.
    pub p_near: f64,
    /// One-sided p for a rising profile on the far side.
    pub p_far: f64,
    pub sign_reversal: bool,
    pub n_nonpositive_dropped: usize,
}

/// Separate log-linear fits below and at-or-above `split_distance`, on the
/// observations with positive outcome.
///
/// Sign reversal requires significant decay near the source and a
/// significant rise beyond the split, both one-sided at 5%.
pub fn regional_heterogeneity(data: &[(f64, f64)], split_distance: f64, robust_cutoff: Option<f64>) -> Result<RegionalReport> {
    if !split_distance.is_finite() {
        return Err(domain(format!("split distance must be finite, got {split_distance}")));
    }
    let (near, far): (Vec<(f64, f64)>, Vec<(f64, f64)>) =
        data.iter().filter(|p| p.1 > 0.0).partition(|p| p.0 < split_distance);
    let n_nonpositive_dropped = data.len() - near.len() - far.len();
    for (name, side) in [("near", &near), ("far", &far)] {
        if side.len() < MIN_REGION_OBS {
            return Err(Error::InsufficientData(format!(
                "{name} side of split {split_distance} has {} observations, need {MIN_REGION_OBS}",
                side.len()
            )));
        }
    }
    let near = fit_loglinear(&near, robust_cutoff)?;
    let far = fit_loglinear(&far, robust_cutoff)?;
    let p_near = near.p_decay();
    let p_far = far.p_rise();
    Ok(RegionalReport {
        split_distance,
        sign_reversal: near.kappa_s > 0.0 && p_near < 0.05 && far.kappa_s < 0.0 && p_far < 0.05,
        near,
        far,
        p_near,
        p_far,
        n_nonpositive_dropped,
    })
}
