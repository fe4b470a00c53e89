//! Simulation harness: the four boundary-detection DGPs, campaigns comparing
//! parametric and nonparametric detection, and field-parameter recovery.

use std::f64::consts::LN_10;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{domain, Error, Result};
use crate::estimation::{
    detect_boundary, fit_field_nls, fit_loglinear, nonparametric_fit, quantile_sorted, Bandwidth, FieldObservation,
    Link, ProfileModel, SmootherOptions,
};
use crate::fields::{gaussian_field, FieldParams};

/// Outcome floor applied before the log transform in the parametric method.
pub const PARAMETRIC_FLOOR: f64 = 1e-6;
/// Boundary target for the hump DGP as tabulated; the hump formula with a
/// 10% excess rule gives 20 + √(200 ln 10) ≈ 41.46 instead.
pub const HUMP_TARGET: f64 = 38.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpId {
    /// 0.8 e^{−0.05d}
    StrongDecay,
    /// 0.6 e^{−0.005d}
    WeakDecay,
    /// 0.5 + 0.2 exp(−(d − 20)²/200)
    Hump,
    /// 0.5
    Flat,
}

impl DgpId {
    pub const ALL: [DgpId; 4] = [DgpId::StrongDecay, DgpId::WeakDecay, DgpId::Hump, DgpId::Flat];

    pub fn name(self) -> &'static str {
        match self {
            Self::StrongDecay => "strong_decay",
            Self::WeakDecay => "weak_decay",
            Self::Hump => "hump",
            Self::Flat => "flat",
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strong_decay" | "strong" | "1" | "dgp1" => Ok(Self::StrongDecay),
            "weak_decay" | "weak" | "2" | "dgp2" => Ok(Self::WeakDecay),
            "hump" | "3" | "dgp3" => Ok(Self::Hump),
            "flat" | "null" | "4" | "dgp4" => Ok(Self::Flat),
            _ => Err(domain(format!("unknown DGP `{s}` (expected strong_decay, weak_decay, hump or flat)"))),
        }
    }
}

/// How noise enters the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// mean + N(0, σ²), as in the published DGPs.
    #[default]
    Additive,
    /// mean · exp(N(0, σ²)); the log-linear model is then correctly specified
    /// for the exponential DGPs.
    LogNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: DgpId,
    pub noise_sd: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    /// Distances are drawn uniformly on (0, d_max].
    pub d_max: f64,
    pub true_boundary: Option<f64>,
}

impl DgpSpec {
    /// Noise levels as published; d_max = 600 for weak decay and 100 otherwise.
    pub fn standard(id: DgpId) -> Self {
        let (noise_sd, d_max, true_boundary) = match id {
            DgpId::StrongDecay => (0.1, 100.0, Some(LN_10 / 0.05)),
            DgpId::WeakDecay => (0.08, 600.0, Some(LN_10 / 0.005)),
            DgpId::Hump => (0.06, 100.0, Some(HUMP_TARGET)),
            DgpId::Flat => (0.05, 100.0, None),
        };
        Self {
            id,
            noise_sd,
            noise_kind: NoiseKind::Additive,
            d_max,
            true_boundary,
        }
    }

    pub fn with_noise(mut self, noise_sd: f64, kind: NoiseKind) -> Self {
        self.noise_sd = noise_sd;
        self.noise_kind = kind;
        self
    }

    pub fn mean(&self, d: f64) -> f64 {
        match self.id {
            DgpId::StrongDecay => 0.8 * (-0.05 * d).exp(),
            DgpId::WeakDecay => 0.6 * (-0.005 * d).exp(),
            DgpId::Hump => 0.5 + 0.2 * (-(d - 20.0).powi(2) / 200.0).exp(),
            DgpId::Flat => 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(domain(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd)));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(domain(format!("d_max must be positive, got {}", self.d_max)));
        }
        if self.true_boundary.is_none() != (self.id == DgpId::Flat) {
            return Err(domain("true_boundary must be absent exactly for the flat DGP"));
        }
        Ok(())
    }
}

/// n draws of (distance, outcome) with distance uniform on (0, d_max],
/// deterministic in `seed`.
pub fn generate_dgp(spec: &DgpSpec, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    if n == 0 {
        return Err(domain("n must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| domain(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let d = spec.d_max * (1.0 - rng.gen::<f64>());
            let e = noise.sample(&mut rng);
            let y = match spec.noise_kind {
                NoiseKind::Additive => spec.mean(d) + e,
                NoiseKind::LogNormal => spec.mean(d) * e.exp(),
            };
            (d, y)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Log-linear OLS on outcomes floored at 1e-6; d* = ln(10)/κ̂ whenever κ̂ > 0.
    Parametric,
    /// Log-link local regression with the bootstrap gate.
    Nonparametric,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Parametric => "parametric",
            Self::Nonparametric => "nonparametric",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parametric" => Ok(Self::Parametric),
            "nonparametric" => Ok(Self::Nonparametric),
            _ => Err(domain(format!("unknown method `{s}` (expected parametric or nonparametric)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub n_reps: usize,
    pub n_obs: usize,
    pub methods: Vec<Method>,
    pub base_seed: u64,
    /// Boundary threshold as a fraction of the source value.
    pub fraction: f64,
    pub n_boot: usize,
    pub alpha: f64,
    pub smoother: SmootherOptions,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n_reps: 500,
            n_obs: 5000,
            methods: vec![Method::Parametric, Method::Nonparametric],
            base_seed: 0,
            fraction: 0.1,
            n_boot: 200,
            alpha: 0.05,
            smoother: SmootherOptions {
                link: Link::Log,
                bandwidth: Bandwidth::Auto,
                ..SmootherOptions::default()
            },
        }
    }
}

/// One method applied to one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub dgp: DgpId,
    pub method: Method,
    pub replication: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// κ̂_s for the parametric method.
    pub kappa: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub dgp: DgpId,
    pub method: Method,
    pub true_boundary: Option<f64>,
    /// Mean error over replications that report a boundary.
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Population variance of the reported boundaries, so rmse² = bias² + variance.
    pub variance: Option<f64>,
    /// Share of reported intervals containing the true boundary.
    pub coverage: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub correct_rejection_rate: Option<f64>,
    pub n_reps: usize,
    pub n_obs: usize,
    pub n_estimates: usize,
    pub n_failures: usize,
    pub mean_kappa: Option<f64>,
    pub se_mean_kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub summaries: Vec<MCSummary>,
    pub replications: Vec<ReplicationRecord>,
}

fn run_method(method: Method, data: &[(f64, f64)], cfg: &CampaignConfig, seed: u64) -> Result<(Option<f64>, Option<(f64, f64)>, Option<f64>)> {
    match method {
        Method::Parametric => {
            let floored: Vec<(f64, f64)> = data.iter().map(|&(d, y)| (d, y.max(PARAMETRIC_FLOOR))).collect();
            let fit = fit_loglinear(&floored, None)?;
            Ok((fit.d_star, fit.d_star_ci, Some(fit.kappa_s)))
        }
        Method::Nonparametric => {
            let fit = nonparametric_fit(data, &cfg.smoother)?;
            let det = detect_boundary(&fit, cfg.fraction, cfg.n_boot, cfg.alpha, seed)?;
            Ok((det.boundary, det.ci, None))
        }
    }
}

/// Runs every method on `n_reps` datasets per DGP; replication r uses seed
/// `base_seed + r`. Per-replication failures are recorded, not raised.
pub fn run_campaign(specs: &[DgpSpec], cfg: &CampaignConfig) -> Result<CampaignResult> {
    if cfg.n_reps < 10 {
        return Err(domain(format!("n_reps must be >= 10, got {}", cfg.n_reps)));
    }
    if cfg.methods.is_empty() {
        return Err(domain("at least one method is required"));
    }
    for s in specs {
        s.validate()?;
    }
    let mut replications = Vec::new();
    let mut summaries = Vec::new();
    for spec in specs {
        let recs: Vec<Vec<ReplicationRecord>> = (0..cfg.n_reps)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.base_seed.wrapping_add(r as u64);
                let data = generate_dgp(spec, cfg.n_obs, seed);
                cfg.methods
                    .iter()
                    .map(|&method| {
                        let out = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                            run_method(method, d, cfg, seed).map_err(|e| e.to_string())
                        });
                        let (estimate, ci, kappa, error) = match out {
                            Ok((e, c, k)) => (e, c, k, None),
                            Err(msg) => (None, None, None, Some(msg)),
                        };
                        ReplicationRecord {
                            dgp: spec.id,
                            method,
                            replication: r,
                            seed,
                            estimate,
                            ci,
                            kappa,
                            error,
                        }
                    })
                    .collect()
            })
            .collect();
        let recs: Vec<ReplicationRecord> = recs.into_iter().flatten().collect();
        for &method in &cfg.methods {
            let mine: Vec<&ReplicationRecord> = recs.iter().filter(|r| r.method == method).collect();
            summaries.push(summarize(spec, method, &mine, cfg.n_obs));
        }
        replications.extend(recs);
    }
    Ok(CampaignResult { summaries, replications })
}

fn mean_and_se(v: &[f64]) -> Option<(f64, f64)> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Some((m, (var / n).sqrt()))
}

fn summarize(spec: &DgpSpec, method: Method, recs: &[&ReplicationRecord], n_obs: usize) -> MCSummary {
    let ok: Vec<&&ReplicationRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
    let n_failures = recs.len() - ok.len();
    let estimates: Vec<f64> = ok.iter().filter_map(|r| r.estimate).collect();
    let kappas: Vec<f64> = ok.iter().filter_map(|r| r.kappa).collect();
    let ks = mean_and_se(&kappas);
    let mut s = MCSummary {
        dgp: spec.id,
        method,
        true_boundary: spec.true_boundary,
        bias: None,
        rmse: None,
        variance: None,
        coverage: None,
        false_positive_rate: None,
        correct_rejection_rate: None,
        n_reps: recs.len(),
        n_obs,
        n_estimates: estimates.len(),
        n_failures,
        mean_kappa: ks.map(|k| k.0),
        se_mean_kappa: ks.map(|k| k.1),
    };
    match spec.true_boundary {
        Some(truth) if !estimates.is_empty() => {
            let n = estimates.len() as f64;
            let mean = estimates.iter().sum::<f64>() / n;
            let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
            let bias = mean - truth;
            s.bias = Some(bias);
            s.variance = Some(variance);
            s.rmse = Some((bias * bias + variance).sqrt());
            let with_ci: Vec<(f64, f64)> = ok.iter().filter(|r| r.estimate.is_some()).filter_map(|r| r.ci).collect();
            if !with_ci.is_empty() {
                let hits = with_ci.iter().filter(|c| c.0 <= truth && truth <= c.1).count();
                s.coverage = Some(hits as f64 / with_ci.len() as f64);
            }
        }
        Some(_) => {}
        None if !ok.is_empty() => {
            let fp = estimates.len() as f64 / ok.len() as f64;
            s.false_positive_rate = Some(fp);
            s.correct_rejection_rate = Some(1.0 - fp);
        }
        None => {}
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub n_reps: usize,
    pub n_obs: usize,
    pub noise_sd: f64,
    pub nu: f64,
    pub q: f64,
    pub seed: u64,
    /// Observation times, cycled over the sample.
    pub times: Vec<f64>,
    /// Distances are uniform on (0, r_max].
    pub r_max: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            n_reps: 100,
            n_obs: 400,
            noise_sd: 3.6e-4,
            nu: 1.0,
            q: 1.0,
            seed: 0,
            times: vec![0.5, 1.0, 2.0, 4.0],
            r_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub sd: f64,
    pub se_of_mean: f64,
    /// Correlation of sorted estimates with normal quantiles; absent when
    /// the estimates do not vary beyond rounding.
    pub qq_correlation: Option<f64>,
    /// (normal quantile, standardized estimate) pairs at 19 probability levels.
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub nu: ParamSummary,
    pub q: ParamSummary,
    pub n_reps: usize,
    pub n_failures: usize,
    pub estimates: Vec<(f64, f64)>,
}

/// Gaussian-field samples on the configured design with additive N(0, σ²) noise.
pub fn simulate_field_sample(cfg: &RecoveryConfig, seed: u64) -> Result<Vec<FieldObservation>> {
    let p = FieldParams::new(cfg.nu, cfg.q, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| domain(e.to_string()))?;
    (0..cfg.n_obs)
        .map(|i| {
            let t = cfg.times[i % cfg.times.len()];
            let r = cfg.r_max * (1.0 - rng.gen::<f64>());
            let y = gaussian_field(&p, r, t)?.value + noise.sample(&mut rng);
            Ok(FieldObservation { r, t, y })
        })
        .collect()
}

fn param_summary(truth: f64, v: &[f64]) -> ParamSummary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var_pop = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = if v.len() > 1 { (var_pop * n / (n - 1.0)).sqrt() } else { 0.0 };
    let bias = mean - truth;
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = StdNormal::new(0.0, 1.0).expect("standard normal");
    let varies = sd > 1e-12 * mean.abs().max(1e-300);
    let qq_correlation = varies.then(|| {
        let theo: Vec<f64> = (0..sorted.len()).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n)).collect();
        pearson(&theo, &sorted)
    });
    let quantiles = if varies {
        (1..20)
            .map(|k| {
                let p = k as f64 / 20.0;
                (normal.inverse_cdf(p), (quantile_sorted(&sorted, p) - mean) / sd)
            })
            .collect()
    } else {
        Vec::new()
    };
    ParamSummary {
        truth,
        mean,
        bias,
        rmse: (bias * bias + var_pop).sqrt(),
        sd,
        se_of_mean: sd / n.sqrt(),
        qq_correlation,
        quantiles,
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Repeated Gaussian-field NLS fits; replication r uses seed `seed + r`.
pub fn parameter_recovery_campaign(cfg: &RecoveryConfig) -> Result<RecoverySummary> {
    if cfg.n_reps < 10 {
        return Err(domain(format!("n_reps must be >= 10, got {}", cfg.n_reps)));
    }
    if cfg.times.is_empty() || cfg.times.iter().any(|t| !(*t > 0.0)) {
        return Err(domain("times must be non-empty and positive"));
    }
    if !(cfg.r_max > 0.0) {
        return Err(domain(format!("r_max must be positive, got {}", cfg.r_max)));
    }
    let fits: Vec<Option<(f64, f64)>> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|r| {
            let data = simulate_field_sample(cfg, cfg.seed.wrapping_add(r as u64)).ok()?;
            fit_field_nls(&data, ProfileModel::Gaussian).ok().map(|f| (f.nu, f.amplitude))
        })
        .collect();
    let estimates: Vec<(f64, f64)> = fits.iter().flatten().copied().collect();
    if estimates.is_empty() {
        return Err(Error::FitFailure("every replication failed".into()));
    }
    let nus: Vec<f64> = estimates.iter().map(|e| e.0).collect();
    let qs: Vec<f64> = estimates.iter().map(|e| e.1).collect();
    Ok(RecoverySummary {
        nu: param_summary(cfg.nu, &nus),
        q: param_summary(cfg.q, &qs),
        n_reps: cfg.n_reps,
        n_failures: cfg.n_reps - estimates.len(),
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dgp_means() {
        assert_eq!(DgpSpec::standard(DgpId::StrongDecay).mean(0.0), 0.8);
        assert_eq!(DgpSpec::standard(DgpId::Flat).mean(37.0), 0.5);
        assert!((DgpSpec::standard(DgpId::Hump).mean(20.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn parse_names() {
        assert_eq!("flat".parse::<DgpId>().unwrap(), DgpId::Flat);
        assert_eq!("DGP2".parse::<DgpId>().unwrap(), DgpId::WeakDecay);
        assert!("bogus".parse::<DgpId>().is_err());
        assert_eq!("nonparametric".parse::<Method>().unwrap(), Method::Nonparametric);
    }

    #[test]
    fn flat_spec_must_lack_boundary() {
        let mut s = DgpSpec::standard(DgpId::Flat);
        s.true_boundary = Some(3.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn summary_identities() {
        let spec = DgpSpec::standard(DgpId::StrongDecay);
        let recs: Vec<ReplicationRecord> = [44.0, 47.0, 45.5, 49.0]
            .iter()
            .enumerate()
            .map(|(i, &e)| ReplicationRecord {
                dgp: spec.id,
                method: Method::Nonparametric,
                replication: i,
                seed: i as u64,
                estimate: Some(e),
                ci: Some((e - 2.0, e + 2.0)),
                kappa: None,
                error: None,
            })
            .collect();
        let refs: Vec<&ReplicationRecord> = recs.iter().collect();
        let s = summarize(&spec, Method::Nonparametric, &refs, 10);
        let (b, r, v) = (s.bias.unwrap(), s.rmse.unwrap(), s.variance.unwrap());
        assert!((r * r - b * b - v).abs() < 1e-12);
        assert_eq!(s.coverage, Some(0.5));
    }
}
