use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tefield::estimation::{
    bootstrap_d_star_ci, detect_boundary, diagnostics, fit_loglinear, nonparametric_fit, regional_heterogeneity,
    select_profile_model, Bandwidth, CrossingMode, DecayFit, FieldObservation, GeometryHint, Link, SmootherOptions,
};
use tefield::fields::{Field, FieldParams, RadialField};
use tefield::functionals::{boundary_radius, cumulative_exposure, energy, gradient_energy, spatial_moment, BoundarySpec};
use tefield::ingest::{build_sample, load_observations, load_sources, write_sample};
use tefield::montecarlo::{
    parameter_recovery_campaign, run_campaign, CampaignConfig, DgpId, DgpSpec, Method, NoiseKind, RecoveryConfig,
};

use crate::options::*;
use crate::output::{Cell, Report, Table};
use crate::{CliError, Command};

pub fn dispatch(cmd: &Command, section: Option<&toml::Table>) -> Result<Report, CliError> {
    match cmd {
        Command::Field(a) => field(resolve(a, section)?),
        Command::Boundary(a) => boundary(resolve(a, section)?),
        Command::Moments(a) => moments(resolve(a, section)?),
        Command::Exposure(a) => exposure(resolve(a, section)?),
        Command::Montecarlo(a) => montecarlo(resolve(a, section)?),
        Command::Estimate(a) => estimate(resolve(a, section)?),
        Command::Diagnose(a) => diagnose(resolve(a, section)?),
        Command::Ingest(a) => ingest(resolve(a, section)?),
    }
}

fn report<T: Serialize>(command: &str, config: &T, seed: Option<u64>, tables: Vec<Table>) -> Result<Report, CliError> {
    Ok(Report {
        command: command.into(),
        config: serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?,
        seed,
        tables,
    })
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn build_field(profile: Profile, nu: f64, q: f64, lambda: f64) -> Result<Field, CliError> {
    if lambda != 0.0 && profile != Profile::Decaying {
        return Err(usage("--lambda applies only to the decaying profile"));
    }
    Ok(match profile {
        Profile::Gaussian => Field::Gaussian(FieldParams::new(nu, q, 3)?),
        Profile::Bessel => Field::Bessel {
            params: FieldParams::new(nu, 1.0, 2)?,
            amplitude: q,
        },
        Profile::Kummer => Field::Kummer {
            params: FieldParams::new(nu, 1.0, 3)?,
            coeffs: vec![(q, 0)],
        },
        Profile::Decaying => Field::DecayingSource(FieldParams::new(nu, q, 3)?.with_lambda(lambda)?),
    })
}

fn require_times(t: &[f64]) -> Result<(), CliError> {
    if t.is_empty() {
        return Err(usage("at least one time is required"));
    }
    Ok(())
}

fn field(mut o: FieldOptions) -> Result<Report, CliError> {
    let f = build_field(o.profile, o.nu, o.q, o.lambda)?;
    require_times(&o.t)?;
    if o.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let r_min = *o.r_min.get_or_insert(if f.finite_at_source() { 0.0 } else { o.r_max * 1e-3 });
    if !(o.r_max > r_min && r_min >= 0.0) {
        return Err(usage(format!("need 0 <= r_min < r_max, got {r_min} and {}", o.r_max)));
    }
    let mut table = Table::new("field", &["t", "r_km", "tau", "dtau_dr_per_km", "dtau_dt"]);
    for &t in &o.t {
        for i in 0..o.points {
            let r = r_min + (o.r_max - r_min) * i as f64 / (o.points - 1) as f64;
            let e = f.eval(r, t)?;
            table.push(vec![t.into(), r.into(), e.value.into(), e.d_dr.into(), e.d_dt.into()]);
        }
    }
    report("field", &o, None, vec![table])
}

fn boundary(mut o: BoundaryOptions) -> Result<Report, CliError> {
    let f = build_field(o.profile, o.nu, o.q, o.lambda)?;
    require_times(&o.t)?;
    if o.epsilon.is_none() && o.tau_min.is_none() && o.fraction.is_none() {
        o.epsilon = Some(0.1);
    }
    let spec = match (o.epsilon, o.tau_min, o.fraction) {
        (Some(epsilon), None, None) => BoundarySpec::DecayByEpsilon { epsilon },
        (None, Some(tau_min), None) => BoundarySpec::Absolute { tau_min },
        (None, None, Some(fraction)) => BoundarySpec::DecayToFraction { fraction },
        _ => return Err(usage("give at most one of --epsilon, --tau-min, --fraction")),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut table = Table::new("boundary", &["t", "d_star_km", "d_star_over_sqrt_t", "non_unique"]);
    for &t in &o.t {
        match boundary_radius(&f, &spec, t)? {
            Some(b) => table.push(vec![t.into(), b.radius.into(), (b.radius / t.sqrt()).into(), b.non_unique.into()]),
            None => table.push(vec![t.into(), Cell::Empty, Cell::Empty, Cell::Empty]),
        }
    }
    report("boundary", &o, None, vec![table])
}

fn moments(o: MomentsOptions) -> Result<Report, CliError> {
    let f = build_field(o.profile, o.nu, o.q, o.lambda)?;
    require_times(&o.t)?;
    let mut table = Table::new("moments", &["t", "quantity", "value", "quadrature_error"]);
    for &t in &o.t {
        for &k in &o.k {
            let m = spatial_moment(&f, k, t)?;
            table.push(vec![t.into(), format!("M{k}").into(), m.value.into(), m.quadrature_error.into()]);
        }
        let e = energy(&f, t)?;
        table.push(vec![t.into(), "energy".into(), e.value.into(), e.abs_err.into()]);
        let g = gradient_energy(&f, t)?;
        table.push(vec![t.into(), "gradient_energy".into(), g.value.into(), g.abs_err.into()]);
    }
    report("moments", &o, None, vec![table])
}

fn exposure(o: ExposureOptions) -> Result<Report, CliError> {
    let f = build_field(o.profile, o.nu, o.q, o.lambda)?;
    let mut table = Table::new("exposure", &["r_km", "exposure", "quadrature_error"]);
    for &r in &o.r {
        let e = cumulative_exposure(&f, r, o.t_min, o.t_max)?;
        table.push(vec![r.into(), e.value.into(), e.abs_err.into()]);
    }
    report("exposure", &o, None, vec![table])
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, CliError> {
    match s {
        "auto" => Ok(Bandwidth::Auto),
        "rot" => Ok(Bandwidth::RuleOfThumb),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|h| *h > 0.0 && h.is_finite())
            .map(Bandwidth::Fixed)
            .ok_or_else(|| usage(format!("bandwidth must be auto, rot or a positive width, got `{s}`"))),
    }
}

fn link(l: LinkChoice) -> Link {
    match l {
        LinkChoice::Identity => Link::Identity,
        LinkChoice::Log => Link::Log,
    }
}

fn dgp_id(d: DgpChoice) -> DgpId {
    match d {
        DgpChoice::StrongDecay => DgpId::StrongDecay,
        DgpChoice::WeakDecay => DgpId::WeakDecay,
        DgpChoice::Hump => DgpId::Hump,
        DgpChoice::Flat => DgpId::Flat,
    }
}

fn montecarlo(mut o: MonteCarloOptions) -> Result<Report, CliError> {
    match o.campaign {
        Campaign::Boundary => montecarlo_boundary({
            o.n.get_or_insert(5000);
            o
        }),
        Campaign::Recovery => montecarlo_recovery({
            o.n.get_or_insert(400);
            o.noise_sd.get_or_insert(3.6e-4);
            o
        }),
    }
}

fn montecarlo_boundary(o: MonteCarloOptions) -> Result<Report, CliError> {
    if o.dgp.is_empty() || o.method.is_empty() {
        return Err(usage("at least one --dgp and one --method are required"));
    }
    let kind = match o.noise_kind {
        NoiseChoice::Additive => NoiseKind::Additive,
        NoiseChoice::LogNormal => NoiseKind::LogNormal,
    };
    let specs: Vec<DgpSpec> = o
        .dgp
        .iter()
        .map(|&d| {
            let s = DgpSpec::standard(dgp_id(d));
            let sd = o.noise_sd.unwrap_or(s.noise_sd);
            s.with_noise(sd, kind)
        })
        .collect();
    let cfg = CampaignConfig {
        n_reps: o.reps,
        n_obs: o.n.expect("filled by montecarlo"),
        methods: o
            .method
            .iter()
            .map(|m| match m {
                MethodChoice::Parametric => Method::Parametric,
                MethodChoice::Nonparametric => Method::Nonparametric,
            })
            .collect(),
        base_seed: o.seed,
        fraction: o.fraction,
        n_boot: o.n_boot,
        alpha: o.alpha,
        smoother: SmootherOptions {
            bandwidth: parse_bandwidth(&o.bandwidth)?,
            link: link(o.link),
            ..SmootherOptions::default()
        },
    };
    let res = run_campaign(&specs, &cfg).map_err(|e| match e {
        tefield::Error::Domain(m) => usage(m),
        other => other.into(),
    })?;
    let mut summary = Table::new(
        "summary",
        &[
            "dgp",
            "method",
            "true_boundary_km",
            "bias_km",
            "rmse_km",
            "variance_km2",
            "coverage",
            "false_positive_rate",
            "correct_rejection_rate",
            "n_reps",
            "n_obs",
            "n_estimates",
            "n_failures",
            "mean_kappa_per_km",
            "se_mean_kappa_per_km",
        ],
    );
    for s in &res.summaries {
        summary.push(vec![
            s.dgp.name().into(),
            s.method.name().into(),
            s.true_boundary.into(),
            s.bias.into(),
            s.rmse.into(),
            s.variance.into(),
            s.coverage.into(),
            s.false_positive_rate.into(),
            s.correct_rejection_rate.into(),
            s.n_reps.into(),
            s.n_obs.into(),
            s.n_estimates.into(),
            s.n_failures.into(),
            s.mean_kappa.into(),
            s.se_mean_kappa.into(),
        ]);
    }
    let mut reps = Table::new(
        "replications",
        &["dgp", "method", "replication", "seed", "estimate_km", "ci_lo_km", "ci_hi_km", "kappa_per_km", "error"],
    );
    for r in &res.replications {
        reps.push(vec![
            r.dgp.name().into(),
            r.method.name().into(),
            r.replication.into(),
            r.seed.into(),
            r.estimate.into(),
            r.ci.map(|c| c.0).into(),
            r.ci.map(|c| c.1).into(),
            r.kappa.into(),
            r.error.clone().into(),
        ]);
    }
    report("montecarlo", &o, Some(o.seed), vec![summary, reps])
}

fn montecarlo_recovery(o: MonteCarloOptions) -> Result<Report, CliError> {
    let cfg = RecoveryConfig {
        n_reps: o.reps,
        n_obs: o.n.expect("filled by montecarlo"),
        noise_sd: o.noise_sd.expect("filled by montecarlo"),
        nu: o.nu,
        q: o.q,
        seed: o.seed,
        times: o.times.clone(),
        r_max: o.r_max,
    };
    let s = parameter_recovery_campaign(&cfg).map_err(|e| match e {
        tefield::Error::Domain(m) => usage(m),
        other => other.into(),
    })?;
    let mut params = Table::new(
        "parameters",
        &["parameter", "truth", "mean", "bias", "rmse", "sd", "se_of_mean", "qq_correlation", "n_reps", "n_failures"],
    );
    let mut quant = Table::new("quantiles", &["parameter", "normal_quantile", "standardized_estimate"]);
    for (name, p) in [("nu", &s.nu), ("q", &s.q)] {
        params.push(vec![
            name.into(),
            p.truth.into(),
            p.mean.into(),
            p.bias.into(),
            p.rmse.into(),
            p.sd.into(),
            p.se_of_mean.into(),
            p.qq_correlation.into(),
            s.n_reps.into(),
            s.n_failures.into(),
        ]);
        for &(z, v) in &p.quantiles {
            quant.push(vec![name.into(), z.into(), v.into()]);
        }
    }
    let mut est = Table::new("estimates", &["index", "nu", "q"]);
    for (i, &(nu, q)) in s.estimates.iter().enumerate() {
        est.push(vec![i.into(), nu.into(), q.into()]);
    }
    report("montecarlo", &o, Some(o.seed), vec![params, quant, est])
}

/// Named numeric columns from a delimited file; rows whose outcome is empty
/// or `NA` are skipped.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| data_err(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| index.get(n).copied().ok_or_else(|| data_err(format!("missing column `{n}`"))))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw: Vec<&str> = cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
        if raw.iter().any(|v| v.is_empty() || v.eq_ignore_ascii_case("na")) {
            continue;
        }
        let vals = raw
            .iter()
            .zip(names)
            .map(|(v, n)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| data_err(format!("line {line}: column `{n}`: `{v}` is not a number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(vals);
    }
    Ok(rows)
}

fn required_path(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    p.clone().ok_or_else(|| usage(format!("{flag} is required")))
}

fn pairs(path: &Path, distance: &str, outcome: &str) -> Result<Vec<(f64, f64)>, CliError> {
    Ok(read_columns(path, &[distance, outcome])?.into_iter().map(|r| (r[0], r[1])).collect())
}

fn decay_columns() -> Vec<&'static str> {
    vec![
        "n",
        "kappa_s_per_km",
        "intercept",
        "se_classical_per_km",
        "se_spatial_per_km",
        "r_squared",
        "d_star_km",
        "d_star_ci_lo_km",
        "d_star_ci_hi_km",
        "robust_cutoff_km",
    ]
}

fn decay_cells(f: &DecayFit) -> Vec<Cell> {
    vec![
        f.n.into(),
        f.kappa_s.into(),
        f.intercept.into(),
        f.se_classical.into(),
        f.se_spatial.into(),
        f.r_squared.into(),
        f.d_star.into(),
        f.d_star_ci.map(|c| c.0).into(),
        f.d_star_ci.map(|c| c.1).into(),
        f.robust_cutoff.into(),
    ]
}

fn cutoff(c: f64) -> Result<Option<f64>, CliError> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(usage(format!("robust cutoff must be >= 0, got {c}")));
    }
    Ok((c > 0.0).then_some(c))
}

fn estimate(o: EstimateOptions) -> Result<Report, CliError> {
    let path = required_path(&o.input, "--input")?;
    let tables = match o.method {
        EstimateMethod::Loglinear => {
            let data = pairs(&path, &o.distance_column, &o.outcome_column)?;
            let fit = fit_loglinear(&data, cutoff(o.robust_cutoff)?)?;
            let max_d = data.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let mut cols = decay_columns();
            cols.extend(["max_distance_km", "d_star_extrapolated", "bootstrap_ci_lo_km", "bootstrap_ci_hi_km"]);
            let mut t = Table::new("loglinear", &cols);
            let boot = if o.bootstrap > 0 { bootstrap_d_star_ci(&data, o.bootstrap, o.seed)? } else { None };
            let mut row = decay_cells(&fit);
            row.extend([
                max_d.into(),
                fit.d_star.map_or(Cell::Empty, |d| (d > max_d).into()),
                boot.map(|c| c.0).into(),
                boot.map(|c| c.1).into(),
            ]);
            t.push(row);
            vec![t]
        }
        EstimateMethod::Nonparametric => {
            let data = pairs(&path, &o.distance_column, &o.outcome_column)?;
            let opts = SmootherOptions {
                bandwidth: parse_bandwidth(&o.bandwidth)?,
                link: link(o.link),
                ..SmootherOptions::default()
            };
            let mut fit = nonparametric_fit(&data, &opts)?;
            let det = detect_boundary(&fit, o.fraction, o.n_boot, o.alpha, o.seed).map_err(|e| usage(e.to_string()))?;
            fit.record(&det);
            let mut s = Table::new(
                "boundary",
                &[
                    "bandwidth_km",
                    "boundary_km",
                    "candidate_km",
                    "crossing",
                    "ci_lo_km",
                    "ci_hi_km",
                    "se_km",
                    "reject_null",
                    "gate_p_value",
                ],
            );
            s.push(vec![
                fit.bandwidth.into(),
                det.boundary.into(),
                det.candidate.into(),
                det.mode
                    .map(|m| match m {
                        CrossingMode::FromSource => "from_source",
                        CrossingMode::FromPeak => "from_peak",
                    })
                    .map(String::from)
                    .into(),
                det.ci.map(|c| c.0).into(),
                det.ci.map(|c| c.1).into(),
                det.se.into(),
                det.reject_null.into(),
                det.gate_p_value.into(),
            ]);
            let mut g = Table::new("grid", &["distance_km", "m_hat"]);
            for (d, m) in fit.grid.iter().zip(&fit.m_hat) {
                g.push(vec![(*d).into(), (*m).into()]);
            }
            vec![s, g]
        }
        EstimateMethod::Profile => {
            let rows = read_columns(&path, &[&o.radius_column, &o.time_column, &o.outcome_column])?;
            let data: Vec<FieldObservation> = rows.iter().map(|r| FieldObservation { r: r[0], t: r[1], y: r[2] }).collect();
            let hint = match o.hint {
                HintChoice::Cylindrical => GeometryHint::Cylindrical,
                HintChoice::None => GeometryHint::None,
            };
            let sel = select_profile_model(&data, hint)?;
            let mut t = Table::new(
                "profile",
                &[
                    "model",
                    "nu_km2_per_time",
                    "amplitude",
                    "se_nu",
                    "se_amplitude",
                    "rss",
                    "n",
                    "lr_statistic",
                    "lr_p_value",
                    "runs_z",
                    "runs_p",
                    "warnings",
                ],
            );
            let f = &sel.fit;
            t.push(vec![
                format!("{:?}", sel.model).to_lowercase().into(),
                f.nu.into(),
                f.amplitude.into(),
                f.se_nu().into(),
                f.se_amplitude().into(),
                f.rss.into(),
                f.n.into(),
                sel.lr_statistic.into(),
                sel.lr_p_value.into(),
                sel.runs_z.into(),
                sel.runs_p.into(),
                f.warnings.join("; ").into(),
            ]);
            vec![t]
        }
    };
    report("estimate", &o, Some(o.seed), tables)
}

fn diagnose(o: DiagnoseOptions) -> Result<Report, CliError> {
    let path = required_path(&o.input, "--input")?;
    let data = pairs(&path, &o.distance_column, &o.outcome_column)?;
    let r = diagnostics(&data, o.bins)?;
    let mut summary = Table::new(
        "summary",
        &[
            "n",
            "spearman_rho",
            "spearman_p",
            "decision",
            "bins_requested",
            "bins_used",
            "n_nonpositive_dropped",
            "kappa_s_per_km",
            "r_squared",
        ],
    );
    let decision = serde_json::to_value(r.decision)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    summary.push(vec![
        data.len().into(),
        r.spearman_rho.into(),
        r.spearman_p.into(),
        decision.into(),
        r.bins_requested.into(),
        r.bins_used.into(),
        r.n_nonpositive_dropped.into(),
        r.fit.as_ref().map(|f| f.kappa_s).into(),
        r.fit.as_ref().map(|f| f.r_squared).into(),
    ]);
    let mut bins = Table::new("bins", &["bin", "lo_km", "hi_km", "mean", "se", "count", "pct_decline_from_first_bin"]);
    for (i, (b, pct)) in r.binned_means.iter().zip(&r.pct_decline_from_first_bin).enumerate() {
        bins.push(vec![i.into(), b.lo.into(), b.hi.into(), b.mean.into(), b.se.into(), b.count.into(), (*pct).into()]);
    }
    let mut tables = vec![summary, bins];
    if let Some(split) = o.split {
        let reg = regional_heterogeneity(&data, split, cutoff(o.robust_cutoff)?)?;
        let mut cols = vec!["side", "p_value_one_sided"];
        cols.extend(decay_columns());
        cols.push("sign_reversal");
        let mut t = Table::new("regional", &cols);
        for (side, f, p) in [("near", &reg.near, reg.p_near), ("far", &reg.far, reg.p_far)] {
            let mut row: Vec<Cell> = vec![side.into(), p.into()];
            row.extend(decay_cells(f));
            row.push(reg.sign_reversal.into());
            t.push(row);
        }
        tables.push(t);
    }
    report("diagnose", &o, None, tables)
}

fn ingest(o: IngestOptions) -> Result<Report, CliError> {
    let sources_path = required_path(&o.sources, "--sources")?;
    let obs_path = required_path(&o.observations, "--observations")?;
    let sample_path = required_path(&o.sample, "--sample")?;
    let sources = load_sources(&sources_path, o.min_capacity)?;
    let obs = load_observations(&obs_path)?;
    let sample = build_sample(&obs, &sources, o.max_distance, o.min_months)?;
    write_sample(&sample_path, &sample)?;
    let mut t = Table::new(
        "ingest",
        &["n_sources", "n_observations", "n_valid", "n_kept", "max_distance_km", "min_monthly_obs_per_year"],
    );
    t.push(vec![
        sources.len().into(),
        obs.len().into(),
        obs.iter().filter(|x| x.is_valid()).count().into(),
        sample.len().into(),
        o.max_distance.into(),
        o.min_months.into(),
    ]);
    report("ingest", &o, None, vec![t])
}
