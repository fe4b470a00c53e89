//! Per-command options. Each command has a flag struct (every field optional)
//! and a resolved struct built from defaults, then the config file section,
//! then the flags.

use std::path::PathBuf;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

macro_rules! options {
    (
        $(#[$smeta:meta])*
        $args:ident => $resolved:ident {
            $( $(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr, )*
        }
        optional {
            $( $(#[$ometa:meta])* $ofield:ident : $oty:ty, )*
        }
    ) => {
        $(#[$smeta])*
        #[derive(Debug, Clone, Default, clap::Args, Serialize)]
        pub struct $args {
            $(
                $(#[$fmeta])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
            $(
                $(#[$ometa])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $ofield: Option<$oty>,
            )*
        }

        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $resolved {
            $( pub $field: $ty, )*
            $( pub $ofield: Option<$oty>, )*
        }

        impl Default for $resolved {
            fn default() -> Self {
                Self {
                    $( $field: $default, )*
                    $( $ofield: None, )*
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Profile {
    /// Q (4πνt)^{−3/2} exp(−r²/4νt) in three dimensions.
    Gaussian,
    /// (q/t) K₀(r / 2√(νt)) in two dimensions.
    Bessel,
    /// (q/t) M(½, 1, r²/4νt).
    Kummer,
    /// Source whose emitted mass decays at rate λ.
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Campaign {
    /// Boundary detection on the four synthetic DGPs.
    Boundary,
    /// Gaussian-field (ν, Q) recovery by nonlinear least squares.
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DgpChoice {
    StrongDecay,
    WeakDecay,
    Hump,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodChoice {
    Parametric,
    Nonparametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum NoiseChoice {
    Additive,
    LogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LinkChoice {
    Identity,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// OLS of log(outcome) on distance with Bartlett spatial SEs.
    Loglinear,
    /// Local-linear smoother with bootstrap-gated boundary detection.
    Nonparametric,
    /// Profile-model selection on (r, t, outcome) records.
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum HintChoice {
    Cylindrical,
    None,
}

options! {
    FieldArgs => FieldOptions {
        profile: Profile = Profile::Gaussian,
        /// Diffusion coefficient, km²/time.
        nu: f64 = 1.0,
        /// Source strength or amplitude.
        q: f64 = 1.0,
        /// Source decay rate, 1/time (decaying profile only).
        lambda: f64 = 0.0,
        /// Evaluation times; repeat or comma-separate.
        #[arg(value_delimiter = ',')]
        t: Vec<f64> = vec![1.0],
        /// Largest radius on the grid, km.
        r_max: f64 = 5.0,
        points: usize = 101,
    }
    optional {
        /// Smallest radius, km; defaults to 0, or r_max/1000 for profiles singular at the source.
        r_min: f64,
    }
}

options! {
    BoundaryArgs => BoundaryOptions {
        profile: Profile = Profile::Gaussian,
        nu: f64 = 1.0,
        q: f64 = 1.0,
        lambda: f64 = 0.0,
        #[arg(value_delimiter = ',')]
        t: Vec<f64> = vec![1.0],
    }
    optional {
        /// Boundary where τ has fallen by ε from its source value (default 0.1).
        epsilon: f64,
        /// Boundary at an absolute level τ_min.
        tau_min: f64,
        /// Boundary where τ falls to this fraction of its source value.
        fraction: f64,
    }
}

options! {
    MomentsArgs => MomentsOptions {
        profile: Profile = Profile::Gaussian,
        nu: f64 = 1.0,
        q: f64 = 1.0,
        lambda: f64 = 0.0,
        #[arg(value_delimiter = ',')]
        t: Vec<f64> = vec![1.0],
        /// Even moment orders.
        #[arg(value_delimiter = ',')]
        k: Vec<u32> = vec![0, 2, 4],
    }
    optional {}
}

options! {
    ExposureArgs => ExposureOptions {
        profile: Profile = Profile::Gaussian,
        nu: f64 = 1.0,
        q: f64 = 1.0,
        lambda: f64 = 0.0,
        /// Distances from the source, km.
        #[arg(value_delimiter = ',')]
        r: Vec<f64> = vec![0.1, 1.0, 10.0],
        t_min: f64 = 0.0,
    }
    optional {
        /// Upper time limit; infinite when absent.
        t_max: f64,
    }
}

options! {
    MonteCarloArgs => MonteCarloOptions {
        campaign: Campaign = Campaign::Boundary,
        #[arg(value_delimiter = ',')]
        dgp: Vec<DgpChoice> = vec![DgpChoice::StrongDecay, DgpChoice::WeakDecay, DgpChoice::Hump, DgpChoice::Flat],
        #[arg(value_delimiter = ',')]
        method: Vec<MethodChoice> = vec![MethodChoice::Parametric, MethodChoice::Nonparametric],
        reps: usize = 500,
        /// Base seed; replication r uses seed + r.
        seed: u64 = 0,
        noise_kind: NoiseChoice = NoiseChoice::Additive,
        n_boot: usize = 200,
        alpha: f64 = 0.05,
        fraction: f64 = 0.1,
        link: LinkChoice = LinkChoice::Log,
        /// `auto`, `rot` (rule of thumb) or a width in km.
        bandwidth: String = "auto".into(),
        nu: f64 = 1.0,
        q: f64 = 1.0,
        r_max: f64 = 4.0,
        #[arg(value_delimiter = ',')]
        times: Vec<f64> = vec![0.5, 1.0, 2.0, 4.0],
    }
    optional {
        /// Observations per replication (5000 for boundary, 400 for recovery).
        n: usize,
        /// Noise standard deviation (published DGP values, or 3.6e-4 for recovery).
        noise_sd: f64,
    }
}

options! {
    EstimateArgs => EstimateOptions {
        method: EstimateMethod = EstimateMethod::Loglinear,
        distance_column: String = "distance_km".into(),
        outcome_column: String = "outcome".into(),
        radius_column: String = "r_km".into(),
        time_column: String = "t".into(),
        /// Bartlett cutoff for spatial SEs, km; 0 uses classical SEs.
        robust_cutoff: f64 = 50.0,
        /// Percentile-bootstrap resamples for the d* interval; 0 skips it.
        bootstrap: usize = 0,
        bandwidth: String = "auto".into(),
        link: LinkChoice = LinkChoice::Identity,
        fraction: f64 = 0.1,
        n_boot: usize = 200,
        alpha: f64 = 0.05,
        seed: u64 = 0,
        hint: HintChoice = HintChoice::None,
    }
    optional {
        input: PathBuf,
    }
}

options! {
    DiagnoseArgs => DiagnoseOptions {
        distance_column: String = "distance_km".into(),
        outcome_column: String = "outcome".into(),
        bins: usize = 10,
        robust_cutoff: f64 = 50.0,
    }
    optional {
        input: PathBuf,
        /// Split distance for the regional near/far fits, km.
        split: f64,
    }
}

options! {
    IngestArgs => IngestOptions {
        /// Keep sources with capacity strictly above this, MW.
        min_capacity: f64 = 100.0,
        max_distance: f64 = 200.0,
        min_months: usize = 10,
    }
    optional {
        sources: PathBuf,
        observations: PathBuf,
        /// Where to write the matched sample.
        sample: PathBuf,
    }
}

/// Defaults, overlaid by the config section, overlaid by flags.
pub fn resolve<A, R>(args: &A, section: Option<&toml::Table>) -> Result<R, CliError>
where
    A: Serialize,
    R: Serialize + DeserializeOwned + Default,
{
    let usage = |e: serde_json::Error| CliError::Usage(e.to_string());
    let Value::Object(mut merged) = serde_json::to_value(R::default()).map_err(usage)? else {
        unreachable!("options serialize as maps");
    };
    if let Some(section) = section {
        for (k, v) in section {
            merged.insert(k.clone(), serde_json::to_value(v).map_err(usage)?);
        }
    }
    if let Value::Object(flags) = serde_json::to_value(args).map_err(usage)? {
        merged.extend(flags);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid options: {e}")))
}
