//! Named presets.
//!
//! The `baseline-*` and `approach-rbm` profiles carry the published
//! hyperparameters. The `desk-*` profiles are scaled down to train on the
//! bundled synthetic benchmark in seconds: 8 filters per branch, 50 epochs,
//! minibatch 32 and a larger learning rate.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const NAMES: &[&str] = &[
    "baseline-gaussian",
    "baseline-bernoulli",
    "baseline-rbm",
    "approach-rbm",
    "desk-gaussian",
    "desk-bernoulli",
    "desk-rbm",
];

fn settings(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    Some(match name {
        "baseline-gaussian" => &[("prior", "gaussian"), ("latent", "256"), ("beta", "60")],
        "baseline-bernoulli" => &[
            ("prior", "bernoulli"),
            ("latent", "128"),
            ("beta", "60"),
            ("lambda", "0.1"),
        ],
        "baseline-rbm" => &[
            ("prior", "rbm"),
            ("latent", "64"),
            ("beta", "60"),
            ("lambda", "0.1"),
            ("chains", "500"),
            ("sweeps", "20"),
            ("entropy", "relaxed_mass"),
        ],
        "approach-rbm" => &[
            ("prior", "rbm"),
            ("latent", "32"),
            ("beta", "30"),
            ("lambda", "0.1"),
            ("chains", "500"),
            ("sweeps", "25"),
            ("entropy", "relaxed_mass"),
            ("recon", "bce"),
            ("norm", "minmax"),
            ("synth_kind", "delayed_step"),
        ],
        "desk-gaussian" => &[
            ("prior", "gaussian"),
            ("latent", "16"),
            ("beta", "1"),
            ("logvar_softplus", "false"),
            ("filters", "8"),
            ("epochs", "50"),
            ("minibatch", "32"),
            ("lr", "1e-3"),
        ],
        "desk-bernoulli" => &[
            ("prior", "bernoulli"),
            ("latent", "16"),
            ("beta", "1"),
            ("filters", "8"),
            ("epochs", "50"),
            ("minibatch", "32"),
            ("lr", "1e-3"),
        ],
        "desk-rbm" => &[
            ("prior", "rbm"),
            ("latent", "8"),
            ("beta", "1"),
            ("chains", "100"),
            ("sweeps", "20"),
            ("entropy", "relaxed_mass"),
            ("filters", "8"),
            ("epochs", "50"),
            ("minibatch", "32"),
            ("lr", "1e-3"),
        ],
        _ => return None,
    })
}

/// Overwrites `cfg` with the profile's settings.
pub fn apply(name: &str, cfg: &mut RunConfig) -> CliResult<()> {
    let pairs = settings(name).ok_or_else(|| CliError::UnknownProfile(name.to_string()))?;
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    Ok(())
}
