//! Benchmark fixtures shared by the criterion targets.

use lpad_core::datapipe::{fit_stats, normalize, synth_generate, Dataset, NormMode, SynthConfig};
use lpad_core::nets::Branch;
use lpad_core::rng::{standard_normal, stream};
use lpad_core::vae::{Model, ModelSpec, PriorKind, ReconMetric};

/// Desk-scale synthetic windows (7 channels, 60 steps), z-scored.
pub fn desk_data(n: usize) -> Dataset {
    let raw = synth_generate(&SynthConfig {
        n_instances: n,
        ..SynthConfig::default()
    })
    .expect("default generator settings are valid");
    let stats = fit_stats(&raw, NormMode::Zscore);
    normalize(&raw, NormMode::Zscore, Some(&stats)).expect("stats match the data")
}

/// Desk-scale model: three branches of 8 filters, two blocks each.
pub fn desk_model(prior: PriorKind, latent: usize) -> Model {
    let branches = [3, 5, 7]
        .into_iter()
        .map(|kernel| Branch { filters: 8, kernel })
        .collect();
    let mut spec =
        ModelSpec::new(prior, 7, 60, latent, ReconMetric::Mse).with_branches(branches, 2);
    spec.net.logvar_softplus = false;
    if let Some(r) = spec.rbm.as_mut() {
        r.chains = 100;
    }
    Model::new(spec, 1).expect("desk spec is valid")
}

/// `n` seeded standard normals.
pub fn normal_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}
