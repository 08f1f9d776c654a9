use lpad_cli::config::{DataSource, RunConfig};
use lpad_cli::{profiles, CliError};
use lpad_core::rbm::Topology;
use lpad_core::vae::{EntropyForm, PriorKind, ReconMetric};

fn parse(text: &str) -> Result<RunConfig, CliError> {
    RunConfig::from_text(text, None)
}

#[test]
fn misspelled_key_is_named() {
    let err = parse("seed = 1\nbata = 10\n").unwrap_err();
    assert!(err.to_string().contains("unknown key 'bata'"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn published_rbm_profiles() {
    let c = parse("profile = baseline-rbm\nseed = 3\n").unwrap();
    assert_eq!(c.model.prior, PriorKind::Rbm);
    assert_eq!(c.model.latent, 64);
    assert_eq!(c.model.beta, 60.0);
    assert_eq!(c.model.lambda, 0.1);
    assert_eq!((c.model.rbm.chains, c.model.rbm.sweeps), (500, 20));
    assert_eq!(c.train.epochs, 400);
    assert_eq!(c.train.minibatch, 128);
    assert_eq!(c.train.lr, 3e-4);

    let c = parse("profile = approach-rbm\nseed = 3\n").unwrap();
    assert_eq!(
        (c.model.latent, c.model.beta, c.model.rbm.sweeps),
        (32, 30.0, 25)
    );
    assert_eq!(c.model.recon, ReconMetric::Bce);
    assert_eq!(c.model.rbm.entropy, EntropyForm::RelaxedMass);
}

#[test]
fn published_gaussian_and_bernoulli_profiles() {
    let g = parse("profile = baseline-gaussian\nseed = 1\n").unwrap();
    assert_eq!(
        (g.model.prior, g.model.latent, g.model.beta),
        (PriorKind::Gaussian, 256, 60.0)
    );
    assert!(g.model.logvar_softplus);
    let b = parse("profile = baseline-bernoulli\nseed = 1\n").unwrap();
    assert_eq!(
        (b.model.prior, b.model.latent, b.model.beta),
        (PriorKind::Bernoulli, 128, 60.0)
    );
}

#[test]
fn every_profile_parses_and_builds_a_model() {
    for name in profiles::NAMES {
        let c = parse(&format!("profile = {name}\nseed = 1\n")).unwrap();
        let DataSource::Synth(s) = &c.data else {
            panic!("{name}: expected synthetic data")
        };
        c.model.model_spec(s.channels, s.window_len).unwrap();
    }
}

#[test]
fn file_keys_override_the_profile_in_any_order() {
    let c =
        parse("beta = 7\nprofile = baseline-rbm\nseed = 2\ntopology = bipartite_latent_space\n")
            .unwrap();
    assert_eq!(c.model.beta, 7.0);
    assert_eq!(c.model.latent, 64);
    assert_eq!(c.model.rbm.topology, Topology::Bipartite);
}

#[test]
fn seed_is_mandatory() {
    let err = parse("profile = desk-rbm\n").unwrap_err();
    assert!(err.to_string().contains("'seed'"), "{err}");
}

#[test]
fn validation_names_key_and_constraint() {
    let cases = [
        ("seed = 1\nlatent = 0\n", "latent", "> 0"),
        ("seed = 1\nbeta = -1\n", "beta", ">= 0"),
        ("seed = 1\nsplit = 0.5,0.4\n", "split", "sum to 1"),
        ("seed = 1\nkernels = 3,4\n", "kernels", "odd"),
        ("seed = 1\nrecon = bce\n", "norm", "minmax"),
        (
            "seed = 1\nprior = rbm\nlatent = 5\ntopology = bipartite_latent_space\n",
            "topology",
            "even",
        ),
        (
            "seed = 1\nthreshold_source = mixed\n",
            "threshold_source",
            "source_threshold",
        ),
        (
            "seed = 1\ndata = /nonexistent/flights.csv\n",
            "data",
            "does not exist",
        ),
        (
            "seed = 1\nprior = poisson\n",
            "prior",
            "gaussian|bernoulli|rbm",
        ),
    ];
    for (text, key, fragment) in cases {
        let msg = parse(text).unwrap_err().to_string();
        assert!(
            msg.contains(&format!("'{key}'")) && msg.contains(fragment),
            "{text:?} -> {msg}"
        );
    }
}

#[test]
fn syntax_errors_carry_the_line() {
    let err = parse("seed = 1\n\nlatent 16\n").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    let err = parse("seed = 1\nseed = 2\n").unwrap_err();
    assert!(err.to_string().contains("already set"), "{err}");
}

#[test]
fn snapshot_parses_back_to_the_same_config() {
    let c = parse("profile = desk-bernoulli\nseed = 11\nsplit = 0.7,0.3\nsamples = 4\nsource_threshold = 1.25\n").unwrap();
    let again = parse(&c.snapshot_text()).unwrap();
    assert_eq!(c, again);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let c = parse("# run\n\nseed = 5   # trailing\nlatent = 12\n").unwrap();
    assert_eq!((c.seed, c.model.latent), (5, 12));
}
