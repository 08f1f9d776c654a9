//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; lists are comma-separated.
//! A `profile` line loads a named preset first, and every other key in the
//! file overrides it regardless of line order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lpad_core::anomaly::{ScoreTransform, ThresholdSource};
use lpad_core::datapipe::{AnomalyKind, NormMode, SplitSpec, SynthConfig};
use lpad_core::diffcore::UpsampleMode;
use lpad_core::nets::Branch;
use lpad_core::priors::KlMode;
use lpad_core::rbm::{PositivePhase, Topology};
use lpad_core::vae::{EntropyForm, ModelSpec, PriorKind, RbmSpec, ReconMetric, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::profiles;

/// Which partition the evaluation runs on when no transfer target is involved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthConfig),
}

/// Model settings that do not depend on the data shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub prior: PriorKind,
    pub latent: usize,
    pub beta: f64,
    pub lambda: f64,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub blocks: usize,
    pub upsample: UpsampleMode,
    pub logvar_softplus: bool,
    pub recon: ReconMetric,
    pub bernoulli_kl: KlMode,
    pub rbm: RbmSpec,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            prior: PriorKind::Gaussian,
            latent: 16,
            beta: 1.0,
            lambda: 0.1,
            filters: vec![32],
            kernels: vec![3, 5, 7],
            blocks: 2,
            upsample: UpsampleMode::Linear,
            logvar_softplus: true,
            recon: ReconMetric::Mse,
            bernoulli_kl: KlMode::Mc,
            rbm: RbmSpec::default(),
        }
    }
}

impl ModelSettings {
    pub fn branches(&self) -> Vec<Branch> {
        self.kernels
            .iter()
            .enumerate()
            .map(|(j, &kernel)| Branch {
                filters: if self.filters.len() == 1 {
                    self.filters[0]
                } else {
                    self.filters[j]
                },
                kernel,
            })
            .collect()
    }

    pub fn model_spec(&self, channels: usize, input_len: usize) -> CliResult<ModelSpec> {
        let mut spec = ModelSpec::new(self.prior, channels, input_len, self.latent, self.recon)
            .with_branches(self.branches(), self.blocks)
            .with_upsample(self.upsample);
        spec.beta = self.beta;
        spec.lambda = self.lambda;
        spec.bernoulli_kl = self.bernoulli_kl;
        spec.net.logvar_softplus = self.logvar_softplus;
        if let Some(r) = spec.rbm.as_mut() {
            *r = self.rbm.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Option<String>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub norm: NormMode,
    pub split: SplitSpec,
    pub combine_train_val: bool,
    pub eval_split: EvalSplit,
    pub data: DataSource,
    pub samples: usize,
    pub transform: Option<ScoreTransform>,
    pub threshold_source: ThresholdSource,
    pub source_threshold: Option<f64>,
    pub source_report: Option<PathBuf>,
    pub anomaly_fraction: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub post_train_epochs: usize,
    pub post_train_minibatch: usize,
    pub sweep_latents: Vec<usize>,
    pub sweep_betas: Vec<f64>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: None,
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            norm: NormMode::Zscore,
            split: SplitSpec {
                fractions: vec![0.6, 0.2, 0.2],
                seed: 1,
            },
            combine_train_val: false,
            eval_split: EvalSplit::Test,
            data: DataSource::Synth(SynthConfig::default()),
            samples: 10,
            transform: None,
            threshold_source: ThresholdSource::SelfRun,
            source_threshold: None,
            source_report: None,
            anomaly_fraction: None,
            checkpoint: None,
            post_train_epochs: 300,
            post_train_minibatch: 32,
            sweep_latents: vec![32, 64, 128, 256],
            sweep_betas: vec![1.0, 10.0, 25.0, 50.0, 100.0],
            out: PathBuf::from("out"),
            seed: 1,
        }
    }
}

/// Every recognised key, in snapshot order.
pub const KEYS: &[&str] = &[
    "profile",
    "prior",
    "latent",
    "beta",
    "lambda",
    "filters",
    "kernels",
    "blocks",
    "upsample",
    "logvar_softplus",
    "recon",
    "bernoulli_kl",
    "topology",
    "chains",
    "sweeps",
    "positive_phase",
    "replay_fraction",
    "w_l2",
    "entropy",
    "norm",
    "epochs",
    "minibatch",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "checkpoint_every",
    "seed",
    "split",
    "split_seed",
    "combine_train_val",
    "eval_split",
    "data",
    "synth_n",
    "synth_channels",
    "synth_window",
    "synth_fraction",
    "synth_kind",
    "synth_seed",
    "samples",
    "transform",
    "threshold_source",
    "source_threshold",
    "source_report",
    "anomaly_fraction",
    "checkpoint",
    "post_train_epochs",
    "post_train_minibatch",
    "sweep_latents",
    "sweep_betas",
    "out",
];

fn invalid(key: &str, constraint: impl Into<String>) -> CliError {
    CliError::Invalid {
        key: key.to_string(),
        constraint: constraint.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| invalid(key, format!("expected {what}, got '{value}'")))
}

fn positive_int(key: &str, value: &str) -> CliResult<usize> {
    match parse::<usize>(key, value, "a positive integer")? {
        0 => Err(invalid(key, "must be > 0")),
        n => Ok(n),
    }
}

fn real(key: &str, value: &str) -> CliResult<f64> {
    let v: f64 = parse(key, value, "a number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, "must be finite"))
    }
}

fn positive_real(key: &str, value: &str) -> CliResult<f64> {
    match real(key, value)? {
        v if v > 0.0 => Ok(v),
        _ => Err(invalid(key, "must be > 0")),
    }
}

fn unit_interval(key: &str, value: &str, closed: bool) -> CliResult<f64> {
    let v = real(key, value)?;
    let ok = if closed {
        (0.0..=1.0).contains(&v)
    } else {
        v > 0.0 && v < 1.0
    };
    if ok {
        Ok(v)
    } else if closed {
        Err(invalid(key, "must lie in [0, 1]"))
    } else {
        Err(invalid(key, "must lie in (0, 1)"))
    }
}

fn boolean(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(
            key,
            format!("expected true or false, got '{value}'"),
        )),
    }
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> CliResult<T>) -> CliResult<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(invalid(key, "list must not be empty"));
    }
    Ok(items)
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> CliResult<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            invalid(
                key,
                format!("expected one of {}, got '{value}'", names.join("|")),
            )
        })
}

fn name_of<T: PartialEq>(value: &T, options: &[(&'static str, T)]) -> &'static str
where
    T: Copy,
{
    options
        .iter()
        .find(|(_, v)| v == value)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

const PRIORS: &[(&str, PriorKind)] = &[
    ("gaussian", PriorKind::Gaussian),
    ("bernoulli", PriorKind::Bernoulli),
    ("rbm", PriorKind::Rbm),
];
const RECONS: &[(&str, ReconMetric)] = &[("mse", ReconMetric::Mse), ("bce", ReconMetric::Bce)];
const NORMS: &[(&str, NormMode)] = &[("zscore", NormMode::Zscore), ("minmax", NormMode::Minmax)];
const UPSAMPLES: &[(&str, UpsampleMode)] = &[
    ("linear", UpsampleMode::Linear),
    ("nearest", UpsampleMode::Nearest),
];
const KL_MODES: &[(&str, KlMode)] = &[("mc", KlMode::Mc), ("analytic", KlMode::Analytic)];
const TOPOLOGIES: &[(&str, Topology)] = &[
    ("augmented_positive_phase", Topology::Augmented),
    ("bipartite_latent_space", Topology::Bipartite),
];
const PHASES: &[(&str, PositivePhase)] = &[
    (
        "continuous_visible_discrete_hidden",
        PositivePhase::ContinuousVisibleDiscreteHidden,
    ),
    ("continuous_both", PositivePhase::ContinuousBoth),
    ("discrete_both", PositivePhase::DiscreteBoth),
];
const ENTROPIES: &[(&str, EntropyForm)] = &[
    ("concrete", EntropyForm::Concrete),
    ("relaxed_mass", EntropyForm::RelaxedMass),
];
const TRANSFORMS: &[(&str, Option<ScoreTransform>)] = &[
    ("default", None),
    ("none", Some(ScoreTransform::None)),
    ("log", Some(ScoreTransform::Log)),
    ("sqrt", Some(ScoreTransform::Sqrt)),
    ("inverse", Some(ScoreTransform::Inverse)),
];
const SOURCES: &[(&str, ThresholdSource)] = &[
    ("self", ThresholdSource::SelfRun),
    ("source_run", ThresholdSource::SourceRun),
    ("mixed", ThresholdSource::Mixed),
];
const EVAL_SPLITS: &[(&str, EvalSplit)] = &[
    ("validation", EvalSplit::Validation),
    ("test", EvalSplit::Test),
];
const ANOMALY_KINDS: &[(&str, AnomalyKind)] = &[
    ("level_drop", AnomalyKind::LevelDrop),
    ("delayed_step", AnomalyKind::DelayedStep),
];

fn fmt_list<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    fn synth_mut(&mut self) -> &mut SynthConfig {
        if !matches!(self.data, DataSource::Synth(_)) {
            self.data = DataSource::Synth(SynthConfig::default());
        }
        match &mut self.data {
            DataSource::Synth(s) => s,
            DataSource::Csv(_) => unreachable!(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let m = &mut self.model;
        match key {
            "profile" => {
                profiles::apply(value, self)?;
                self.profile = Some(value.to_string());
            }
            "prior" => m.prior = choice(key, value, PRIORS)?,
            "latent" => m.latent = positive_int(key, value)?,
            "beta" => {
                m.beta = real(key, value)?;
                if m.beta < 0.0 {
                    return Err(invalid(key, "must be >= 0"));
                }
            }
            "lambda" => m.lambda = positive_real(key, value)?,
            "filters" => m.filters = list(key, value, positive_int)?,
            "kernels" => {
                m.kernels = list(key, value, positive_int)?;
                if m.kernels.iter().any(|k| k % 2 == 0) {
                    return Err(invalid(key, "kernels must be odd"));
                }
            }
            "blocks" => m.blocks = positive_int(key, value)?,
            "upsample" => m.upsample = choice(key, value, UPSAMPLES)?,
            "logvar_softplus" => m.logvar_softplus = boolean(key, value)?,
            "recon" => m.recon = choice(key, value, RECONS)?,
            "bernoulli_kl" => m.bernoulli_kl = choice(key, value, KL_MODES)?,
            "topology" => m.rbm.topology = choice(key, value, TOPOLOGIES)?,
            "chains" => m.rbm.chains = positive_int(key, value)?,
            "sweeps" => m.rbm.sweeps = parse(key, value, "a non-negative integer")?,
            "positive_phase" => m.rbm.positive_phase = choice(key, value, PHASES)?,
            "replay_fraction" => m.rbm.replay_fraction = unit_interval(key, value, true)?,
            "w_l2" => {
                m.rbm.w_l2 = real(key, value)?;
                if m.rbm.w_l2 < 0.0 {
                    return Err(invalid(key, "must be >= 0"));
                }
            }
            "entropy" => m.rbm.entropy = choice(key, value, ENTROPIES)?,
            "norm" => self.norm = choice(key, value, NORMS)?,
            "epochs" => self.train.epochs = positive_int(key, value)?,
            "minibatch" => self.train.minibatch = positive_int(key, value)?,
            "lr" => self.train.lr = positive_real(key, value)?,
            "adam_beta1" => self.train.adam_betas.0 = unit_interval(key, value, false)?,
            "adam_beta2" => self.train.adam_betas.1 = unit_interval(key, value, false)?,
            "checkpoint_every" => {
                self.train.checkpoint_every = parse(key, value, "a non-negative integer")?
            }
            "seed" => self.seed = parse(key, value, "an unsigned integer")?,
            "split" => {
                let fractions = list(key, value, |k, v| unit_interval(k, v, false))?;
                if !(2..=3).contains(&fractions.len()) {
                    return Err(invalid(
                        key,
                        "need train,test or train,validation,test fractions",
                    ));
                }
                if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid(key, "fractions must sum to 1"));
                }
                self.split.fractions = fractions;
            }
            "split_seed" => self.split.seed = parse(key, value, "an unsigned integer")?,
            "combine_train_val" => self.combine_train_val = boolean(key, value)?,
            "eval_split" => self.eval_split = choice(key, value, EVAL_SPLITS)?,
            "data" => self.data = DataSource::Csv(PathBuf::from(value)),
            "synth_n" => self.synth_mut().n_instances = positive_int(key, value)?,
            "synth_channels" => self.synth_mut().channels = positive_int(key, value)?,
            "synth_window" => self.synth_mut().window_len = positive_int(key, value)?,
            "synth_fraction" => {
                self.synth_mut().anomaly_fraction = unit_interval(key, value, false)?
            }
            "synth_kind" => self.synth_mut().anomaly_kind = choice(key, value, ANOMALY_KINDS)?,
            "synth_seed" => self.synth_mut().seed = parse(key, value, "an unsigned integer")?,
            "samples" => self.samples = positive_int(key, value)?,
            "transform" => self.transform = choice(key, value, TRANSFORMS)?,
            "threshold_source" => self.threshold_source = choice(key, value, SOURCES)?,
            "source_threshold" => self.source_threshold = Some(real(key, value)?),
            "source_report" => self.source_report = Some(PathBuf::from(value)),
            "anomaly_fraction" => self.anomaly_fraction = Some(unit_interval(key, value, false)?),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "post_train_epochs" => {
                self.post_train_epochs = parse(key, value, "a non-negative integer")?
            }
            "post_train_minibatch" => self.post_train_minibatch = positive_int(key, value)?,
            "sweep_latents" => self.sweep_latents = list(key, value, positive_int)?,
            "sweep_betas" => {
                self.sweep_betas = list(key, value, real)?;
                if self.sweep_betas.iter().any(|b| *b < 0.0) {
                    return Err(invalid(key, "betas must be >= 0"));
                }
            }
            "out" => self.out = PathBuf::from(value),
            _ => {
                return Err(CliError::UnknownKey {
                    key: key.to_string(),
                    line: None,
                })
            }
        }
        Ok(())
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn from_text(text: &str, base: Option<&Path>) -> CliResult<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Syntax {
                    line: i + 1,
                    msg: format!("expected 'key = value', got '{line}'"),
                });
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::UnknownKey {
                    key: k,
                    line: Some(i + 1),
                });
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, prev, _)| *prev == k) {
                return Err(CliError::Syntax {
                    line: i + 1,
                    msg: format!("key '{k}' already set on line {first}"),
                });
            }
            entries.push((i + 1, k, v));
        }
        if !entries.iter().any(|(_, k, _)| k == "seed") {
            return Err(CliError::Missing("seed".into()));
        }
        let mut cfg = RunConfig::default();
        entries.sort_by_key(|(_, k, _)| k != "profile");
        let mut split_seed_given = false;
        for (_, k, v) in &entries {
            cfg.set(k, v)?;
            split_seed_given |= k == "split_seed";
        }
        if !split_seed_given {
            cfg.split.seed = cfg.seed;
        }
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text, path.parent())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(p) = &mut self.data {
            fix(p);
        }
        for p in [&mut self.source_report, &mut self.checkpoint]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Cross-key checks and input-path existence.
    pub fn validate(&self) -> CliResult<()> {
        let m = &self.model;
        if m.filters.len() != 1 && m.filters.len() != m.kernels.len() {
            return Err(invalid("filters", "give one count or one per kernel"));
        }
        if m.recon == ReconMetric::Bce && self.norm != NormMode::Minmax {
            return Err(invalid(
                "norm",
                "bce reconstruction needs minmax normalization",
            ));
        }
        if m.prior == PriorKind::Rbm {
            m.rbm.topology.layer_sizes(m.latent).map_err(|_| {
                invalid(
                    "topology",
                    format!(
                        "bipartite_latent_space needs an even latent, got {}",
                        m.latent
                    ),
                )
            })?;
        }
        let (channels, window) = match &self.data {
            DataSource::Synth(s) => {
                s.validate()?;
                (s.channels, s.window_len)
            }
            DataSource::Csv(_) => (1, 8),
        };
        m.model_spec(channels, window)?;
        self.train.validate()?;
        if self.eval_split == EvalSplit::Validation
            && (self.split.fractions.len() < 3 || self.combine_train_val)
        {
            return Err(invalid(
                "eval_split",
                "validation needs a three-way split without combine_train_val",
            ));
        }
        if self.combine_train_val && self.split.fractions.len() < 3 {
            return Err(invalid("combine_train_val", "needs a three-way split"));
        }
        let needs_source = self.threshold_source != ThresholdSource::SelfRun;
        if needs_source && self.source_threshold.is_none() && self.source_report.is_none() {
            return Err(invalid(
                "threshold_source",
                "source_run and mixed need source_threshold or source_report",
            ));
        }
        let paths = [
            (
                "data",
                match &self.data {
                    DataSource::Csv(p) => Some(p),
                    DataSource::Synth(_) => None,
                },
            ),
            ("source_report", self.source_report.as_ref()),
            ("checkpoint", self.checkpoint.as_ref()),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(invalid(
                        key,
                        format!("path '{}' does not exist", p.display()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Every key but `out` with its effective value. Artifacts embed this, so
    /// the same run written to two directories produces identical files.
    pub fn snapshot(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let mut out: Vec<(&'static str, String)> = Vec::new();
        if let Some(p) = &self.profile {
            out.push(("profile", p.clone()));
        }
        out.extend([
            ("prior", name_of(&m.prior, PRIORS).into()),
            ("latent", m.latent.to_string()),
            ("beta", m.beta.to_string()),
            ("lambda", m.lambda.to_string()),
            ("filters", fmt_list(&m.filters)),
            ("kernels", fmt_list(&m.kernels)),
            ("blocks", m.blocks.to_string()),
            ("upsample", name_of(&m.upsample, UPSAMPLES).into()),
            ("logvar_softplus", m.logvar_softplus.to_string()),
            ("recon", name_of(&m.recon, RECONS).into()),
            ("bernoulli_kl", name_of(&m.bernoulli_kl, KL_MODES).into()),
            ("topology", name_of(&m.rbm.topology, TOPOLOGIES).into()),
            ("chains", m.rbm.chains.to_string()),
            ("sweeps", m.rbm.sweeps.to_string()),
            (
                "positive_phase",
                name_of(&m.rbm.positive_phase, PHASES).into(),
            ),
            ("replay_fraction", m.rbm.replay_fraction.to_string()),
            ("w_l2", m.rbm.w_l2.to_string()),
            ("entropy", name_of(&m.rbm.entropy, ENTROPIES).into()),
            ("norm", name_of(&self.norm, NORMS).into()),
            ("epochs", self.train.epochs.to_string()),
            ("minibatch", self.train.minibatch.to_string()),
            ("lr", self.train.lr.to_string()),
            ("adam_beta1", self.train.adam_betas.0.to_string()),
            ("adam_beta2", self.train.adam_betas.1.to_string()),
            ("checkpoint_every", self.train.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("split", fmt_list(&self.split.fractions)),
            ("split_seed", self.split.seed.to_string()),
            ("combine_train_val", self.combine_train_val.to_string()),
            ("eval_split", name_of(&self.eval_split, EVAL_SPLITS).into()),
        ]);
        match &self.data {
            DataSource::Csv(p) => out.push(("data", p.display().to_string())),
            DataSource::Synth(s) => {
                out.push(("synth_n", s.n_instances.to_string()));
                out.push(("synth_channels", s.channels.to_string()));
                out.push(("synth_window", s.window_len.to_string()));
                out.push(("synth_fraction", s.anomaly_fraction.to_string()));
                out.push(("synth_kind", name_of(&s.anomaly_kind, ANOMALY_KINDS).into()));
                out.push(("synth_seed", s.seed.to_string()));
            }
        }
        out.push(("samples", self.samples.to_string()));
        out.push(("transform", name_of(&self.transform, TRANSFORMS).into()));
        out.push(("threshold_source", self.threshold_source.as_str().into()));
        if let Some(t) = self.source_threshold {
            out.push(("source_threshold", t.to_string()));
        }
        if let Some(p) = &self.source_report {
            out.push(("source_report", p.display().to_string()));
        }
        if let Some(f) = self.anomaly_fraction {
            out.push(("anomaly_fraction", f.to_string()));
        }
        if let Some(p) = &self.checkpoint {
            out.push(("checkpoint", p.display().to_string()));
        }
        out.push(("post_train_epochs", self.post_train_epochs.to_string()));
        out.push((
            "post_train_minibatch",
            self.post_train_minibatch.to_string(),
        ));
        out.push(("sweep_latents", fmt_list(&self.sweep_latents)));
        out.push(("sweep_betas", fmt_list(&self.sweep_betas)));
        out
    }

    /// The snapshot plus the output directory, as config-file text.
    pub fn snapshot_text(&self) -> String {
        let mut text: String = self
            .snapshot()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        text.push_str(&format!("out = {}\n", self.out.display()));
        text
    }

    pub fn snapshot_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .snapshot()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect();
        serde_json::Value::Object(map)
    }

    /// Snapshot as `# key = value` comment lines for CSV artifacts.
    pub fn snapshot_comments(&self) -> Vec<String> {
        self.snapshot()
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }
}
