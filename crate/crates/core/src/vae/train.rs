use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossTerms, Model, EVAL_CHUNK};
use crate::datapipe::Dataset;
use crate::diffcore::{AdamConfig, Mode};
use crate::error::{Error, Result};
use crate::rng::{permutation, stream, streams, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    /// Invoke the epoch hook with `checkpoint = true` every N epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            minibatch: 128,
            lr: 3e-4,
            seed: 1,
            adam_betas: (0.9, 0.999),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("minibatch", "must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", format!("must be > 0, got {}", self.lr)));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::config("adam_betas", "both must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
        }
    }
}

/// Losses for one split and epoch; `kl_weighted` is `beta * kl`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: SplitName,
    pub total: f64,
    pub recon: f64,
    pub kl_weighted: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub records: Vec<EpochRecord>,
    pub minibatches_per_epoch: usize,
    /// Posterior probabilities clamped by the Bernoulli KL, summed over training.
    pub clamped: usize,
}

impl TrainStats {
    pub fn split(&self, split: SplitName) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,total,recon,kl_weighted\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?}",
                r.epoch,
                r.split.as_str(),
                r.total,
                r.recon,
                r.kl_weighted
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut text = String::new();
        for c in comments.iter().flat_map(|c| c.lines()) {
            let _ = writeln!(text, "# {c}");
        }
        text.push_str(&self.to_csv());
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn record(epoch: usize, split: SplitName, sum: LossTerms, n: f64, beta: f64) -> EpochRecord {
    let recon = sum.recon / n;
    let kl_weighted = beta * (sum.kl / n);
    EpochRecord {
        epoch,
        split,
        total: recon + kl_weighted,
        recon,
        kl_weighted,
    }
}

/// Mean eval-mode loss over all of `ds`, with noise from the validation stream.
/// Leaves parameters, batch-norm statistics and chains untouched.
pub fn evaluate_loss(model: &Model, ds: &Dataset, seed: u64, epoch: usize) -> Result<LossTerms> {
    let mut rng = substream(seed, streams::VALIDATION, epoch as u64);
    let order = ds.canonical_order();
    let mut acc = LossTerms {
        total: 0.0,
        recon: 0.0,
        kl: 0.0,
        clamped: 0,
    };
    for chunk in order.chunks(EVAL_CHUNK) {
        let x = ds.x.select_rows(chunk);
        let noise = model.draw_noise(chunk.len(), &mut rng);
        let t = model.loss_terms(&x, &noise, Mode::Eval)?;
        let w = chunk.len() as f64;
        acc.total += w * t.total;
        acc.recon += w * t.recon;
        acc.kl += w * t.kl;
        acc.clamped += t.clamped;
    }
    let n = ds.len() as f64;
    Ok(LossTerms {
        total: acc.total / n,
        recon: acc.recon / n,
        kl: acc.kl / n,
        clamped: acc.clamped,
    })
}

/// Trains `model` in place. Equivalent to [`train_with`] without an epoch hook.
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    train_with(model, train_ds, val_ds, cfg, |_, _, _| Ok(()))
}

/// Minibatch Adam training. Minibatches are disjoint, drawn from a
/// seed-derived permutation of the id-sorted training set each epoch, and the
/// final partial minibatch is dropped. `on_epoch(epoch, model, checkpoint_due)`
/// runs after every epoch.
///
/// On a non-finite loss or gradient this returns [`Error::Diverged`] and the
/// model holds the parameters from the last successful step.
pub fn train_with<F>(
    model: &mut Model,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainStats>
where
    F: FnMut(usize, &Model, bool) -> Result<()>,
{
    cfg.validate()?;
    let m = cfg.minibatch;
    let batches = train_ds.len() / m;
    if batches == 0 {
        return Err(Error::config(
            "minibatch",
            format!("{m} exceeds the {} training instances", train_ds.len()),
        ));
    }
    let adam = cfg.adam();
    let beta = model.spec.beta;
    let canonical = train_ds.canonical_order();
    let mut noise_rng = stream(cfg.seed, streams::NOISE);
    let mut chain_rng = stream(cfg.seed, streams::CHAINS);
    let mut stats = TrainStats {
        minibatches_per_epoch: batches,
        ..TrainStats::default()
    };
    for epoch in 1..=cfg.epochs {
        let perm = permutation(
            canonical.len(),
            &mut substream(cfg.seed, streams::SHUFFLE, epoch as u64),
        );
        let mut sum = LossTerms {
            total: 0.0,
            recon: 0.0,
            kl: 0.0,
            clamped: 0,
        };
        for b in 0..batches {
            let idx: Vec<usize> = perm[b * m..(b + 1) * m]
                .iter()
                .map(|&p| canonical[p])
                .collect();
            let x = train_ds.x.select_rows(&idx);
            let noise = model.draw_noise(m, &mut noise_rng);
            let t = model
                .train_step(&x, &noise, &adam, &mut chain_rng)
                .map_err(|e| match e {
                    Error::NonFinite { context, index } => Error::Diverged {
                        epoch,
                        batch: b + 1,
                        detail: match index {
                            Some(i) => format!("{context} (element {i})"),
                            None => context,
                        },
                    },
                    other => other,
                })?;
            sum.recon += t.recon;
            sum.kl += t.kl;
            sum.clamped += t.clamped;
        }
        stats.clamped += sum.clamped;
        stats
            .records
            .push(record(epoch, SplitName::Train, sum, batches as f64, beta));
        if let Some(val) = val_ds.filter(|v| !v.is_empty()) {
            let t = evaluate_loss(model, val, cfg.seed, epoch)?;
            stats
                .records
                .push(record(epoch, SplitName::Validation, t, 1.0, beta));
        }
        let due = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        on_epoch(epoch, model, due)?;
    }
    Ok(stats)
}
