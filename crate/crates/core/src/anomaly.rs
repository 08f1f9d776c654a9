//! Reconstruction-error anomaly scores, the normal-quantile threshold,
//! classification and precision/recall/F1.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::Dataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::priors::{Q_MAX, Q_MIN};
use crate::vae::{Model, ReconMetric};

pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreTransform {
    #[default]
    None,
    Log,
    Sqrt,
    Inverse,
}

impl ScoreTransform {
    /// Log for MSE pipelines, untransformed for BCE.
    pub fn default_for(metric: ReconMetric) -> Self {
        match metric {
            ReconMetric::Mse => ScoreTransform::Log,
            ReconMetric::Bce => ScoreTransform::None,
        }
    }

    pub fn apply(self, s: f64) -> f64 {
        let s = s.max(SCORE_FLOOR);
        match self {
            ScoreTransform::None => s,
            ScoreTransform::Log => s.ln(),
            ScoreTransform::Sqrt => s.sqrt(),
            // negated so that larger errors stay larger
            ScoreTransform::Inverse => -1.0 / s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub metric: ReconMetric,
    pub transform: ScoreTransform,
}

impl ScoreVector {
    pub fn transformed(&self) -> bool {
        self.transform != ScoreTransform::None
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Score of one instance, `x` and `x_hat` laid out `(C, T)` with `window_len = T`.
/// MSE is the mean squared error over all elements; BCE the summed cross-entropy.
pub fn score(x: &[f64], x_hat: &[f64], metric: ReconMetric, window_len: usize) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() || window_len == 0 || x.len() % window_len != 0 {
        return Err(Error::shape(
            "score",
            format!(
                "x has {} elements, x_hat {} (window {window_len})",
                x.len(),
                x_hat.len()
            ),
        ));
    }
    match metric {
        ReconMetric::Mse => Ok(x
            .iter()
            .zip(x_hat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.len() as f64),
        ReconMetric::Bce => {
            let mut s = 0.0;
            for (i, (&a, &b)) in x.iter().zip(x_hat).enumerate() {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::domain(
                        "bce score",
                        format!(
                            "x = {a} outside [0, 1] in channel {}, step {}",
                            i / window_len,
                            i % window_len
                        ),
                    ));
                }
                let q = b.clamp(Q_MIN, Q_MAX);
                s -= a * q.ln() + (1.0 - a) * (1.0 - q).ln();
            }
            Ok(s)
        }
    }
}

/// Per-instance scores of `(N, C, T)` batches.
pub fn score_batch(x: &Tensor, x_hat: &Tensor, metric: ReconMetric) -> Result<ScoreVector> {
    if x.shape() != x_hat.shape() || x.rank() != 3 {
        return Err(Error::shape(
            "score_batch",
            format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        ));
    }
    let (n, t) = (x.shape()[0], x.shape()[2]);
    let per = x.len() / n.max(1);
    let scores = (0..n)
        .map(|i| {
            score(
                &x.data()[i * per..(i + 1) * per],
                &x_hat.data()[i * per..(i + 1) * per],
                metric,
                t,
            )
        })
        .collect::<Result<_>>()?;
    Ok(ScoreVector {
        scores,
        metric,
        transform: ScoreTransform::None,
    })
}

pub fn transform_scores(sv: &ScoreVector, transform: ScoreTransform) -> Result<ScoreVector> {
    if sv.transformed() {
        return Err(Error::Usage(format!(
            "scores already carry a {:?} transform",
            sv.transform
        )));
    }
    Ok(ScoreVector {
        scores: sv.scores.iter().map(|&s| transform.apply(s)).collect(),
        metric: sv.metric,
        transform,
    })
}

/// Natural log of every score, floored at [`SCORE_FLOOR`].
pub fn log_transform(sv: &ScoreVector) -> Result<ScoreVector> {
    transform_scores(sv, ScoreTransform::Log)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_cdf`] by safeguarded Newton iteration.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(
            "normal_quantile",
            format!("p must lie in (0, 1), got {p}"),
        ));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let mut z = 0.0;
    for _ in 0..200 {
        let f = normal_cdf(z) - p;
        if f == 0.0 {
            return Ok(z);
        }
        if f < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let step = z - f / pdf;
        let next = if pdf > 0.0 && step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if (next - z).abs() <= 1e-15 * z.abs().max(1.0) {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub mean: f64,
    pub sd: f64,
    pub z: f64,
    /// Scores were constant, so the threshold collapsed to their mean.
    pub degenerate: bool,
}

/// `mean + z * sd` with `z` the normal quantile at `1 - anomaly_fraction`
/// and `sd` the population standard deviation.
pub fn threshold(scores: &[f64], anomaly_fraction: f64) -> Result<Threshold> {
    if !(anomaly_fraction > 0.0 && anomaly_fraction < 1.0) {
        return Err(Error::domain(
            "threshold",
            format!("anomaly fraction must lie in (0, 1), got {anomaly_fraction}"),
        ));
    }
    if scores.is_empty() {
        return Err(Error::domain("threshold", "no scores"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "threshold scores".into(),
            index: Some(i),
        });
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
    let z = normal_quantile(1.0 - anomaly_fraction)?;
    Ok(Threshold {
        value: mean + z * sd,
        mean,
        sd,
        z,
        degenerate: sd == 0.0,
    })
}

/// `true` (anomalous) iff `score >= thr`.
pub fn classify(scores: &[f64], thr: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= thr).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predicted positives; precision reported as 0.
    pub precision_undefined: bool,
    /// No true positives in the ground truth; recall reported as 0.
    pub recall_undefined: bool,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(pred: &[bool], truth: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1: f1_score(precision, recall),
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Threshold from the evaluated model's own training scores.
    #[default]
    #[serde(rename = "self")]
    SelfRun,
    /// Threshold carried over from the source run.
    SourceRun,
    /// Average of the self and source thresholds.
    Mixed,
}

impl ThresholdSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdSource::SelfRun => "self",
            ThresholdSource::SourceRun => "source_run",
            ThresholdSource::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for ThresholdSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(ThresholdSource::SelfRun),
            "source_run" => Ok(ThresholdSource::SourceRun),
            "mixed" => Ok(ThresholdSource::Mixed),
            other => Err(Error::config(
                "threshold_source",
                format!("expected self, source_run or mixed, got '{other}'"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    /// Defaults to [`ScoreTransform::default_for`] the model's metric.
    pub transform: Option<ScoreTransform>,
    pub threshold_source: ThresholdSource,
    pub source_threshold: Option<f64>,
    /// Used only when the training labels contain no anomalies.
    pub anomaly_fraction: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: 10,
            transform: None,
            threshold_source: ThresholdSource::SelfRun,
            source_threshold: None,
            anomaly_fraction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub threshold_self: f64,
    pub threshold_source: ThresholdSource,
    pub source_threshold: Option<f64>,
    pub degenerate_threshold: bool,
    pub anomaly_fraction: f64,
    pub samples: usize,
    pub metric: ReconMetric,
    pub transform: ScoreTransform,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Metrics,
    pub instance_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub predicted: Vec<bool>,
    pub truth: Vec<bool>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    /// JSON summary (everything but the per-instance table).
    pub fn summary_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["instance_ids", "scores", "predicted", "truth"] {
                obj.remove(key);
            }
        }
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }

    pub fn instances_csv(&self) -> String {
        let mut out = String::from("instance_id,score,predicted,truth\n");
        for i in 0..self.scores.len() {
            let _ = writeln!(
                out,
                "{},{:?},{},{}",
                self.instance_ids[i], self.scores[i], self.predicted[i] as u8, self.truth[i] as u8
            );
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.json")), self.summary_json())?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.instances_csv())?;
        Ok(())
    }
}

/// `samples` independent single-reconstruction score passes over `ds`, each transformed.
pub fn score_passes<R: Rng + ?Sized>(
    model: &Model,
    ds: &Dataset,
    samples: usize,
    transform: ScoreTransform,
    rng: &mut R,
) -> Result<Vec<ScoreVector>> {
    let metric = model.spec.recon_metric;
    let x = match metric {
        ReconMetric::Mse => ds.x.clone(),
        ReconMetric::Bce => ds.x.map(|v| v.clamp(0.0, 1.0)),
    };
    model
        .reconstruct(&ds.x, samples, rng)?
        .iter()
        .map(|x_hat| transform_scores(&score_batch(&x, x_hat, metric)?, transform))
        .collect()
}

fn mean_scores(passes: &[ScoreVector]) -> Vec<f64> {
    let n = passes[0].len();
    (0..n)
        .map(|i| passes.iter().map(|p| p.scores[i]).sum::<f64>() / passes.len() as f64)
        .collect()
}

/// Thresholds on the training set, scores the test set and compares the
/// predictions with the test labels. Both the threshold and the per-instance
/// test scores are averaged over `samples` passes on the transformed scale.
pub fn evaluate_model<R: Rng + ?Sized>(
    model: &Model,
    train_ds: &Dataset,
    test_ds: &Dataset,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<EvalReport> {
    if opts.samples == 0 {
        return Err(Error::config("samples", "must be >= 1"));
    }
    let metric = model.spec.recon_metric;
    let transform = opts
        .transform
        .unwrap_or(ScoreTransform::default_for(metric));
    let fraction = if train_ds.n_anomalous() > 0 {
        train_ds.anomaly_fraction()
    } else {
        opts.anomaly_fraction.ok_or_else(|| {
            Error::config(
                "anomaly_fraction",
                "training labels contain no anomalies; set the fraction explicitly",
            )
        })?
    };
    let train_passes = score_passes(model, train_ds, opts.samples, transform, rng)?;
    let mut thr_sum = 0.0;
    let mut degenerate = false;
    for p in &train_passes {
        let t = threshold(&p.scores, fraction)?;
        thr_sum += t.value;
        degenerate |= t.degenerate;
    }
    let threshold_self = thr_sum / opts.samples as f64;
    let threshold = match opts.threshold_source {
        ThresholdSource::SelfRun => threshold_self,
        src => {
            let source = opts.source_threshold.ok_or_else(|| {
                Error::config(
                    "threshold_source",
                    format!("{} needs a source-run threshold", src.as_str()),
                )
            })?;
            if src == ThresholdSource::SourceRun {
                source
            } else {
                0.5 * (threshold_self + source)
            }
        }
    };
    let scores = mean_scores(&score_passes(model, test_ds, opts.samples, transform, rng)?);
    let predicted = classify(&scores, threshold);
    let counts = metrics(&predicted, &test_ds.labels)?;
    Ok(EvalReport {
        threshold,
        threshold_self,
        threshold_source: opts.threshold_source,
        source_threshold: opts.source_threshold,
        degenerate_threshold: degenerate,
        anomaly_fraction: fraction,
        samples: opts.samples,
        metric,
        transform,
        precision: counts.precision,
        recall: counts.recall,
        f1: counts.f1,
        counts,
        instance_ids: test_ds.instance_ids.clone(),
        scores,
        predicted,
        truth: test_ds.labels.clone(),
        config: serde_json::Value::Null,
        seeds: Vec::new(),
    })
}
