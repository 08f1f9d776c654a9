//! Datasets of fixed-length multichannel windows: ingestion, per-channel
//! normalization, stratified splitting and a synthetic generator.

mod csv;
mod synth;

pub use self::csv::{load_csv, write_csv, CsvSchema};
pub use self::synth::{synth_generate, AnomalyKind, SynthConfig};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub name: String,
    pub kind: ChannelKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Zscore,
    Minmax,
}

/// Per-channel statistics: `x' = (x - center) / scale`.
///
/// For z-scoring `center` is the mean and `scale` the population standard
/// deviation; for min-max they are the minimum and the range. Degenerate
/// channels (zero spread) are only centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl NormStats {
    fn forward(&self, c: usize, v: f64) -> f64 {
        if self.degenerate[c] {
            v - self.center[c]
        } else {
            (v - self.center[c]) / self.scale[c]
        }
    }

    fn inverse(&self, c: usize, v: f64) -> f64 {
        if self.degenerate[c] {
            v + self.center[c]
        } else {
            v * self.scale[c] + self.center[c]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(N, C, T)` instance windows.
    pub x: Tensor,
    pub labels: Vec<bool>,
    pub instance_ids: Vec<String>,
    pub channels: Vec<ChannelMeta>,
    pub norm: Option<NormStats>,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        labels: Vec<bool>,
        instance_ids: Vec<String>,
        channels: Vec<ChannelMeta>,
    ) -> Result<Self> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::shape(
                "Dataset",
                format!("instances must be (N, C, T), got {s:?}"),
            ));
        }
        if labels.len() != s[0] || instance_ids.len() != s[0] || channels.len() != s[1] {
            return Err(Error::shape(
                "Dataset",
                format!(
                    "{s:?} with {} labels, {} ids, {} channel descriptors",
                    labels.len(),
                    instance_ids.len(),
                    channels.len()
                ),
            ));
        }
        Ok(Dataset {
            x,
            labels,
            instance_ids,
            channels,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn window_len(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn n_anomalous(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.n_anomalous() as f64 / self.len() as f64
    }

    /// Instances at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            instance_ids: idx.iter().map(|&i| self.instance_ids[i].clone()).collect(),
            channels: self.channels.clone(),
            norm: self.norm.clone(),
        }
    }

    /// Concatenates datasets with identical channel layout and normalization.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("nothing to concatenate".into()))?;
        if parts
            .iter()
            .any(|p| p.channels != first.channels || p.norm != first.norm)
        {
            return Err(Error::Usage(
                "datasets differ in channels or normalization".into(),
            ));
        }
        let x = Tensor::stack_rows(&parts.iter().map(|p| p.x.clone()).collect::<Vec<_>>())?;
        Ok(Dataset {
            x,
            labels: parts
                .iter()
                .flat_map(|p| p.labels.iter().copied())
                .collect(),
            instance_ids: parts
                .iter()
                .flat_map(|p| p.instance_ids.iter().cloned())
                .collect(),
            channels: first.channels.clone(),
            norm: first.norm.clone(),
        })
    }

    /// Indices ordered by instance id, ties kept in storage order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.instance_ids[a].cmp(&self.instance_ids[b]));
        idx
    }

    fn map_channels(&mut self, f: impl Fn(usize, f64) -> f64) {
        let (c, t) = (self.n_channels(), self.window_len());
        for (i, v) in self.x.data_mut().iter_mut().enumerate() {
            *v = f((i / t) % c, *v);
        }
    }
}

/// Fits per-channel statistics on `ds` (which must be unnormalized).
pub fn fit_stats(ds: &Dataset, mode: NormMode) -> NormStats {
    let (c, t) = (ds.n_channels(), ds.window_len());
    let mut center = vec![0.0; c];
    let mut scale = vec![0.0; c];
    let mut degenerate = vec![false; c];
    for ch in 0..c {
        let values = (0..ds.len()).flat_map(|n| {
            let off = (n * c + ch) * t;
            ds.x.data()[off..off + t].iter().copied()
        });
        match mode {
            NormMode::Zscore => {
                let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
                for v in values {
                    count += 1.0;
                    let d = v - mean;
                    mean += d / count;
                    m2 += d * (v - mean);
                }
                center[ch] = mean;
                scale[ch] = (m2 / count).sqrt();
            }
            NormMode::Minmax => {
                let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                center[ch] = lo;
                scale[ch] = hi - lo;
            }
        }
        degenerate[ch] = !(scale[ch] > 0.0);
    }
    NormStats {
        mode,
        center,
        scale,
        degenerate,
    }
}

/// Normalizes per channel, fitting statistics on `ds` unless `stats` is given.
///
/// A dataset that already carries statistics is first mapped back to its
/// raw scale, so applying the same statistics twice is a no-op.
pub fn normalize(ds: &Dataset, mode: NormMode, stats: Option<&NormStats>) -> Result<Dataset> {
    if let Some(s) = stats {
        if s.mode != mode {
            return Err(Error::config(
                "norm",
                format!("stats are {:?} but {mode:?} was requested", s.mode),
            ));
        }
        if s.center.len() != ds.n_channels()
            || s.scale.len() != ds.n_channels()
            || s.degenerate.len() != ds.n_channels()
        {
            return Err(Error::shape(
                "normalize",
                format!(
                    "stats for {} channels, data has {}",
                    s.center.len(),
                    ds.n_channels()
                ),
            ));
        }
        if ds.norm.as_ref() == Some(s) {
            return Ok(ds.clone());
        }
    }
    let mut out = ds.clone();
    if let Some(old) = ds.norm.clone() {
        out.map_channels(|c, v| old.inverse(c, v));
        out.norm = None;
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_stats(&out, mode),
    };
    out.map_channels(|c, v| stats.forward(c, v));
    out.norm = Some(stats);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::config("split", "fractions must be positive"));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                format!("fractions must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }
}

/// Sizes `floor(f_i N)` with the remainder added to the first part.
fn split_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;
    sizes
}

/// Distributes `k` positives over parts of the given sizes, each within one
/// instance of its proportional share (largest-remainder rounding).
fn stratum_quota(k: usize, n: usize, sizes: &[usize]) -> Vec<usize> {
    let shares: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * k as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        (shares[b] - shares[b].floor())
            .total_cmp(&(shares[a] - shares[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = k - quota.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[i] < sizes[i] {
            quota[i] += 1;
            left -= 1;
        }
    }
    quota
}

/// Seed-derived, label-stratified partition of `ds`.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let n = ds.len();
    let sizes = split_sizes(n, &spec.fractions);
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(
            "split",
            format!("part {i} would be empty for {n} instances"),
        ));
    }
    let order = ds.canonical_order();
    let mut pos: Vec<usize> = order.iter().copied().filter(|&i| ds.labels[i]).collect();
    let mut neg: Vec<usize> = order.iter().copied().filter(|&i| !ds.labels[i]).collect();
    let mut rng = stream(spec.seed, streams::SPLIT);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let quota = stratum_quota(pos.len(), n, &sizes);
    let (mut p, mut q) = (pos.into_iter(), neg.into_iter());
    let mut parts = Vec::with_capacity(sizes.len());
    for (size, k) in sizes.iter().zip(quota) {
        let mut idx: Vec<usize> = p
            .by_ref()
            .take(k)
            .chain(q.by_ref().take(size - k))
            .collect();
        idx.sort_unstable();
        parts.push(ds.subset(&idx));
    }
    Ok(parts)
}
