//! Deterministic flight-like multichannel windows with injected anomalies.
//!
//! Each window covers the first `window_len` steps after liftoff, scaled to a
//! 60-unit nominal clock. Continuous channels cycle through five signal
//! families (airspeed, altitude, pitch, engine thrust, heading); the two
//! binary channels are the gear-up step and flap retraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelKind, ChannelMeta, Dataset};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{permutation, standard_normal, stream, streams, substream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Airspeed (channel 0) drops by more than 20 units mid-window and stays low.
    LevelDrop,
    /// The gear-up step fires late in the window.
    DelayedStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_instances: usize,
    /// Total channels; the last two are binary.
    pub channels: usize,
    pub window_len: usize,
    pub anomaly_fraction: f64,
    pub anomaly_kind: AnomalyKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_instances: 2000,
            channels: 7,
            window_len: 60,
            anomaly_fraction: 0.05,
            anomaly_kind: AnomalyKind::LevelDrop,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::config("n_instances", "must be > 0"));
        }
        if self.channels < 3 {
            return Err(Error::config(
                "channels",
                "need at least one continuous and two binary channels",
            ));
        }
        if self.window_len < 8 {
            return Err(Error::config("window_len", "must be >= 8"));
        }
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 0.5) {
            return Err(Error::config("anomaly_fraction", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    pub fn n_anomalous(&self) -> usize {
        (self.anomaly_fraction * self.n_instances as f64 + 1e-9).floor() as usize
    }
}

const FAMILIES: [&str; 5] = ["airspeed", "altitude", "pitch", "engine", "heading"];

fn u(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn continuous(family: usize, t: f64, p: &[f64; 4], rng: &mut Stream) -> f64 {
    let noise = standard_normal(rng);
    match family {
        0 => p[0] + p[1] * t + 0.5 * noise,
        1 => p[0] * t + 2.0 * noise,
        2 => 8.0 + (p[0] - 8.0) * (1.0 - (-t / 4.0).exp()) + 0.3 * noise,
        3 => 92.0 + p[0] - 6.0 / (1.0 + (-(t - p[1]) / 2.0).exp()) + 0.3 * noise,
        _ => p[0] + 1.5 * (std::f64::consts::TAU * t / p[1] + p[2]).sin() + 0.3 * noise,
    }
}

fn family_params(family: usize, rng: &mut Stream) -> [f64; 4] {
    match family {
        0 => [u(rng, 140.0, 160.0), u(rng, 0.2, 0.5), 0.0, 0.0],
        1 => [u(rng, 20.0, 35.0), 0.0, 0.0, 0.0],
        2 => [u(rng, 12.0, 18.0), 0.0, 0.0, 0.0],
        3 => [u(rng, -2.0, 2.0), u(rng, 25.0, 40.0), 0.0, 0.0],
        _ => [
            u(rng, -5.0, 5.0),
            u(rng, 20.0, 40.0),
            u(rng, 0.0, std::f64::consts::TAU),
            0.0,
        ],
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, c, t_len) = (cfg.n_instances, cfg.channels, cfg.window_len);
    let n_cont = c - 2;
    let scale = t_len as f64 / 60.0;
    let mut labels = vec![false; n];
    for &i in permutation(n, &mut stream(cfg.seed, streams::SYNTH))
        .iter()
        .take(cfg.n_anomalous())
    {
        labels[i] = true;
    }
    let mut data = vec![0.0; n * c * t_len];
    for (i, &anomalous) in labels.iter().enumerate() {
        let mut rng = substream(cfg.seed, streams::SYNTH, i as u64);
        let gear = u(&mut rng, 3.0, 8.0);
        let flaps = u(&mut rng, 20.0, 40.0);
        let params: Vec<[f64; 4]> = (0..n_cont)
            .map(|ch| family_params(ch % 5, &mut rng))
            .collect();
        let drop_onset = u(&mut rng, 21.0, 36.0);
        let drop_size = u(&mut rng, 22.0, 30.0);
        let late_gear = u(&mut rng, 51.0, 57.0);
        let gear = if anomalous && cfg.anomaly_kind == AnomalyKind::DelayedStep {
            late_gear
        } else {
            gear
        };
        let base = i * c * t_len;
        for step in 0..t_len {
            let t = step as f64 / scale;
            for ch in 0..n_cont {
                let mut v = continuous(ch % 5, t, &params[ch], &mut rng);
                if ch == 0 && anomalous && cfg.anomaly_kind == AnomalyKind::LevelDrop {
                    // two-unit linear transition into the drop
                    v -= drop_size * ((t - drop_onset) / 2.0).clamp(0.0, 1.0);
                }
                data[base + ch * t_len + step] = v;
            }
            data[base + n_cont * t_len + step] = if t >= gear { 1.0 } else { 0.0 };
            data[base + (n_cont + 1) * t_len + step] = if t < flaps { 1.0 } else { 0.0 };
        }
    }
    let mut channels: Vec<ChannelMeta> = (0..n_cont)
        .map(|ch| ChannelMeta {
            name: if ch < 5 {
                FAMILIES[ch].to_string()
            } else {
                format!("{}_{}", FAMILIES[ch % 5], ch / 5)
            },
            kind: ChannelKind::Continuous,
        })
        .collect();
    for name in ["gear_up", "flaps"] {
        channels.push(ChannelMeta {
            name: name.into(),
            kind: ChannelKind::Binary,
        });
    }
    let width = (n.max(1) - 1).to_string().len();
    let ids = (0..n)
        .map(|i| format!("s{}-{i:0width$}", cfg.seed))
        .collect();
    Dataset::new(Tensor::new(vec![n, c, t_len], data)?, labels, ids, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_count_is_exact() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.n_anomalous(), 100);
        assert_eq!(ds.x.shape(), &[2000, 7, 60]);
        let cfg = SynthConfig {
            n_instances: 1000,
            anomaly_fraction: 0.0448,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap().n_anomalous(), 44);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig {
            n_instances: 50,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 2,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap().x,
            synth_generate(&other).unwrap().x
        );
    }

    #[test]
    fn level_drop_exceeds_twenty_units() {
        let cfg = SynthConfig {
            n_instances: 200,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let t = cfg.window_len;
        for i in (0..ds.len()).filter(|&i| ds.labels[i]) {
            let row = &ds.x.data()[i * 7 * t..i * 7 * t + t];
            // largest fall of the airspeed channel against its own trend
            let diffs: Vec<f64> = row.windows(2).map(|w| w[1] - w[0]).collect();
            let worst3: f64 = diffs
                .windows(3)
                .map(|w| w.iter().sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!(worst3 < -12.0, "instance {i}: {worst3}");
        }
    }

    #[test]
    fn delayed_step_fires_late() {
        let cfg = SynthConfig {
            n_instances: 100,
            anomaly_kind: AnomalyKind::DelayedStep,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let t = cfg.window_len;
        for i in 0..ds.len() {
            let gear = &ds.x.data()[(i * 7 + 5) * t..(i * 7 + 6) * t];
            let onset = gear.iter().position(|&g| g == 1.0).unwrap_or(t);
            if ds.labels[i] {
                assert!(onset >= 51, "{onset}");
            } else {
                assert!(onset <= 8, "{onset}");
            }
        }
    }
}
