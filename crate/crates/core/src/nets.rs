//! Three-branch 1D convolutional encoder, its inverted decoder, and the
//! posterior heads.
//!
//! Encoder branch `j` applies `blocks_per_branch` blocks of
//! `conv1d -> batch-norm -> relu -> max-pool(2)`; branch outputs are
//! concatenated channelwise, flattened, and fed to the linear head(s).
//!
//! The decoder mirrors it: a linear layer (+ relu) restores the flattened
//! feature map, which is split back into per-branch channel groups. Each
//! branch runs `upsample(2) -> transposed conv -> batch-norm -> relu`, with
//! the final block mapping to `in_channels` without normalization. Branch
//! outputs are summed, the adjoint of fanning the input out to every branch.
//!
//! Parameter count, with `D = sum(F_j) * window_len / 2^blocks`:
//!
//! ```text
//! encoder branch j : C*F*k + 3F + (blocks-1) * (F*F*k + 3F)
//! encoder head     : (D*L + L) * (2 if gaussian else 1)
//! decoder linear   : L*D + D
//! decoder branch j : (blocks-1) * (F*F*k + 3F) + F*C*k + C
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Mode, NodeId, ParamId, ParamStore, Tensor, UpsampleMode};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Gaussian,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderOutput {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    /// Network window length; must be divisible by `2^blocks_per_branch`.
    pub window_len: usize,
    pub branches: Vec<Branch>,
    pub blocks_per_branch: usize,
    pub latent_dim: usize,
    pub head_kind: HeadKind,
    pub decoder_output: DecoderOutput,
    /// Route the log-variance estimate through a softplus (forces sigma >= 1).
    pub logvar_softplus: bool,
    pub upsample: UpsampleMode,
}

impl NetConfig {
    /// Default branch layout: kernels 3/5/7 with 32 filters each.
    pub fn default_branches() -> Vec<Branch> {
        [3, 5, 7]
            .into_iter()
            .map(|kernel| Branch {
                filters: 32,
                kernel,
            })
            .collect()
    }

    pub fn new(
        in_channels: usize,
        window_len: usize,
        latent_dim: usize,
        head_kind: HeadKind,
    ) -> Self {
        NetConfig {
            in_channels,
            window_len,
            branches: Self::default_branches(),
            blocks_per_branch: 2,
            latent_dim,
            head_kind,
            decoder_output: DecoderOutput::Linear,
            logvar_softplus: true,
            upsample: UpsampleMode::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.in_channels == 0 {
            violations.push("in_channels must be > 0".to_string());
        }
        if self.latent_dim == 0 {
            violations.push("latent_dim must be > 0".to_string());
        }
        if self.branches.is_empty() {
            violations.push("at least one branch is required".to_string());
        }
        if self.blocks_per_branch == 0 {
            violations.push("blocks_per_branch must be > 0".to_string());
        }
        for (j, b) in self.branches.iter().enumerate() {
            if b.filters == 0 {
                violations.push(format!("branch {j}: filters must be > 0"));
            }
            if b.kernel % 2 == 0 {
                violations.push(format!("branch {j}: kernel {} must be odd", b.kernel));
            }
        }
        let factor = 1usize << self.blocks_per_branch.min(30);
        if self.window_len == 0 || self.window_len % factor != 0 {
            violations.push(format!(
                "window_len {} must be a positive multiple of 2^blocks_per_branch = {factor}",
                self.window_len
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::config("net", violations.join("; ")))
        }
    }

    pub fn pooled_len(&self) -> usize {
        self.window_len >> self.blocks_per_branch
    }

    pub fn total_filters(&self) -> usize {
        self.branches.iter().map(|b| b.filters).sum()
    }

    /// Length of the flattened encoder feature vector.
    pub fn feature_dim(&self) -> usize {
        self.total_filters() * self.pooled_len()
    }

    /// Trainable scalar count of encoder + decoder (formula in module docs).
    pub fn param_count(&self) -> usize {
        let c = self.in_channels;
        let l = self.latent_dim;
        let d = self.feature_dim();
        let inner = self.blocks_per_branch - 1;
        let mut n = 0;
        for b in &self.branches {
            let (f, k) = (b.filters, b.kernel);
            n += c * f * k + 3 * f + inner * (f * f * k + 3 * f);
            n += inner * (f * f * k + 3 * f) + f * c * k + c;
        }
        let heads = match self.head_kind {
            HeadKind::Gaussian => 2,
            HeadKind::Bernoulli => 1,
        };
        n + heads * (d * l + l) + l * d + d
    }
}

/// Smallest multiple of `2^blocks` that is `>= len`.
pub fn padded_len(len: usize, blocks: usize) -> usize {
    let f = 1usize << blocks;
    len.div_ceil(f) * f
}

/// Right-pads `(B, C, T)` data to `target` steps by repeating the last value.
pub fn pad_edge(x: &Tensor, target: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || target < s[2] {
        return Err(Error::shape(
            "pad_edge",
            format!("{s:?} to length {target}"),
        ));
    }
    if target == s[2] {
        return Ok(x.clone());
    }
    let t = s[2];
    let rows = s[0] * s[1];
    let mut data = Vec::with_capacity(rows * target);
    for r in 0..rows {
        let row = &x.data()[r * t..(r + 1) * t];
        data.extend_from_slice(row);
        data.extend(std::iter::repeat(row[t - 1]).take(target - t));
    }
    Tensor::new(vec![s[0], s[1], target], data)
}

fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Clone, Debug)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    prefix: String,
}

impl BnIds {
    fn register(store: &mut ParamStore, prefix: String, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0))?;
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
        store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?;
        store.add_buffer(
            format!("{prefix}.running_var"),
            Tensor::full(&[channels], 1.0),
        )?;
        Ok(BnIds {
            gamma,
            beta,
            prefix,
        })
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        let missing = || Error::Usage(format!("missing running statistics for {}", self.prefix));
        let rm = store
            .buffer(&format!("{}.running_mean", self.prefix))
            .ok_or_else(missing)?;
        let rv = store
            .buffer(&format!("{}.running_var", self.prefix))
            .ok_or_else(missing)?;
        g.batch_norm(x, gamma, beta, (rm, rv), &self.prefix)
    }
}

#[derive(Clone, Debug)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

impl LinearIds {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            format!("{prefix}.w"),
            uniform_init(&[d_in, d_out], d_in, rng),
        )?;
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[d_out]))?;
        Ok(LinearIds { w, b })
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        g.linear(x, w, b)
    }

    pub fn ids(&self) -> (ParamId, ParamId) {
        (self.w, self.b)
    }
}

/// Graph nodes of the posterior parameters, each `(B, latent_dim)`.
#[derive(Clone, Copy, Debug)]
pub enum HeadNodes {
    Gaussian { mu: NodeId, logvar: NodeId },
    Bernoulli { log_alpha: NodeId },
}

/// Evaluated posterior parameters for a batch, each `(B, latent_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorHead {
    Gaussian { mu: Tensor, logvar: Tensor },
    Bernoulli { log_alpha_q: Tensor },
}

impl PosteriorHead {
    pub fn batch_size(&self) -> usize {
        match self {
            PosteriorHead::Gaussian { mu, .. } => mu.shape()[0],
            PosteriorHead::Bernoulli { log_alpha_q } => log_alpha_q.shape()[0],
        }
    }
}

#[derive(Clone, Debug)]
enum HeadIds {
    Gaussian { mu: LinearIds, logvar: LinearIds },
    Bernoulli { logit: LinearIds },
}

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: NetConfig,
    branches: Vec<Vec<(ConvIds, BnIds)>>,
    head: HeadIds,
}

/// Registers encoder parameters in `store` and returns the handle.
pub fn build_encoder<R: Rng + ?Sized>(
    cfg: &NetConfig,
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<Encoder> {
    cfg.validate()?;
    let mut branches = Vec::new();
    for (j, br) in cfg.branches.iter().enumerate() {
        let mut blocks = Vec::new();
        let mut c_in = cfg.in_channels;
        for i in 0..cfg.blocks_per_branch {
            let p = format!("enc.b{j}.l{i}");
            let fan = c_in * br.kernel;
            let w = store.add(
                format!("{p}.conv.w"),
                uniform_init(&[br.filters, c_in, br.kernel], fan, rng),
            )?;
            let b = store.add(format!("{p}.conv.b"), Tensor::zeros(&[br.filters]))?;
            let bn = BnIds::register(store, format!("{p}.bn"), br.filters)?;
            blocks.push((ConvIds { w, b }, bn));
            c_in = br.filters;
        }
        branches.push(blocks);
    }
    let d = cfg.feature_dim();
    let l = cfg.latent_dim;
    let head = match cfg.head_kind {
        HeadKind::Gaussian => HeadIds::Gaussian {
            mu: LinearIds::register(store, "enc.mu", d, l, rng)?,
            logvar: LinearIds::register(store, "enc.logvar", d, l, rng)?,
        },
        HeadKind::Bernoulli => HeadIds::Bernoulli {
            logit: LinearIds::register(store, "enc.logit", d, l, rng)?,
        },
    };
    Ok(Encoder {
        cfg: cfg.clone(),
        branches,
        head,
    })
}

impl Encoder {
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Parameter ids of the head's linear layer(s), `(weight, bias)` pairs.
    pub fn head_params(&self) -> Vec<(ParamId, ParamId)> {
        match &self.head {
            HeadIds::Gaussian { mu, logvar } => vec![mu.ids(), logvar.ids()],
            HeadIds::Bernoulli { logit } => vec![logit.ids()],
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != self.cfg.in_channels || shape[2] != self.cfg.window_len {
            return Err(Error::shape(
                "encode",
                format!(
                    "expected (B, {}, {}), got {shape:?}",
                    self.cfg.in_channels, self.cfg.window_len
                ),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<HeadNodes> {
        self.check_input(g.shape(x))?;
        let batch = g.shape(x)[0];
        let mut outs = Vec::with_capacity(self.branches.len());
        for blocks in &self.branches {
            let mut h = x;
            for (conv, bn) in blocks {
                let w = g.param(store, conv.w)?;
                let b = g.param(store, conv.b)?;
                h = g.conv1d(h, w, b)?;
                h = bn.apply(g, store, h)?;
                h = g.relu(h)?;
                h = g.max_pool2(h)?;
            }
            outs.push(h);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        let flat = g.reshape(cat, &[batch, self.cfg.feature_dim()])?;
        Ok(match &self.head {
            HeadIds::Gaussian { mu, logvar } => {
                let m = mu.apply(g, store, flat)?;
                let lv = logvar.apply(g, store, flat)?;
                let lv = if self.cfg.logvar_softplus {
                    g.softplus(lv)?
                } else {
                    lv
                };
                HeadNodes::Gaussian { mu: m, logvar: lv }
            }
            HeadIds::Bernoulli { logit } => HeadNodes::Bernoulli {
                log_alpha: logit.apply(g, store, flat)?,
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: NetConfig,
    fc: LinearIds,
    /// Per branch: inner blocks (transposed conv + batch-norm), then output conv.
    branches: Vec<(Vec<(ConvIds, BnIds)>, ConvIds)>,
}

pub fn build_decoder<R: Rng + ?Sized>(
    cfg: &NetConfig,
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<Decoder> {
    cfg.validate()?;
    let fc = LinearIds::register(store, "dec.fc", cfg.latent_dim, cfg.feature_dim(), rng)?;
    let mut branches = Vec::new();
    for (j, br) in cfg.branches.iter().enumerate() {
        let f = br.filters;
        let mut inner = Vec::new();
        for i in 0..cfg.blocks_per_branch - 1 {
            let p = format!("dec.b{j}.l{i}");
            let w = store.add(
                format!("{p}.tconv.w"),
                uniform_init(&[f, f, br.kernel], f * br.kernel, rng),
            )?;
            let b = store.add(format!("{p}.tconv.b"), Tensor::zeros(&[f]))?;
            let bn = BnIds::register(store, format!("{p}.bn"), f)?;
            inner.push((ConvIds { w, b }, bn));
        }
        let c = cfg.in_channels;
        let w = store.add(
            format!("dec.b{j}.out.w"),
            uniform_init(&[f, c, br.kernel], f * br.kernel, rng),
        )?;
        let b = store.add(format!("dec.b{j}.out.b"), Tensor::zeros(&[c]))?;
        branches.push((inner, ConvIds { w, b }));
    }
    Ok(Decoder {
        cfg: cfg.clone(),
        fc,
        branches,
    })
}

impl Decoder {
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Pre-activation output `(B, in_channels, window_len)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: NodeId) -> Result<NodeId> {
        let s = g.shape(z);
        if s.len() != 2 || s[1] != self.cfg.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("expected (B, {}), got {s:?}", self.cfg.latent_dim),
            ));
        }
        let batch = s[0];
        let h = self.fc.apply(g, store, z)?;
        let h = g.relu(h)?;
        let h = g.reshape(h, &[batch, self.cfg.total_filters(), self.cfg.pooled_len()])?;
        let mut offset = 0;
        let mut outs = Vec::with_capacity(self.branches.len());
        for ((inner, out), br) in self.branches.iter().zip(&self.cfg.branches) {
            let mut y = if self.branches.len() == 1 {
                h
            } else {
                g.narrow(h, 1, offset, br.filters)?
            };
            offset += br.filters;
            for (conv, bn) in inner {
                y = g.upsample2(y, self.cfg.upsample)?;
                let w = g.param(store, conv.w)?;
                let b = g.param(store, conv.b)?;
                y = g.conv_transpose1d(y, w, b)?;
                y = bn.apply(g, store, y)?;
                y = g.relu(y)?;
            }
            y = g.upsample2(y, self.cfg.upsample)?;
            let w = g.param(store, out.w)?;
            let b = g.param(store, out.b)?;
            y = g.conv_transpose1d(y, w, b)?;
            outs.push(y);
        }
        let mut acc = outs[0];
        for &o in &outs[1..] {
            acc = g.add(acc, o)?;
        }
        Ok(acc)
    }

    /// Applies the configured output activation to pre-activation logits.
    pub fn activate(&self, g: &mut Graph, logits: NodeId) -> Result<NodeId> {
        match self.cfg.decoder_output {
            DecoderOutput::Linear => Ok(logits),
            DecoderOutput::Sigmoid => g.sigmoid(logits),
        }
    }
}

/// Eval-mode encoding of a `(B, C, T)` batch.
pub fn encode(net: &Encoder, store: &ParamStore, x: &Tensor) -> Result<PosteriorHead> {
    net.check_input(x.shape())?;
    let mut g = Graph::new(Mode::Eval);
    let xi = g.input(x.clone())?;
    Ok(match net.forward(&mut g, store, xi)? {
        HeadNodes::Gaussian { mu, logvar } => PosteriorHead::Gaussian {
            mu: g.value(mu).clone(),
            logvar: g.value(logvar).clone(),
        },
        HeadNodes::Bernoulli { log_alpha } => PosteriorHead::Bernoulli {
            log_alpha_q: g.value(log_alpha).clone(),
        },
    })
}

/// Eval-mode decoding of a `(B, latent_dim)` batch, output activation applied.
pub fn decode(net: &Decoder, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new(Mode::Eval);
    let zi = g.input(z.clone())?;
    let logits = net.forward(&mut g, store, zi)?;
    let out = net.activate(&mut g, logits)?;
    Ok(g.value(out).clone())
}
