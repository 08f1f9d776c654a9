//! The three trainable models (Gaussian, Bernoulli and RBM priors), the
//! beta-weighted ELBO loss, checkpointing and posterior reconstruction.

pub mod toy;
mod train;

pub use train::{
    evaluate_loss, train, train_with, EpochRecord, SplitName, TrainConfig, TrainStats,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    apply_bn_updates, AdamConfig, AdamState, Checkpoint, Graph, Mode, NodeId, ParamId, ParamStore,
    Tensor, UpsampleMode,
};
use crate::error::{Error, Result};
use crate::nets::{
    build_decoder, build_encoder, decode, encode, pad_edge, padded_len, Branch, Decoder,
    DecoderOutput, Encoder, HeadKind, HeadNodes, NetConfig, PosteriorHead,
};
use crate::priors::{
    bernoulli_log_mass_node, concrete_log_density_node, concrete_node, kl_bernoulli_node,
    kl_gaussian_node, relaxed_log_mass_node, reparameterize_node, KlMode,
};
use crate::rbm::{
    self, positive_hidden, rbm_kl_node, PositivePhase, RbmChains, RbmNodes, RbmParams, Topology,
};
use crate::rng::{open_uniform, standard_normal, stream, streams, SliceUniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gaussian,
    Bernoulli,
    Rbm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMetric {
    Mse,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmSpec {
    pub topology: Topology,
    pub chains: usize,
    pub sweeps: usize,
    pub positive_phase: PositivePhase,
    /// Fraction of chains re-randomized before each update (0 disables).
    pub replay_fraction: f64,
    /// L2 penalty on the couplings, counted in the KL term.
    pub w_l2: f64,
    #[serde(default)]
    pub entropy: EntropyForm,
}

/// How `log q(z|x)` enters the rbm KL during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyForm {
    /// Log-density of the concrete distribution at the relaxed sample.
    #[default]
    Concrete,
    /// Bernoulli log-mass `z log q + (1 - z) log(1 - q)` at the relaxed sample.
    RelaxedMass,
}

impl Default for RbmSpec {
    fn default() -> Self {
        RbmSpec {
            topology: Topology::Augmented,
            chains: 500,
            sweeps: 20,
            positive_phase: PositivePhase::default(),
            replay_fraction: 0.0,
            w_l2: 0.0,
            entropy: EntropyForm::Concrete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub prior_kind: PriorKind,
    pub net: NetConfig,
    /// Raw window length; inputs are edge-padded to `net.window_len`.
    pub input_len: usize,
    pub beta: f64,
    /// Concrete temperature (discrete priors).
    pub lambda: f64,
    pub bernoulli_kl: KlMode,
    pub rbm: Option<RbmSpec>,
    pub recon_metric: ReconMetric,
}

impl ModelSpec {
    /// Default architecture for `(channels, input_len)` windows.
    pub fn new(
        prior_kind: PriorKind,
        channels: usize,
        input_len: usize,
        latent_dim: usize,
        recon_metric: ReconMetric,
    ) -> Self {
        let head = match prior_kind {
            PriorKind::Gaussian => HeadKind::Gaussian,
            _ => HeadKind::Bernoulli,
        };
        let mut net = NetConfig::new(channels, padded_len(input_len, 2), latent_dim, head);
        net.decoder_output = match recon_metric {
            ReconMetric::Mse => DecoderOutput::Linear,
            ReconMetric::Bce => DecoderOutput::Sigmoid,
        };
        ModelSpec {
            prior_kind,
            net,
            input_len,
            beta: 1.0,
            lambda: 0.1,
            bernoulli_kl: KlMode::Mc,
            rbm: (prior_kind == PriorKind::Rbm).then(RbmSpec::default),
            recon_metric,
        }
    }

    /// Replaces the branch layout and re-derives the padded window length.
    pub fn with_branches(mut self, branches: Vec<Branch>, blocks: usize) -> Self {
        self.net.branches = branches;
        self.net.blocks_per_branch = blocks;
        self.net.window_len = padded_len(self.input_len, blocks);
        self
    }

    pub fn with_upsample(mut self, mode: UpsampleMode) -> Self {
        self.net.upsample = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let expect_head = match self.prior_kind {
            PriorKind::Gaussian => HeadKind::Gaussian,
            _ => HeadKind::Bernoulli,
        };
        if self.net.head_kind != expect_head {
            return Err(Error::config(
                "head_kind",
                format!("{:?} prior needs a {expect_head:?} head", self.prior_kind),
            ));
        }
        if self.input_len == 0 || self.input_len > self.net.window_len {
            return Err(Error::config(
                "input_len",
                format!(
                    "must lie in 1..={} (network window), got {}",
                    self.net.window_len, self.input_len
                ),
            ));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config(
                "beta",
                format!("must be >= 0, got {}", self.beta),
            ));
        }
        if self.prior_kind != PriorKind::Gaussian && !(self.lambda > 0.0) {
            return Err(Error::config(
                "lambda",
                format!("must be > 0, got {}", self.lambda),
            ));
        }
        match (self.prior_kind, &self.rbm) {
            (PriorKind::Rbm, None) => {
                return Err(Error::config("rbm", "rbm prior needs rbm settings"))
            }
            (PriorKind::Rbm, Some(r)) => {
                r.topology.layer_sizes(self.net.latent_dim)?;
                if r.chains == 0 {
                    return Err(Error::config("chains", "must be > 0"));
                }
                if !(0.0..=1.0).contains(&r.replay_fraction) {
                    return Err(Error::config("replay_fraction", "must lie in [0, 1]"));
                }
                if !(r.w_l2 >= 0.0) {
                    return Err(Error::config("w_l2", "must be >= 0"));
                }
            }
            (_, Some(_)) => {
                return Err(Error::config(
                    "rbm",
                    "rbm settings given for a non-rbm prior",
                ))
            }
            _ => {}
        }
        let sigmoid = self.net.decoder_output == DecoderOutput::Sigmoid;
        if sigmoid != (self.recon_metric == ReconMetric::Bce) {
            return Err(Error::config(
                "recon_metric",
                "bce requires a sigmoid decoder output and mse a linear one",
            ));
        }
        Ok(())
    }
}

/// Loss components averaged over a minibatch; `total = recon + beta * kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    /// Posterior probabilities clamped away from 0 or 1.
    pub clamped: usize,
}

/// Externally drawn noise for one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    /// `(B, L)`: standard normals (Gaussian) or uniforms (discrete).
    pub latent: Tensor,
    /// `(B, L_h)` uniforms for hidden positive-phase samples (rbm only).
    pub hidden: Option<Tensor>,
}

#[derive(Clone, Debug)]
struct RbmState {
    w: ParamId,
    a: ParamId,
    b: ParamId,
    chains: RbmChains,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    rbm: Option<RbmState>,
}

/// A loss evaluated on a graph, ready for differentiation.
pub struct LossGraph {
    pub graph: Graph,
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
    pub clamped: usize,
}

impl LossGraph {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            total: self.graph.value(self.total).item(),
            recon: self.graph.value(self.recon).item(),
            kl: self.graph.value(self.kl).item(),
            clamped: self.clamped,
        }
    }
}

const EVAL_CHUNK: usize = 256;

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, streams::INIT);
        let mut store = ParamStore::new();
        let encoder = build_encoder(&spec.net, &mut store, &mut rng)?;
        let decoder = build_decoder(&spec.net, &mut store, &mut rng)?;
        let rbm = match &spec.rbm {
            Some(r) => {
                let (k, l) = r.topology.layer_sizes(spec.net.latent_dim)?;
                let w = Tensor::new(
                    vec![k, l],
                    (0..k * l)
                        .map(|_| 0.01 * standard_normal(&mut rng))
                        .collect(),
                )?;
                Some(RbmState {
                    w: store.add("rbm.w", w)?,
                    a: store.add("rbm.a", Tensor::zeros(&[k]))?,
                    b: store.add("rbm.b", Tensor::zeros(&[l]))?,
                    chains: RbmChains::zeros(r.chains, k, l),
                })
            }
            None => None,
        };
        Ok(Model {
            spec,
            store,
            encoder,
            decoder,
            rbm,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.net.latent_dim
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn rbm_params(&self) -> Option<RbmParams> {
        self.rbm.as_ref().map(|r| RbmParams {
            w: self.store.get(r.w).clone(),
            a: self.store.get(r.a).clone(),
            b: self.store.get(r.b).clone(),
        })
    }

    pub fn chains(&self) -> Option<&RbmChains> {
        self.rbm.as_ref().map(|r| &r.chains)
    }

    pub fn chains_mut(&mut self) -> Option<&mut RbmChains> {
        self.rbm.as_mut().map(|r| &mut r.chains)
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3
            || s[0] == 0
            || s[1] != self.spec.net.in_channels
            || s[2] != self.spec.input_len
        {
            return Err(Error::shape(
                "model input",
                format!(
                    "expected (B>0, {}, {}), got {s:?}",
                    self.spec.net.in_channels, self.spec.input_len
                ),
            ));
        }
        Ok(())
    }

    /// Draws latent (and, for the rbm prior, hidden) noise for `batch` instances.
    pub fn draw_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Noise {
        let l = self.latent_dim();
        let latent = match self.spec.prior_kind {
            PriorKind::Gaussian => (0..batch * l).map(|_| standard_normal(rng)).collect(),
            _ => (0..batch * l).map(|_| open_uniform(rng)).collect(),
        };
        let hidden = match (&self.rbm, &self.spec.rbm) {
            (Some(state), Some(r)) if r.topology == Topology::Augmented => {
                let lh = state.chains.h.shape()[1];
                Some(
                    Tensor::new(
                        vec![batch, lh],
                        (0..batch * lh).map(|_| rng.random::<f64>()).collect(),
                    )
                    .expect("noise"),
                )
            }
            _ => None,
        };
        Noise {
            latent: Tensor::new(vec![batch, l], latent).expect("noise"),
            hidden,
        }
    }

    /// Builds the loss for `x` `(B, C, input_len)` with fixed noise and the
    /// current (frozen) chains. `Train` uses batch statistics and relaxed
    /// latents; `Eval` uses running statistics and hard latents.
    pub fn build_loss(&self, x: &Tensor, noise: &Noise, mode: Mode) -> Result<LossGraph> {
        self.check_batch(x)?;
        let batch = x.shape()[0];
        let l = self.latent_dim();
        if noise.latent.shape() != [batch, l] {
            return Err(Error::shape(
                "noise",
                format!("latent noise {:?} for batch {batch}", noise.latent.shape()),
            ));
        }
        let spec = &self.spec;
        let mut g = Graph::new(mode);
        let xin = g.input(pad_edge(x, spec.net.window_len)?)?;
        let head = self.encoder.forward(&mut g, &self.store, xin)?;
        let inv_b = 1.0 / batch as f64;
        let mut clamped = 0;

        let (z, kl_sum) = match (spec.prior_kind, head) {
            (PriorKind::Gaussian, HeadNodes::Gaussian { mu, logvar }) => {
                let z = reparameterize_node(&mut g, mu, logvar, &noise.latent)?;
                (z, kl_gaussian_node(&mut g, mu, logvar)?)
            }
            (PriorKind::Bernoulli, HeadNodes::Bernoulli { log_alpha }) => {
                let z = self.latent_sample(&mut g, log_alpha, &noise.latent, mode)?;
                let (kl, c) = kl_bernoulli_node(&mut g, log_alpha, Some(z), spec.bernoulli_kl)?;
                clamped = c;
                (z, kl)
            }
            (PriorKind::Rbm, HeadNodes::Bernoulli { log_alpha }) => {
                let z = self.latent_sample(&mut g, log_alpha, &noise.latent, mode)?;
                self.rbm_kl(&mut g, log_alpha, z, noise, mode)?
            }
            _ => return Err(Error::Usage("encoder head does not match the prior".into())),
        };
        let kl = g.scale(kl_sum, inv_b)?;

        let logits = self.decoder.forward(&mut g, &self.store, z)?;
        let logits = if spec.net.window_len > spec.input_len {
            g.narrow(logits, 2, 0, spec.input_len)?
        } else {
            logits
        };
        let recon_sum = match spec.recon_metric {
            ReconMetric::Mse => {
                let target = g.input(x.clone())?;
                let d = g.sub(logits, target)?;
                let sq = g.mul(d, d)?;
                g.sum(sq)?
            }
            ReconMetric::Bce => {
                // softplus(l) - x l  ==  -[x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))]
                let target = g.input(x.map(|v| v.clamp(0.0, 1.0)))?;
                let sp = g.softplus(logits)?;
                let xl = g.mul(target, logits)?;
                let t = g.sub(sp, xl)?;
                g.sum(t)?
            }
        };
        let recon = g.scale(recon_sum, inv_b)?;
        let weighted = g.scale(kl, spec.beta)?;
        let total = g.add(recon, weighted)?;
        Ok(LossGraph {
            graph: g,
            total,
            recon,
            kl,
            clamped,
        })
    }

    fn latent_sample(
        &self,
        g: &mut Graph,
        log_alpha: NodeId,
        rho: &Tensor,
        mode: Mode,
    ) -> Result<NodeId> {
        match mode {
            Mode::Train => concrete_node(g, log_alpha, rho, self.spec.lambda),
            Mode::Eval => {
                let la = g.value(log_alpha);
                let hard = crate::priors::sample_bernoulli_hard(la, rho)?.z;
                g.input(hard)
            }
        }
    }

    /// Summed (over the batch) rbm KL contribution; returns `(decoder input, kl_sum)`.
    fn rbm_kl(
        &self,
        g: &mut Graph,
        log_alpha: NodeId,
        z: NodeId,
        noise: &Noise,
        mode: Mode,
    ) -> Result<(NodeId, NodeId)> {
        let spec = self.spec.rbm.as_ref().expect("validated rbm spec");
        let state = self.rbm.as_ref().expect("rbm state");
        let params = self.rbm_params().expect("rbm params");
        let batch = g.shape(z)[0] as f64;
        let log_q = match mode {
            Mode::Train => match spec.entropy {
                EntropyForm::Concrete => {
                    concrete_log_density_node(g, log_alpha, &noise.latent, self.spec.lambda)?
                }
                EntropyForm::RelaxedMass => relaxed_log_mass_node(g, log_alpha, z)?,
            },
            Mode::Eval => {
                let hard = g.value(z).clone();
                bernoulli_log_mass_node(g, log_alpha, &hard)?
            }
        };
        let (zv, zh) = match spec.topology {
            Topology::Bipartite => {
                let k = params.visible_len();
                (
                    g.narrow(z, 1, 0, k)?,
                    g.narrow(z, 1, k, params.hidden_len())?,
                )
            }
            Topology::Augmented => {
                let u = noise
                    .hidden
                    .as_ref()
                    .ok_or_else(|| Error::Usage("augmented rbm needs hidden-unit noise".into()))?;
                let zv = match spec.positive_phase {
                    PositivePhase::DiscreteBoth => {
                        let hard = rbm::harden(g.value(z));
                        g.input(hard)?
                    }
                    _ => z,
                };
                let zh = positive_hidden(
                    g.value(zv),
                    &params,
                    spec.positive_phase,
                    &mut SliceUniform::new(u.data()),
                )?;
                (zv, g.input(zh)?)
            }
        };
        let nodes = RbmNodes {
            w: g.param(&self.store, state.w)?,
            a: g.param(&self.store, state.a)?,
            b: g.param(&self.store, state.b)?,
        };
        let per_instance = rbm_kl_node(g, log_q, zv, zh, &state.chains, nodes)?;
        let mut kl_sum = g.scale(per_instance, batch)?;
        if spec.w_l2 > 0.0 {
            let sq = g.mul(nodes.w, nodes.w)?;
            let pen = g.sum(sq)?;
            let pen = g.scale(pen, spec.w_l2 * batch)?;
            kl_sum = g.add(kl_sum, pen)?;
        }
        Ok((z, kl_sum))
    }

    /// Loss values without gradients or state changes.
    pub fn loss_terms(&self, x: &Tensor, noise: &Noise, mode: Mode) -> Result<LossTerms> {
        Ok(self.build_loss(x, noise, mode)?.terms())
    }

    /// Advances the fantasy chains by the configured sweep count.
    pub fn advance_chains<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let Some(spec) = self.spec.rbm.clone() else {
            return Ok(());
        };
        let params = self.rbm_params().expect("rbm params");
        let chains = &mut self.rbm.as_mut().expect("rbm state").chains;
        if spec.replay_fraction > 0.0 {
            rbm::replay_reset(chains, spec.replay_fraction, rng);
        }
        rbm::pcd_update(chains, &params, spec.sweeps, rng)
    }

    /// One optimizer step on `x`: advances chains, then updates parameters
    /// and batch-norm statistics. Nothing but the chains changes on error.
    pub fn train_step<R: Rng>(
        &mut self,
        x: &Tensor,
        noise: &Noise,
        adam: &AdamConfig,
        chain_rng: &mut R,
    ) -> Result<LossTerms> {
        self.advance_chains(chain_rng)?;
        let mut lg = self.build_loss(x, noise, Mode::Train)?;
        let terms = lg.terms();
        for (name, v) in [
            ("recon", terms.recon),
            ("kl", terms.kl),
            ("total", terms.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{name} loss = {v} (recon {}, kl {})", terms.recon, terms.kl),
                    index: None,
                });
            }
        }
        let grads = lg.graph.backward(lg.total)?.for_params(&self.store);
        for (i, gr) in grads.iter().enumerate() {
            if let Some(j) = gr.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {}", self.store.name(ParamId(i))),
                    index: Some(j),
                });
            }
        }
        self.store.adam_step(&grads, adam)?;
        apply_bn_updates(&mut self.store, &lg.graph.take_bn_updates())?;
        Ok(terms)
    }

    /// Eval-mode posterior parameters for `x`, processed in chunks.
    pub fn posterior(&self, x: &Tensor) -> Result<PosteriorHead> {
        self.check_batch(x)?;
        let n = x.shape()[0];
        let mut parts: Vec<PosteriorHead> = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let chunk = pad_edge(
                &x.rows(start, EVAL_CHUNK.min(n - start)),
                self.spec.net.window_len,
            )?;
            parts.push(encode(&self.encoder, &self.store, &chunk)?);
        }
        Ok(match &parts[0] {
            PosteriorHead::Gaussian { .. } => {
                let (mut mus, mut lvs) = (Vec::new(), Vec::new());
                for p in parts {
                    if let PosteriorHead::Gaussian { mu, logvar } = p {
                        mus.push(mu);
                        lvs.push(logvar);
                    }
                }
                PosteriorHead::Gaussian {
                    mu: Tensor::stack_rows(&mus)?,
                    logvar: Tensor::stack_rows(&lvs)?,
                }
            }
            PosteriorHead::Bernoulli { .. } => {
                let las: Vec<Tensor> = parts
                    .into_iter()
                    .filter_map(|p| match p {
                        PosteriorHead::Bernoulli { log_alpha_q } => Some(log_alpha_q),
                        _ => None,
                    })
                    .collect();
                PosteriorHead::Bernoulli {
                    log_alpha_q: Tensor::stack_rows(&las)?,
                }
            }
        })
    }

    /// Eval-mode decoding of latents `(N, L)`, cropped to `input_len`.
    pub fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.shape()[0];
        let (c, w, t) = (
            self.spec.net.in_channels,
            self.spec.net.window_len,
            self.spec.input_len,
        );
        let mut out = Vec::with_capacity(n * c * t);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let len = EVAL_CHUNK.min(n - start);
            let y = decode(&self.decoder, &self.store, &z.rows(start, len))?;
            for row in y.data().chunks(w) {
                out.extend_from_slice(&row[..t]);
            }
        }
        Tensor::new(vec![n, c, t], out)
    }

    /// `samples` eval-mode reconstructions of `x`, each with fresh posterior noise.
    pub fn reconstruct<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        samples: usize,
        rng: &mut R,
    ) -> Result<Vec<Tensor>> {
        if samples == 0 {
            return Err(Error::config("samples", "must be >= 1"));
        }
        let head = self.posterior(x)?;
        let n = x.shape()[0];
        let l = self.latent_dim();
        (0..samples)
            .map(|_| {
                let z = match &head {
                    PosteriorHead::Gaussian { mu, logvar } => {
                        let eps = Tensor::new(
                            vec![n, l],
                            (0..n * l).map(|_| standard_normal(rng)).collect(),
                        )?;
                        let sigma = logvar.map(|lv| (0.5 * lv).exp());
                        let data = mu
                            .data()
                            .iter()
                            .zip(sigma.data())
                            .zip(eps.data())
                            .map(|((m, s), e)| m + s * e)
                            .collect();
                        Tensor::new(vec![n, l], data)?
                    }
                    PosteriorHead::Bernoulli { log_alpha_q } => {
                        let rho = Tensor::new(
                            vec![n, l],
                            (0..n * l).map(|_| rng.random::<f64>()).collect(),
                        )?;
                        crate::priors::sample_bernoulli_hard(log_alpha_q, &rho)?.z
                    }
                };
                self.decode_latents(&z)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_meta(
            "model_spec",
            serde_json::to_string(&self.spec).expect("spec serializes"),
        );
        for (_, name, t) in self.store.iter() {
            ck.push_tensor("param", name, t.clone());
        }
        for (name, t) in self.store.buffers() {
            ck.push_tensor("buffer", name, t.clone());
        }
        if let Some(opt) = self.store.optimizer() {
            ck.push_meta("adam_step", opt.step.to_string());
            for ((_, name, _), (m, v)) in self.store.iter().zip(opt.m.iter().zip(&opt.v)) {
                ck.push_tensor("adam_m", name, m.clone());
                ck.push_tensor("adam_v", name, v.clone());
            }
        }
        if let Some(chains) = self.chains() {
            ck.push_meta("sweep_count", chains.sweep_count.to_string());
            ck.push_tensor("chain", "v", chains.v.clone());
            ck.push_tensor("chain", "h", chains.h.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec_text = ck
            .meta("model_spec")
            .ok_or_else(|| Error::parse(None, "checkpoint lacks model_spec"))?;
        let spec: ModelSpec = serde_json::from_str(spec_text)
            .map_err(|e| Error::parse(None, format!("model_spec: {e}")))?;
        let mut model = Model::new(spec, 0)?;
        let fit = |kind: &str, name: &str, dst: &Tensor| -> Result<Tensor> {
            let t = ck
                .tensor(kind, name)
                .ok_or_else(|| Error::parse(None, format!("checkpoint lacks {kind} '{name}'")))?;
            if t.shape() != dst.shape() {
                return Err(Error::parse(
                    None,
                    format!(
                        "{kind} '{name}' has shape {:?}, expected {:?}",
                        t.shape(),
                        dst.shape()
                    ),
                ));
            }
            Ok(t.clone())
        };
        let ids: Vec<(ParamId, String)> = model
            .store
            .iter()
            .map(|(id, n, _)| (id, n.to_string()))
            .collect();
        for (id, name) in &ids {
            let t = fit("param", name, model.store.get(*id))?;
            *model.store.get_mut(*id) = t;
        }
        let buffers: Vec<String> = model.store.buffers().map(|(n, _)| n.to_string()).collect();
        for name in &buffers {
            let t = fit("buffer", name, model.store.buffer(name).expect("buffer"))?;
            *model.store.buffer_mut(name).expect("buffer") = t;
        }
        if let Some(step) = ck.meta("adam_step") {
            let step = step
                .parse()
                .map_err(|_| Error::parse(None, "bad adam_step"))?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (id, name) in &ids {
                m.push(fit("adam_m", name, model.store.get(*id))?);
                v.push(fit("adam_v", name, model.store.get(*id))?);
            }
            model.store.set_optimizer(Some(AdamState { step, m, v }))?;
        }
        if let Some(state) = model.rbm.as_mut() {
            state.chains.v = fit("chain", "v", &state.chains.v)?;
            state.chains.h = fit("chain", "h", &state.chains.h)?;
            state.chains.sweep_count = ck
                .meta("sweep_count")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(None, "bad or missing sweep_count"))?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(prior: PriorKind, metric: ReconMetric) -> ModelSpec {
        let mut s = ModelSpec::new(prior, 2, 8, 4, metric).with_branches(
            vec![Branch {
                filters: 2,
                kernel: 3,
            }],
            1,
        );
        s.beta = 2.0;
        if let Some(r) = s.rbm.as_mut() {
            r.chains = 6;
            r.sweeps = 2;
        }
        s
    }

    fn batch(seed: u64, b: usize, unit: bool) -> Tensor {
        let mut rng = stream(seed, 0);
        let data = (0..b * 16)
            .map(|_| {
                if unit {
                    rng.random::<f64>()
                } else {
                    standard_normal(&mut rng)
                }
            })
            .collect();
        Tensor::new(vec![b, 2, 8], data).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(tiny(PriorKind::Rbm, ReconMetric::Mse).validate().is_ok());
        let mut s = tiny(PriorKind::Gaussian, ReconMetric::Mse);
        s.recon_metric = ReconMetric::Bce;
        assert!(s.validate().is_err());
        let mut s = tiny(PriorKind::Bernoulli, ReconMetric::Mse);
        s.rbm = Some(RbmSpec::default());
        assert!(s.validate().is_err());
        let mut s = tiny(PriorKind::Rbm, ReconMetric::Mse);
        s.rbm = None;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::new(PriorKind::Rbm, 2, 8, 5, ReconMetric::Mse);
        s.rbm.as_mut().unwrap().topology = Topology::Bipartite;
        assert!(s.validate().is_err());
    }

    #[test]
    fn beta_zero_is_pure_reconstruction() {
        for prior in [PriorKind::Gaussian, PriorKind::Bernoulli, PriorKind::Rbm] {
            let mut spec = tiny(prior, ReconMetric::Mse);
            spec.beta = 0.0;
            let model = Model::new(spec, 3).unwrap();
            let x = batch(4, 3, false);
            let noise = model.draw_noise(3, &mut stream(5, 0));
            let t = model.loss_terms(&x, &noise, Mode::Train).unwrap();
            assert_eq!(t.total, t.recon);
            assert!(t.kl != 0.0);
        }
    }

    #[test]
    fn total_is_recon_plus_weighted_kl() {
        for (prior, metric) in [
            (PriorKind::Gaussian, ReconMetric::Mse),
            (PriorKind::Bernoulli, ReconMetric::Bce),
            (PriorKind::Rbm, ReconMetric::Bce),
        ] {
            let model = Model::new(tiny(prior, metric), 3).unwrap();
            let x = batch(6, 4, metric == ReconMetric::Bce);
            let noise = model.draw_noise(4, &mut stream(7, 0));
            for mode in [Mode::Train, Mode::Eval] {
                let t = model.loss_terms(&x, &noise, mode).unwrap();
                assert_eq!(t.total, t.recon + 2.0 * t.kl, "{prior:?} {mode:?}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let mut model = Model::new(tiny(PriorKind::Rbm, ReconMetric::Mse), 8).unwrap();
        let x = batch(9, 4, false);
        let noise = model.draw_noise(4, &mut stream(10, 0));
        model
            .train_step(&x, &noise, &AdamConfig::default(), &mut stream(11, 0))
            .unwrap();
        let back = Model::from_checkpoint(
            &Checkpoint::from_text(&model.to_checkpoint().to_text()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.to_checkpoint(), model.to_checkpoint());
        assert_eq!(back.chains().unwrap().sweep_count, 2);
        assert_eq!(
            back.loss_terms(&x, &noise, Mode::Eval).unwrap(),
            model.loss_terms(&x, &noise, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn reconstruction_count_and_degenerate_posterior() {
        let mut spec = tiny(PriorKind::Gaussian, ReconMetric::Mse);
        spec.net.logvar_softplus = false;
        let mut model = Model::new(spec, 12).unwrap();
        let x = batch(13, 3, false);
        let outs = model.reconstruct(&x, 4, &mut stream(14, 0)).unwrap();
        assert_eq!(outs.len(), 4);
        assert_eq!(outs[0].shape(), x.shape());
        assert_ne!(outs[0], outs[1]);
        // push the log-variance bias far negative: sigma -> 0
        let id = model.store.id("enc.logvar.b").unwrap();
        model.store.get_mut(id).data_mut().fill(-800.0);
        let outs = model.reconstruct(&x, 3, &mut stream(14, 0)).unwrap();
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn eval_loss_leaves_state_untouched() {
        let model = Model::new(tiny(PriorKind::Rbm, ReconMetric::Mse), 15).unwrap();
        let before = model.to_checkpoint();
        let x = batch(16, 2, false);
        let noise = model.draw_noise(2, &mut stream(17, 0));
        model.loss_terms(&x, &noise, Mode::Eval).unwrap();
        assert_eq!(model.to_checkpoint(), before);
    }

    #[test]
    fn padded_inputs_are_cropped() {
        let spec = ModelSpec::new(PriorKind::Gaussian, 3, 10, 2, ReconMetric::Mse);
        assert_eq!(spec.net.window_len, 12);
        let model = Model::new(
            spec.with_branches(
                vec![Branch {
                    filters: 2,
                    kernel: 3,
                }],
                2,
            ),
            1,
        )
        .unwrap();
        let x = Tensor::full(&[2, 3, 10], 0.5);
        let outs = model.reconstruct(&x, 1, &mut stream(1, 0)).unwrap();
        assert_eq!(outs[0].shape(), &[2, 3, 10]);
        let noise = model.draw_noise(2, &mut stream(2, 0));
        assert!(model
            .loss_terms(&x, &noise, Mode::Train)
            .unwrap()
            .total
            .is_finite());
    }
}
