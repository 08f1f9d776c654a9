//! Restricted Boltzmann machine prior over the latent space.
//!
//! Energy `E(v, h) = -v^T W h - a^T v - b^T h` with `W` of shape `(K, L)`.
//! Fantasy particles are advanced with block Gibbs sampling and persist
//! across minibatches (persistent contrastive divergence). Chain states
//! start at zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::scalar::sigmoid;
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::UniformSource;

/// Largest `K + L` accepted by [`exact_oracle`].
pub const ORACLE_MAX_UNITS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    /// `(K, L)` visible-hidden couplings.
    pub w: Tensor,
    /// `[K]` visible biases.
    pub a: Tensor,
    /// `[L]` hidden biases.
    pub b: Tensor,
}

impl RbmParams {
    pub fn new(w: Tensor, a: Tensor, b: Tensor) -> Result<Self> {
        let ws = w.shape();
        if ws.len() != 2 || a.shape() != [ws[0]] || b.shape() != [ws[1]] {
            return Err(Error::shape(
                "RbmParams",
                format!("W {:?}, a {:?}, b {:?}", ws, a.shape(), b.shape()),
            ));
        }
        for (name, t) in [("W", &w), ("a", &a), ("b", &b)] {
            if let Some(i) = t.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("rbm {name}"),
                    index: Some(i),
                });
            }
        }
        Ok(RbmParams { w, a, b })
    }

    pub fn zeros(k: usize, l: usize) -> Self {
        RbmParams {
            w: Tensor::zeros(&[k, l]),
            a: Tensor::zeros(&[k]),
            b: Tensor::zeros(&[l]),
        }
    }

    pub fn visible_len(&self) -> usize {
        self.a.len()
    }

    pub fn hidden_len(&self) -> usize {
        self.b.len()
    }
}

/// Persistent fantasy particles: `v` is `(C, K)`, `h` is `(C, L)`, entries in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmChains {
    pub v: Tensor,
    pub h: Tensor,
    pub sweep_count: u64,
}

impl RbmChains {
    pub fn zeros(count: usize, k: usize, l: usize) -> Self {
        RbmChains {
            v: Tensor::zeros(&[count, k]),
            h: Tensor::zeros(&[count, l]),
            sweep_count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.v.shape()[0]
    }

    fn check(&self, p: &RbmParams) -> Result<()> {
        let c = self.count();
        if self.v.shape() != [c, p.visible_len()] || self.h.shape() != [c, p.hidden_len()] {
            return Err(Error::shape(
                "rbm chains",
                format!(
                    "v {:?}, h {:?} for K={}, L={}",
                    self.v.shape(),
                    self.h.shape(),
                    p.visible_len(),
                    p.hidden_len()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Topology {
    /// Latent vector split into two equal halves acting as visible and hidden layers.
    #[serde(rename = "bipartite_latent_space", alias = "bipartite")]
    Bipartite,
    /// Latents are the visible layer; an equal-sized hidden layer is sampled from them.
    #[default]
    #[serde(rename = "augmented_positive_phase", alias = "augmented")]
    Augmented,
}

/// Unit types used for the positive-phase energy in the augmented topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePhase {
    /// Relaxed visible units, hard-sampled hidden units.
    #[default]
    ContinuousVisibleDiscreteHidden,
    /// Relaxed visible units, hidden units at their conditional means.
    ContinuousBoth,
    /// Visible units rounded to {0, 1}, hard-sampled hidden units.
    DiscreteBoth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    HiddenGivenVisible,
    VisibleGivenHidden,
}

impl Topology {
    /// `(K, L)` of the RBM attached to `latent_dim` latents.
    pub fn layer_sizes(self, latent_dim: usize) -> Result<(usize, usize)> {
        match self {
            Topology::Bipartite if latent_dim % 2 != 0 => Err(Error::config(
                "rbm_topology",
                format!("bipartite topology needs an even latent_dim, got {latent_dim}"),
            )),
            Topology::Bipartite => Ok((latent_dim / 2, latent_dim / 2)),
            Topology::Augmented => Ok((latent_dim, latent_dim)),
        }
    }
}

pub fn energy(zv: &[f64], zh: &[f64], p: &RbmParams) -> Result<f64> {
    let (k, l) = (p.visible_len(), p.hidden_len());
    if zv.len() != k || zh.len() != l {
        return Err(Error::shape(
            "energy",
            format!("zv {}, zh {} for K={k}, L={l}", zv.len(), zh.len()),
        ));
    }
    let w = p.w.data();
    let mut e = 0.0;
    for i in 0..k {
        if zv[i] == 0.0 {
            continue;
        }
        let row = &w[i * l..(i + 1) * l];
        let coupling: f64 = row.iter().zip(zh).map(|(w, h)| w * h).sum();
        e -= zv[i] * (coupling + p.a.data()[i]);
    }
    e -= p.b.data().iter().zip(zh).map(|(b, h)| b * h).sum::<f64>();
    Ok(e)
}

/// Energies of every row pair of `(B, K)` and `(B, L)` state batches.
pub fn energies(zv: &Tensor, zh: &Tensor, p: &RbmParams) -> Result<Vec<f64>> {
    let (k, l) = (p.visible_len(), p.hidden_len());
    if zv.rank() != 2
        || zh.rank() != 2
        || zv.shape()[0] != zh.shape()[0]
        || zv.shape()[1] != k
        || zh.shape()[1] != l
    {
        return Err(Error::shape(
            "energies",
            format!("{:?} and {:?}", zv.shape(), zh.shape()),
        ));
    }
    (0..zv.shape()[0])
        .map(|r| {
            energy(
                &zv.data()[r * k..(r + 1) * k],
                &zh.data()[r * l..(r + 1) * l],
                p,
            )
        })
        .collect()
}

fn cond_into(given: &[f64], p: &RbmParams, dir: Direction, out: &mut [f64]) {
    let (k, l) = (p.visible_len(), p.hidden_len());
    let w = p.w.data();
    match dir {
        Direction::HiddenGivenVisible => {
            out.copy_from_slice(p.b.data());
            for i in 0..k {
                let vi = given[i];
                if vi != 0.0 {
                    for (o, wij) in out.iter_mut().zip(&w[i * l..(i + 1) * l]) {
                        *o += vi * wij;
                    }
                }
            }
        }
        Direction::VisibleGivenHidden => {
            for i in 0..k {
                let row = &w[i * l..(i + 1) * l];
                out[i] = p.a.data()[i] + row.iter().zip(given).map(|(w, h)| w * h).sum::<f64>();
            }
        }
    }
    for o in out.iter_mut() {
        *o = sigmoid(*o);
    }
}

/// `sigmoid(b + W^T v)` or `sigmoid(a + W h)` depending on `dir`.
pub fn cond_probs(given: &[f64], p: &RbmParams, dir: Direction) -> Result<Vec<f64>> {
    let (k, l) = (p.visible_len(), p.hidden_len());
    let (n_in, n_out) = match dir {
        Direction::HiddenGivenVisible => (k, l),
        Direction::VisibleGivenHidden => (l, k),
    };
    if given.len() != n_in {
        return Err(Error::shape(
            "cond_probs",
            format!("expected {n_in} units, got {}", given.len()),
        ));
    }
    let mut out = vec![0.0; n_out];
    cond_into(given, p, dir, &mut out);
    Ok(out)
}

fn sample_layer<U: UniformSource + ?Sized>(
    given: &Tensor,
    target: &mut Tensor,
    p: &RbmParams,
    dir: Direction,
    rng: &mut U,
) {
    let n_in = given.shape()[1];
    let n_out = target.shape()[1];
    let mut probs = vec![0.0; n_out];
    for c in 0..given.shape()[0] {
        cond_into(&given.data()[c * n_in..(c + 1) * n_in], p, dir, &mut probs);
        let row = &mut target.data_mut()[c * n_out..(c + 1) * n_out];
        for (s, &pr) in row.iter_mut().zip(&probs) {
            *s = if rng.uniform() < pr { 1.0 } else { 0.0 };
        }
    }
}

/// One block-Gibbs sweep over all chains: hidden given visible, then
/// visible given hidden. Uniforms are consumed chain by chain, unit by unit.
pub fn gibbs_step<U: UniformSource + ?Sized>(
    chains: &mut RbmChains,
    p: &RbmParams,
    rng: &mut U,
) -> Result<()> {
    chains.check(p)?;
    sample_layer(
        &chains.v,
        &mut chains.h,
        p,
        Direction::HiddenGivenVisible,
        rng,
    );
    sample_layer(
        &chains.h,
        &mut chains.v,
        p,
        Direction::VisibleGivenHidden,
        rng,
    );
    chains.sweep_count += 1;
    Ok(())
}

/// `k` Gibbs sweeps continuing from the chains' current states.
pub fn pcd_update<U: UniformSource + ?Sized>(
    chains: &mut RbmChains,
    p: &RbmParams,
    k: usize,
    rng: &mut U,
) -> Result<()> {
    chains.check(p)?;
    for _ in 0..k {
        gibbs_step(chains, p, rng)?;
    }
    Ok(())
}

/// Resets a random `fraction` of chains to uniformly random binary states.
pub fn replay_reset<R: Rng + ?Sized>(chains: &mut RbmChains, fraction: f64, rng: &mut R) {
    let (k, l) = (chains.v.shape()[1], chains.h.shape()[1]);
    for c in 0..chains.count() {
        if rng.random::<f64>() < fraction {
            for s in &mut chains.v.data_mut()[c * k..(c + 1) * k] {
                *s = if rng.random::<bool>() { 1.0 } else { 0.0 };
            }
            for s in &mut chains.h.data_mut()[c * l..(c + 1) * l] {
                *s = if rng.random::<bool>() { 1.0 } else { 0.0 };
            }
        }
    }
}

/// Positive-phase hidden states for augmented visible states `zv` `(B, K)`.
pub fn positive_hidden<U: UniformSource + ?Sized>(
    zv: &Tensor,
    p: &RbmParams,
    phase: PositivePhase,
    rng: &mut U,
) -> Result<Tensor> {
    if zv.rank() != 2 || zv.shape()[1] != p.visible_len() {
        return Err(Error::shape(
            "positive_hidden",
            format!("{:?} for K={}", zv.shape(), p.visible_len()),
        ));
    }
    let mut zh = Tensor::zeros(&[zv.shape()[0], p.hidden_len()]);
    match phase {
        PositivePhase::ContinuousBoth => {
            let (k, l) = (p.visible_len(), p.hidden_len());
            for r in 0..zv.shape()[0] {
                let (src, dst) = (&zv.data()[r * k..(r + 1) * k], r * l);
                cond_into(
                    src,
                    p,
                    Direction::HiddenGivenVisible,
                    &mut zh.data_mut()[dst..dst + l],
                );
            }
        }
        PositivePhase::ContinuousVisibleDiscreteHidden | PositivePhase::DiscreteBoth => {
            sample_layer(zv, &mut zh, p, Direction::HiddenGivenVisible, rng);
        }
    }
    Ok(zh)
}

/// Rounds relaxed states to {0, 1}.
pub fn harden(z: &Tensor) -> Tensor {
    z.map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

/// Splits posterior latents `(B, latent_dim)` into positive-phase `(zv, zh)`.
pub fn positive_phase<U: UniformSource + ?Sized>(
    z_post: &Tensor,
    p: &RbmParams,
    topology: Topology,
    phase: PositivePhase,
    rng: &mut U,
) -> Result<(Tensor, Tensor)> {
    if z_post.rank() != 2 {
        return Err(Error::shape(
            "positive_phase",
            format!("{:?}", z_post.shape()),
        ));
    }
    let (b, n) = (z_post.shape()[0], z_post.shape()[1]);
    let (k, l) = topology.layer_sizes(n)?;
    if (k, l) != (p.visible_len(), p.hidden_len()) {
        return Err(Error::shape(
            "positive_phase",
            format!(
                "latents {n} need an RBM of {k}+{l} units, got {}+{}",
                p.visible_len(),
                p.hidden_len()
            ),
        ));
    }
    match topology {
        Topology::Bipartite => {
            let mut zv = Vec::with_capacity(b * k);
            let mut zh = Vec::with_capacity(b * l);
            for r in 0..b {
                let row = &z_post.data()[r * n..(r + 1) * n];
                zv.extend_from_slice(&row[..k]);
                zh.extend_from_slice(&row[k..]);
            }
            Ok((Tensor::new(vec![b, k], zv)?, Tensor::new(vec![b, l], zh)?))
        }
        Topology::Augmented => {
            let zv = match phase {
                PositivePhase::DiscreteBoth => harden(z_post),
                _ => z_post.clone(),
            };
            let zh = positive_hidden(&zv, p, phase, rng)?;
            Ok((zv, zh))
        }
    }
}

/// `mean_b(log q_b + E(zv_b, zh_b)) - mean_c E(v_c, h_c)` with `log_q_sum`
/// summed over the batch. The partition function is omitted.
pub fn rbm_kl_loss(
    log_q_sum: f64,
    zv: &Tensor,
    zh: &Tensor,
    chains: &RbmChains,
    p: &RbmParams,
) -> Result<f64> {
    if chains.count() == 0 {
        return Err(Error::Usage(
            "rbm loss needs at least one fantasy particle".into(),
        ));
    }
    chains.check(p)?;
    let pos = energies(zv, zh, p)?;
    if pos.is_empty() {
        return Err(Error::Usage("rbm loss needs a nonempty batch".into()));
    }
    let neg = energies(&chains.v, &chains.h, p)?;
    let b = pos.len() as f64;
    Ok((log_q_sum + pos.iter().sum::<f64>()) / b - neg.iter().sum::<f64>() / neg.len() as f64)
}

/// Graph handles of the RBM parameters.
#[derive(Clone, Copy, Debug)]
pub struct RbmNodes {
    pub w: NodeId,
    pub a: NodeId,
    pub b: NodeId,
}

/// Sum over the batch of `E(zv_r, zh_r)` for `(B, K)` and `(B, L)` nodes.
pub fn energy_sum_node(g: &mut Graph, zv: NodeId, zh: NodeId, p: RbmNodes) -> Result<NodeId> {
    let k = g.shape(p.a)[0];
    let l = g.shape(p.b)[0];
    let vw = g.matmul(zv, p.w)?;
    let coupling = g.mul(vw, zh)?;
    let a = g.reshape(p.a, &[k, 1])?;
    let b = g.reshape(p.b, &[l, 1])?;
    let va = g.matmul(zv, a)?;
    let hb = g.matmul(zh, b)?;
    let c = g.sum(coupling)?;
    let va = g.sum(va)?;
    let hb = g.sum(hb)?;
    let t = g.add(c, va)?;
    let t = g.add(t, hb)?;
    g.scale(t, -1.0)
}

/// Graph form of [`rbm_kl_loss`]; chain energies contribute only through
/// the parameters.
pub fn rbm_kl_node(
    g: &mut Graph,
    log_q_sum: NodeId,
    zv: NodeId,
    zh: NodeId,
    chains: &RbmChains,
    p: RbmNodes,
) -> Result<NodeId> {
    let c = chains.count();
    if c == 0 {
        return Err(Error::Usage(
            "rbm loss needs at least one fantasy particle".into(),
        ));
    }
    let batch = g.shape(zv)[0] as f64;
    let pos = energy_sum_node(g, zv, zh, p)?;
    let cv = g.input(chains.v.clone())?;
    let ch = g.input(chains.h.clone())?;
    let neg = energy_sum_node(g, cv, ch, p)?;
    let t = g.add(log_q_sum, pos)?;
    let t = g.scale(t, 1.0 / batch)?;
    let neg = g.scale(neg, 1.0 / c as f64)?;
    g.sub(t, neg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub log_z: f64,
    /// Probability of every joint state. Bit `i < K` of the index is `v_i`,
    /// bit `K + j` is `h_j`.
    pub probs: Vec<f64>,
}

/// Enumerates all `2^(K+L)` states.
pub fn exact_oracle(p: &RbmParams) -> Result<ExactDistribution> {
    let (k, l) = (p.visible_len(), p.hidden_len());
    if k + l > ORACLE_MAX_UNITS {
        return Err(Error::domain(
            "exact_oracle",
            format!(
                "K + L = {} exceeds the enumeration bound {ORACLE_MAX_UNITS}",
                k + l
            ),
        ));
    }
    let n = 1usize << (k + l);
    let mut neg_e = Vec::with_capacity(n);
    let mut v = vec![0.0; k];
    let mut h = vec![0.0; l];
    for s in 0..n {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = ((s >> i) & 1) as f64;
        }
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = ((s >> (k + j)) & 1) as f64;
        }
        neg_e.push(-energy(&v, &h, p)?);
    }
    let m = neg_e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = neg_e.iter().map(|e| (e - m).exp()).sum();
    let log_z = m + total.ln();
    let probs = neg_e.iter().map(|e| (e - log_z).exp()).collect();
    Ok(ExactDistribution { log_z, probs })
}

/// Index of a joint state in [`ExactDistribution::probs`].
pub fn state_index(v: &[f64], h: &[f64]) -> usize {
    let mut s = 0;
    for (i, &x) in v.iter().chain(h).enumerate() {
        if x != 0.0 {
            s |= 1 << i;
        }
    }
    s
}
