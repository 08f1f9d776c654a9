//! Reparameterized sampling and KL terms for the Gaussian and Bernoulli
//! priors, plus the concrete (relaxed Bernoulli) distribution.
//!
//! Value-level functions take explicit noise and act elementwise on tensors
//! of any shape, summing over every element. The `*_node` builders express
//! the same quantities on a [`Graph`] for training.

use std::f64::consts::LN_2;

use crate::diffcore::scalar::{sigmoid, softplus};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Bounds applied to posterior probabilities before taking logs.
pub const Q_MIN: f64 = 1e-7;
pub const Q_MAX: f64 = 1.0 - 1e-7;

/// Bounds applied to uniform noise fed to the concrete relaxation.
pub const RHO_MIN: f64 = 1e-7;
pub const RHO_MAX: f64 = 1.0 - 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSample {
    pub z: Tensor,
    pub eps: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleKind {
    Relaxed { lambda: f64 },
    Hard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteSample {
    /// Values in (0, 1) when relaxed, exactly 0 or 1 when hard.
    pub z: Tensor,
    pub rho: Tensor,
    pub kind: SampleKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    #[default]
    Mc,
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// Number of coordinates whose q had to be clamped.
    pub clamped: usize,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(
            "concrete temperature",
            format!("lambda must be > 0, got {lambda}"),
        ));
    }
    Ok(())
}

fn clamp_rho(r: f64) -> f64 {
    r.clamp(RHO_MIN, RHO_MAX)
}

fn logit_rho(r: f64) -> f64 {
    let r = clamp_rho(r);
    r.ln() - (-r).ln_1p()
}

pub fn reparameterize_gaussian(
    mu: &Tensor,
    sigma: &Tensor,
    eps: &Tensor,
) -> Result<GaussianSample> {
    same_shape("reparameterize_gaussian", mu, sigma)?;
    same_shape("reparameterize_gaussian", mu, eps)?;
    if let Some(i) = sigma.data().iter().position(|&s| !(s > 0.0)) {
        return Err(Error::domain(
            "reparameterize_gaussian",
            format!("sigma[{i}] = {} is not positive", sigma.data()[i]),
        ));
    }
    let z = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(GaussianSample {
        z: Tensor::new(mu.shape().to_vec(), z)?,
        eps: eps.clone(),
    })
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over all elements.
pub fn kl_gaussian_closed_form(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    same_shape("kl_gaussian_closed_form", mu, logvar)?;
    let mut acc = 0.0;
    for (i, (&m, &lv)) in mu.data().iter().zip(logvar.data()).enumerate() {
        let term = 1.0 + lv - m * m - lv.exp();
        if !term.is_finite() {
            return Err(Error::NonFinite {
                context: "kl_gaussian_closed_form".into(),
                index: Some(i),
            });
        }
        acc += term;
    }
    Ok(-0.5 * acc)
}

/// Relaxed sample `sigmoid((log_alpha + log rho - log(1 - rho)) / lambda)`.
pub fn sample_concrete(log_alpha: &Tensor, rho: &Tensor, lambda: f64) -> Result<ConcreteSample> {
    check_lambda(lambda)?;
    same_shape("sample_concrete", log_alpha, rho)?;
    let z = log_alpha
        .data()
        .iter()
        .zip(rho.data())
        .map(|(&la, &r)| sigmoid((la + logit_rho(r)) / lambda))
        .collect();
    Ok(ConcreteSample {
        z: Tensor::new(log_alpha.shape().to_vec(), z)?,
        rho: rho.map(clamp_rho),
        kind: SampleKind::Relaxed { lambda },
    })
}

/// Hard sample: `z = 1` iff `rho < sigmoid(log_alpha)`.
pub fn sample_bernoulli_hard(log_alpha: &Tensor, rho: &Tensor) -> Result<ConcreteSample> {
    same_shape("sample_bernoulli_hard", log_alpha, rho)?;
    let z = log_alpha
        .data()
        .iter()
        .zip(rho.data())
        .map(|(&la, &r)| if r < sigmoid(la) { 1.0 } else { 0.0 })
        .collect();
    Ok(ConcreteSample {
        z: Tensor::new(log_alpha.shape().to_vec(), z)?,
        rho: rho.clone(),
        kind: SampleKind::Hard,
    })
}

fn clamped_q(la: f64, clamped: &mut usize) -> f64 {
    let q = sigmoid(la);
    if !(Q_MIN..=Q_MAX).contains(&q) {
        *clamped += 1;
    }
    q.clamp(Q_MIN, Q_MAX)
}

/// KL of a factorized Bernoulli posterior against `Bernoulli(0.5)`.
///
/// `Mc` evaluates the single-sample estimate at `z`; `Analytic` ignores `z`
/// and returns the exact sum.
pub fn kl_bernoulli(log_alpha_q: &Tensor, z: Option<&Tensor>, mode: KlMode) -> Result<KlEstimate> {
    let mut clamped = 0;
    let mut value = 0.0;
    match mode {
        KlMode::Mc => {
            let z =
                z.ok_or_else(|| Error::Usage("mc-mode Bernoulli KL needs a latent sample".into()))?;
            same_shape("kl_bernoulli", log_alpha_q, z)?;
            for (&la, &zl) in log_alpha_q.data().iter().zip(z.data()) {
                let q = clamped_q(la, &mut clamped);
                value += zl * (q / 0.5).ln() + (1.0 - zl) * ((1.0 - q) / 0.5).ln();
            }
        }
        KlMode::Analytic => {
            for &la in log_alpha_q.data() {
                let q = clamped_q(la, &mut clamped);
                value += q * (q / 0.5).ln() + (1.0 - q) * ((1.0 - q) / 0.5).ln();
            }
        }
    }
    Ok(KlEstimate { value, clamped })
}

/// Log-density of the concrete distribution at the sample generated from
/// `(log_alpha, rho)`, summed over elements.
///
/// With `u = logit(rho)` and `y = (log_alpha + u) / lambda`:
/// `log q = ln(lambda) - u - 2 softplus(-u) + softplus(y) + softplus(-y)`.
pub fn concrete_log_density(log_alpha: &Tensor, rho: &Tensor, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    same_shape("concrete_log_density", log_alpha, rho)?;
    let mut acc = 0.0;
    for (&la, &r) in log_alpha.data().iter().zip(rho.data()) {
        let u = logit_rho(r);
        let y = (la + u) / lambda;
        acc += lambda.ln() - u - 2.0 * softplus(-u) + softplus(y) + softplus(-y);
    }
    Ok(acc)
}

/// Log-mass of hard samples `z` under `Bernoulli(sigmoid(log_alpha))`.
pub fn bernoulli_log_mass(log_alpha: &Tensor, z: &Tensor) -> Result<f64> {
    same_shape("bernoulli_log_mass", log_alpha, z)?;
    let mut clamped = 0;
    Ok(log_alpha
        .data()
        .iter()
        .zip(z.data())
        .map(|(&la, &zl)| {
            let q = clamped_q(la, &mut clamped);
            zl * q.ln() + (1.0 - zl) * (1.0 - q).ln()
        })
        .sum())
}

/// Graph form of [`kl_gaussian_closed_form`].
pub fn kl_gaussian_node(g: &mut Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let m2 = g.mul(mu, mu)?;
    let ev = g.exp(logvar)?;
    let t = g.add_scalar(logvar, 1.0)?;
    let t = g.sub(t, m2)?;
    let t = g.sub(t, ev)?;
    let s = g.sum(t)?;
    g.scale(s, -0.5)
}

/// `z = mu + exp(logvar / 2) * eps` on the graph.
pub fn reparameterize_node(
    g: &mut Graph,
    mu: NodeId,
    logvar: NodeId,
    eps: &Tensor,
) -> Result<NodeId> {
    let half = g.scale(logvar, 0.5)?;
    let sigma = g.exp(half)?;
    let e = g.input(eps.clone())?;
    let noise = g.mul(sigma, e)?;
    g.add(mu, noise)
}

/// Graph form of [`sample_concrete`]; differentiable in `log_alpha`.
pub fn concrete_node(
    g: &mut Graph,
    log_alpha: NodeId,
    rho: &Tensor,
    lambda: f64,
) -> Result<NodeId> {
    check_lambda(lambda)?;
    if g.shape(log_alpha) != rho.shape() {
        return Err(Error::shape(
            "concrete_node",
            format!("{:?} vs {:?}", g.shape(log_alpha), rho.shape()),
        ));
    }
    let u = g.input(rho.map(logit_rho))?;
    let t = g.add(log_alpha, u)?;
    let t = g.scale(t, 1.0 / lambda)?;
    g.sigmoid(t)
}

fn clamp_count(g: &Graph, log_alpha: NodeId) -> usize {
    g.value(log_alpha)
        .data()
        .iter()
        .filter(|&&la| !(Q_MIN..=Q_MAX).contains(&sigmoid(la)))
        .count()
}

/// `(log q, log(1 - q))` nodes with `q = sigmoid(log_alpha)` clamped.
fn log_q_pair(g: &mut Graph, log_alpha: NodeId) -> Result<(NodeId, NodeId)> {
    let q = g.sigmoid(log_alpha)?;
    let q = g.clamp(q, Q_MIN, Q_MAX)?;
    let lq = g.log(q)?;
    let one_minus = g.scale(q, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let l1q = g.log(one_minus)?;
    Ok((lq, l1q))
}

/// `sum(z log q + (1 - z) log(1 - q))` for a latent node `z`.
fn cross_term(g: &mut Graph, log_alpha: NodeId, z: NodeId) -> Result<NodeId> {
    let (lq, l1q) = log_q_pair(g, log_alpha)?;
    let a = g.mul(z, lq)?;
    let nz = g.scale(z, -1.0)?;
    let nz = g.add_scalar(nz, 1.0)?;
    let b = g.mul(nz, l1q)?;
    let t = g.add(a, b)?;
    g.sum(t)
}

/// Graph form of [`kl_bernoulli`]; returns the node and the clamp count.
pub fn kl_bernoulli_node(
    g: &mut Graph,
    log_alpha: NodeId,
    z: Option<NodeId>,
    mode: KlMode,
) -> Result<(NodeId, usize)> {
    let clamped = clamp_count(g, log_alpha);
    let n = g.value(log_alpha).len() as f64;
    let cross = match mode {
        KlMode::Mc => {
            let z =
                z.ok_or_else(|| Error::Usage("mc-mode Bernoulli KL needs a latent sample".into()))?;
            cross_term(g, log_alpha, z)?
        }
        KlMode::Analytic => {
            let q = g.sigmoid(log_alpha)?;
            let q = g.clamp(q, Q_MIN, Q_MAX)?;
            cross_term(g, log_alpha, q)?
        }
    };
    Ok((g.add_scalar(cross, n * LN_2)?, clamped))
}

/// Graph form of [`concrete_log_density`].
pub fn concrete_log_density_node(
    g: &mut Graph,
    log_alpha: NodeId,
    rho: &Tensor,
    lambda: f64,
) -> Result<NodeId> {
    check_lambda(lambda)?;
    if g.shape(log_alpha) != rho.shape() {
        return Err(Error::shape(
            "concrete_log_density_node",
            format!("{:?}", rho.shape()),
        ));
    }
    let u = rho.map(logit_rho);
    let constant: f64 = u
        .data()
        .iter()
        .map(|&u| lambda.ln() - u - 2.0 * softplus(-u))
        .sum();
    let un = g.input(u)?;
    let y = g.add(log_alpha, un)?;
    let y = g.scale(y, 1.0 / lambda)?;
    let sp = g.softplus(y)?;
    let ny = g.scale(y, -1.0)?;
    let spn = g.softplus(ny)?;
    let t = g.add(sp, spn)?;
    let s = g.sum(t)?;
    g.add_scalar(s, constant)
}

/// Bernoulli log-mass evaluated at a relaxed latent node, differentiable in both arguments.
pub fn relaxed_log_mass_node(g: &mut Graph, log_alpha: NodeId, z: NodeId) -> Result<NodeId> {
    cross_term(g, log_alpha, z)
}

/// Graph form of [`bernoulli_log_mass`] at fixed hard samples.
pub fn bernoulli_log_mass_node(g: &mut Graph, log_alpha: NodeId, z: &Tensor) -> Result<NodeId> {
    let zn = g.input(z.clone())?;
    cross_term(g, log_alpha, zn)
}
