//! One-unit linear-Gaussian VAE whose marginal likelihood is known exactly.
//!
//! Generative model `z ~ N(0, 1)`, `x | z ~ N(w z + b, s^2)`; encoder
//! `q(z | x) = N(a x + c, exp(logvar))`. Marginally `x ~ N(b, w^2 + s^2)`.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::priors::kl_gaussian_closed_form;
use crate::rng::standard_normal;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianToy {
    pub w: f64,
    pub b: f64,
    /// Decoder noise standard deviation.
    pub s: f64,
    pub a: f64,
    pub c: f64,
    pub logvar: f64,
}

/// Monte Carlo ELBO estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

impl LinearGaussianToy {
    pub fn log_likelihood(&self, x: f64) -> f64 {
        log_normal(x, self.b, self.w * self.w + self.s * self.s)
    }

    /// `samples`-draw estimate of `E_q[log p(x|z)] - KL(q || p)` for one `x`.
    pub fn elbo_estimate<R: Rng + ?Sized>(
        &self,
        x: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<ElboEstimate> {
        if samples < 2 {
            return Err(Error::config(
                "samples",
                "need at least 2 for a standard error",
            ));
        }
        if !(self.s > 0.0) {
            return Err(Error::config("s", "decoder noise must be > 0"));
        }
        let mu = self.a * x + self.c;
        let kl = kl_gaussian_closed_form(
            &Tensor::vector(vec![mu]),
            &Tensor::vector(vec![self.logvar]),
        )?;
        let sigma = (0.5 * self.logvar).exp();
        let terms: Vec<f64> = (0..samples)
            .map(|_| {
                let z = mu + sigma * standard_normal(rng);
                log_normal(x, self.w * z + self.b, self.s * self.s) - kl
            })
            .collect();
        let n = samples as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(ElboEstimate {
            mean,
            std_error: (var / n).sqrt(),
            samples,
        })
    }

    /// Encoder parameters for which the ELBO equals `log p(x)`.
    pub fn optimal_encoder(&self) -> (f64, f64, f64) {
        let prec = 1.0 + self.w * self.w / (self.s * self.s);
        let a = self.w / (self.s * self.s * prec);
        (a, -a * self.b, -prec.ln())
    }
}
