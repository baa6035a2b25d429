//! Gaussian encodings, reparameterized sampling, closed-form KL terms, and the
//! single-input VAE baseline with a predictor head.
//!
//! Encoder heads emit raw vectors; [`encode_head_split`] turns `(μᵀ, log σ)ᵀ`
//! into an isotropic [`GaussianEncoding`] and [`encode_head_split_diag`] turns
//! `(μᵀ, log σᵀ)ᵀ` into a diagonal [`VecEncoding`]. `log σ` is clamped to
//! `[-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT]`; a clamped entry passes no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Vector};
use crate::neuralnet::{ForwardCache, Mlp, Parameterized, SgdConfig};
use crate::simgen::MultiModalSample;

pub const LOG_SIGMA_LIMIT: f64 = 10.0;

/// `N(μ, σ² I)` with a single scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEncoding {
    pub mu: Vector,
    pub sigma: f64,
    pub log_sigma: f64,
    /// Whether the raw log-σ head fell outside the clamp range.
    pub clamped: bool,
}

impl GaussianEncoding {
    pub fn new(mu: Vector, log_sigma: f64) -> Self {
        let clamped = !(-LOG_SIGMA_LIMIT..=LOG_SIGMA_LIMIT).contains(&log_sigma);
        let log_sigma = log_sigma.clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT);
        GaussianEncoding {
            mu,
            sigma: log_sigma.exp(),
            log_sigma,
            clamped,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Chain `∂L/∂σ` through `σ = exp(log σ)` and the clamp.
    pub fn dlog_sigma_from_dsigma(&self, dsigma: f64) -> f64 {
        if self.clamped {
            0.0
        } else {
            dsigma * self.sigma
        }
    }
}

/// `N(μ, diag(σ²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct VecEncoding {
    pub mu: Vector,
    pub sigma: Vector,
    pub log_sigma: Vector,
    pub clamped: Vec<bool>,
}

impl VecEncoding {
    pub fn new(mu: Vector, log_sigma: &[f64]) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::shape(
                "VecEncoding::new",
                format!("mu len {}", mu.len()),
                format!("log_sigma len {}", log_sigma.len()),
            ));
        }
        let clamped = log_sigma
            .iter()
            .map(|l| !(-LOG_SIGMA_LIMIT..=LOG_SIGMA_LIMIT).contains(l))
            .collect();
        let log_sigma: Vector = log_sigma
            .iter()
            .map(|l| l.clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT))
            .collect();
        let sigma = log_sigma.iter().map(|l| l.exp()).collect();
        Ok(VecEncoding {
            mu,
            sigma,
            log_sigma,
            clamped,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Splits an encoder output `(μᵀ, log σ)ᵀ` of length `latent_dim + 1`.
pub fn encode_head_split(raw: &[f64], latent_dim: usize) -> Result<GaussianEncoding> {
    if raw.len() != latent_dim + 1 {
        return Err(Error::shape(
            "encode_head_split",
            format!("raw len {}", raw.len()),
            format!("latent_dim + 1 = {}", latent_dim + 1),
        ));
    }
    Ok(GaussianEncoding::new(
        Vector::from_slice(&raw[..latent_dim]),
        raw[latent_dim],
    ))
}

/// Splits an encoder output `(μᵀ, log σᵀ)ᵀ` of length `2 · latent_dim`.
pub fn encode_head_split_diag(raw: &[f64], latent_dim: usize) -> Result<VecEncoding> {
    if raw.len() != 2 * latent_dim {
        return Err(Error::shape(
            "encode_head_split_diag",
            format!("raw len {}", raw.len()),
            format!("2 * latent_dim = {}", 2 * latent_dim),
        ));
    }
    VecEncoding::new(
        Vector::from_slice(&raw[..latent_dim]),
        &raw[latent_dim..],
    )
}

/// `μ + σ ε` with fresh `ε ~ N(0, I)`.
pub fn reparam_sample(enc: &GaussianEncoding, rng: &mut Rng) -> Vector {
    let eps: Vec<f64> = (0..enc.dim()).map(|_| rng.standard_normal()).collect();
    reparam_with_noise(enc, &eps)
}

/// `μ + σ ε` for a given `ε`. `∂/∂μ = I`, `∂/∂σ = ε`.
pub fn reparam_with_noise(enc: &GaussianEncoding, eps: &[f64]) -> Vector {
    enc.mu
        .iter()
        .zip(eps)
        .map(|(m, e)| m + enc.sigma * e)
        .collect()
}

pub fn reparam_with_noise_diag(enc: &VecEncoding, eps: &[f64]) -> Vector {
    enc.mu
        .iter()
        .zip(enc.sigma.iter())
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// `KL(N(μ, σ² I) ‖ N(0, I)) = ½ Σ_j (−log σ² + μ_j² + σ² − 1)`.
pub fn kl_isotropic(enc: &GaussianEncoding) -> f64 {
    let s2 = enc.sigma * enc.sigma;
    let ls2 = 2.0 * enc.log_sigma;
    0.5 * enc
        .mu
        .iter()
        .map(|m| -ls2 + m * m + s2 - 1.0)
        .sum::<f64>()
}

/// Gradient of [`kl_isotropic`] with respect to `(μ, log σ)`.
pub fn kl_isotropic_grad(enc: &GaussianEncoding) -> (Vector, f64) {
    let dlog = if enc.clamped {
        0.0
    } else {
        enc.dim() as f64 * (enc.sigma * enc.sigma - 1.0)
    };
    (enc.mu.clone(), dlog)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ_j (−log σ_j² + μ_j² + σ_j² − 1)`.
pub fn kl_diag(enc: &VecEncoding) -> f64 {
    0.5 * enc
        .mu
        .iter()
        .zip(enc.sigma.iter())
        .zip(enc.log_sigma.iter())
        .map(|((m, s), l)| -2.0 * l + m * m + s * s - 1.0)
        .sum::<f64>()
}

/// Relative weights of the reconstruction and prediction terms of a loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub pred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            pred: 1.0,
        }
    }
}

/// Per-sample (or batch-mean) loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// Squared reconstruction error plus all KL terms.
    pub recon: f64,
    pub pred: f64,
    pub total: f64,
}

impl LossParts {
    pub(crate) fn check_finite(&self) -> Result<()> {
        for (term, v) in [("recon", self.recon), ("pred", self.pred), ("total", self.total)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term: term.into() });
            }
        }
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, other: &LossParts, scale: f64) {
        self.recon += scale * other.recon;
        self.pred += scale * other.pred;
        self.total += scale * other.total;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub outcome_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

/// Single-input VAE with a predictor on `(μᵀ, σᵀ)ᵀ`.
///
/// Per-sample loss: `‖x − x̂‖² + KL(q(z|x) ‖ N(0,I)) + ‖y − ŷ‖²` with
/// `x̂ = D(μ + σ ⊙ ε)` and `ŷ = P((μᵀ, σᵀ)ᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeBaseline {
    pub config: VaeConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub predictor: Mlp,
}

pub(crate) struct VaeTrace {
    enc_cache: ForwardCache,
    enc: VecEncoding,
    eps: Vec<f64>,
    dec_cache: ForwardCache,
    x_hat: Vector,
    pred_cache: ForwardCache,
    y_hat: Vector,
}

impl VaeBaseline {
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        Self::with_prefix(config, "vae", rng)
    }

    pub(crate) fn with_prefix(config: VaeConfig, prefix: &str, rng: &mut Rng) -> Result<Self> {
        let VaeConfig {
            input_dim,
            outcome_dim,
            latent_dim,
            ..
        } = config;
        if input_dim == 0 || outcome_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "vae dims must be >= 1 (input {input_dim}, outcome {outcome_dim}, latent {latent_dim})"
            )));
        }
        let h = &config.hidden;
        let mut encoder = Mlp::with_hidden(format!("{prefix}.encoder"), input_dim, h, 2 * latent_dim)?;
        let mut decoder = Mlp::with_hidden(format!("{prefix}.decoder"), latent_dim, h, input_dim)?;
        let mut predictor =
            Mlp::with_hidden(format!("{prefix}.predictor"), 2 * latent_dim, h, outcome_dim)?;
        encoder.xavier_init(rng);
        decoder.xavier_init(rng);
        predictor.xavier_init(rng);
        Ok(VaeBaseline {
            config,
            encoder,
            decoder,
            predictor,
        })
    }

    pub fn from_parts(config: VaeConfig, encoder: Mlp, decoder: Mlp, predictor: Mlp) -> Result<Self> {
        let p = config.latent_dim;
        let ok = encoder.in_dim() == config.input_dim
            && encoder.out_dim() == 2 * p
            && decoder.in_dim() == p
            && decoder.out_dim() == config.input_dim
            && predictor.in_dim() == 2 * p
            && predictor.out_dim() == config.outcome_dim;
        if !ok {
            return Err(Error::InvalidConfig(
                "vae networks do not match the configured dimensions".into(),
            ));
        }
        Ok(VaeBaseline {
            config,
            encoder,
            decoder,
            predictor,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<VecEncoding> {
        encode_head_split_diag(&self.encoder.eval(x)?, self.config.latent_dim)
    }

    fn features(enc: &VecEncoding) -> Vector {
        Vector::concat([enc.mu.as_slice(), enc.sigma.as_slice()])
    }

    /// `ŷ = P((μᵀ, σᵀ)ᵀ)`; no sampling involved.
    pub fn predict(&self, x: &[f64]) -> Result<Vector> {
        let enc = self.encode(x)?;
        self.predictor.eval(&Self::features(&enc))
    }

    pub(crate) fn evaluate(
        &self,
        x: &[f64],
        y: &[f64],
        eps: &[f64],
        weights: LossWeights,
    ) -> Result<(LossParts, VaeTrace)> {
        if y.len() != self.config.outcome_dim {
            return Err(Error::shape(
                "VaeBaseline::evaluate",
                format!("outcome dim {}", self.config.outcome_dim),
                format!("y len {}", y.len()),
            ));
        }
        let (raw, enc_cache) = self.encoder.forward(x)?;
        let enc = encode_head_split_diag(&raw, self.config.latent_dim)?;
        let z = reparam_with_noise_diag(&enc, eps);
        let (x_hat, dec_cache) = self.decoder.forward(&z)?;
        let (y_hat, pred_cache) = self.predictor.forward(&Self::features(&enc))?;
        let rec = x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let recon = rec + kl_diag(&enc);
        let pred = y.iter().zip(y_hat.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let parts = LossParts {
            recon,
            pred,
            total: weights.recon * recon + weights.pred * pred,
        };
        Ok((
            parts,
            VaeTrace {
                enc_cache,
                enc,
                eps: eps.to_vec(),
                dec_cache,
                x_hat,
                pred_cache,
                y_hat,
            },
        ))
    }

    /// Accumulates `scale · ∂(weighted loss)/∂θ` for one evaluated sample.
    pub(crate) fn backprop(
        &mut self,
        trace: &VaeTrace,
        x: &[f64],
        y: &[f64],
        weights: LossWeights,
        scale: f64,
    ) -> Result<()> {
        let p = self.config.latent_dim;
        let wr = weights.recon * scale;
        let wp = weights.pred * scale;
        let enc = &trace.enc;

        let dyh: Vec<f64> = trace.y_hat.iter().zip(y).map(|(a, b)| 2.0 * wp * (a - b)).collect();
        let dfeat = self.predictor.backward(&trace.pred_cache, &dyh)?;

        let dxh: Vec<f64> = trace.x_hat.iter().zip(x).map(|(a, b)| 2.0 * wr * (a - b)).collect();
        let dz = self.decoder.backward(&trace.dec_cache, &dxh)?;

        let mut draw = vec![0.0; 2 * p];
        for j in 0..p {
            let s = enc.sigma[j];
            // z = μ + σ ε;  KL_j = ½(−2 log σ + μ² + σ² − 1)
            let dmu = dz[j] + dfeat[j] + wr * enc.mu[j];
            let dsigma = dz[j] * trace.eps[j] + dfeat[p + j];
            let dlog = if enc.clamped[j] {
                0.0
            } else {
                dsigma * s + wr * (s * s - 1.0)
            };
            draw[j] = dmu;
            draw[p + j] = dlog;
        }
        self.encoder.backward(&trace.enc_cache, &draw)?;
        Ok(())
    }

    /// Loss of one sample at fixed noise, without gradients.
    pub fn sample_loss(&self, x: &[f64], y: &[f64], eps: &[f64], weights: LossWeights) -> Result<LossParts> {
        Ok(self.evaluate(x, y, eps, weights)?.0)
    }

    /// Loss and accumulated gradients of one sample at fixed noise.
    pub fn sample_loss_grad(
        &mut self,
        x: &[f64],
        y: &[f64],
        eps: &[f64],
        weights: LossWeights,
        scale: f64,
    ) -> Result<LossParts> {
        let (parts, trace) = self.evaluate(x, y, eps, weights)?;
        self.backprop(&trace, x, y, weights, scale)?;
        Ok(parts)
    }

    /// One SGD step on the batch-mean loss. `modality` picks the input image.
    pub fn train_step(
        &mut self,
        batch: &[&MultiModalSample],
        modality: usize,
        rng: &mut Rng,
        sgd: &SgdConfig,
        weights: LossWeights,
    ) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut mean = LossParts::default();
        for s in batch {
            let x = s.x.get(modality).ok_or_else(|| {
                Error::InvalidArgument(format!("modality {modality} out of range ({})", s.x.len()))
            })?;
            let eps: Vec<f64> = (0..self.config.latent_dim).map(|_| rng.standard_normal()).collect();
            let parts = self.sample_loss_grad(x, &s.y, &eps, weights, scale)?;
            parts.check_finite()?;
            mean.accumulate(&parts, scale);
        }
        self.encoder.sgd_step(sgd)?;
        self.decoder.sgd_step(sgd)?;
        self.predictor.sgd_step(sgd)?;
        Ok(mean)
    }

    /// Full training run; returns the mean total loss of every epoch.
    pub fn fit(
        &mut self,
        train: &[MultiModalSample],
        modality: usize,
        sgd: &SgdConfig,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        run_epochs(train, sgd, rng, |batch, rng| {
            self.train_step(batch, modality, rng, sgd, LossWeights::default())
        })
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.encoder, &self.decoder, &self.predictor]
    }
}

impl Parameterized for VaeBaseline {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[f64])) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
        self.predictor.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        self.encoder.visit_params_mut(f);
        self.decoder.visit_params_mut(f);
        self.predictor.visit_params_mut(f);
    }
}

/// Shuffled minibatch epochs; `step` runs one SGD step and reports its loss.
/// Returns the sample-weighted mean total loss per epoch.
pub(crate) fn run_epochs<F>(
    train: &[MultiModalSample],
    sgd: &SgdConfig,
    rng: &mut Rng,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[&MultiModalSample], &mut Rng) -> Result<LossParts>,
{
    sgd.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(sgd.epochs);
    for _ in 0..sgd.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(sgd.batch_size) {
            let batch: Vec<&MultiModalSample> = chunk.iter().map(|&i| &train[i]).collect();
            let parts = step(&batch, rng)?;
            epoch_loss += parts.total * chunk.len() as f64;
        }
        trace.push(epoch_loss / train.len() as f64);
    }
    Ok(trace)
}
