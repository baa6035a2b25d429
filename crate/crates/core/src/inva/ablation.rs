//! Ablated variants of the integrative model.
//!
//! [`NoSharedModel`] drops the shared level: every modality gets its own
//! [`VaeBaseline`] and the prediction is the mean of the per-modality
//! predictions. [`NoImageSpecificModel`] drops the image-specific level: one
//! isotropic encoder/decoder pair is applied to every modality and the
//! predictor reads `(μ_kᵀ, σ_k : k = 1..K)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Vector};
use crate::neuralnet::{ForwardCache, Mlp, Parameterized, SgdConfig};
use crate::simgen::MultiModalSample;
use crate::vae::{
    encode_head_split, kl_isotropic, reparam_with_noise, run_epochs, GaussianEncoding,
    LossParts, LossWeights, VaeBaseline, VaeConfig,
};

/// `K` independent single-modality VAEs whose predictions are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct NoSharedModel {
    pub models: Vec<VaeBaseline>,
}

impl NoSharedModel {
    /// Builds one baseline per config, drawing weights from `rng` in order.
    /// With a single config this consumes `rng` exactly like [`VaeBaseline::new`].
    pub fn new(configs: Vec<VaeConfig>, rng: &mut Rng) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::InvalidConfig("need at least one modality".into()));
        }
        let outcome = configs[0].outcome_dim;
        if configs.iter().any(|c| c.outcome_dim != outcome) {
            return Err(Error::InvalidConfig("outcome dims differ across modalities".into()));
        }
        let models = configs
            .into_iter()
            .enumerate()
            .map(|(k, c)| VaeBaseline::with_prefix(c, &format!("noshd.{k}"), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoSharedModel { models })
    }

    pub fn from_models(models: Vec<VaeBaseline>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidConfig("need at least one modality".into()));
        }
        Ok(NoSharedModel { models })
    }

    pub fn modalities(&self) -> usize {
        self.models.len()
    }

    /// Fits model `k` on modality `k`, one after the other, all from `rng`.
    /// Returns the per-epoch losses summed over modalities.
    pub fn fit(&mut self, train: &[MultiModalSample], sgd: &SgdConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut total = vec![0.0; sgd.epochs];
        for (k, m) in self.models.iter_mut().enumerate() {
            for (t, l) in total.iter_mut().zip(m.fit(train, k, sgd, rng)?) {
                *t += l;
            }
        }
        Ok(total)
    }

    /// `ŷ = (1/K) Σ_k ŷ_k`.
    pub fn predict(&self, x_list: &[Vector]) -> Result<Vector> {
        if x_list.len() != self.models.len() {
            return Err(Error::shape(
                "NoSharedModel::predict",
                format!("{} modalities", self.models.len()),
                format!("{} inputs", x_list.len()),
            ));
        }
        let mut acc: Option<Vector> = None;
        for (m, x) in self.models.iter().zip(x_list) {
            let y = m.predict(x)?;
            acc = Some(match acc {
                None => y,
                Some(a) => a.add(&y)?,
            });
        }
        let k = self.models.len() as f64;
        Ok(acc.expect("at least one model").scale(1.0 / k))
    }

    /// Sum of the per-modality VAE losses at fixed noise (`eps[k]` for model `k`).
    pub fn sample_loss(&self, sample: &MultiModalSample, eps: &[Vec<f64>]) -> Result<f64> {
        self.check_modalities(sample, eps)?;
        let mut total = 0.0;
        for (k, m) in self.models.iter().enumerate() {
            total += m.sample_loss(&sample.x[k], &sample.y, &eps[k], LossWeights::default())?.total;
        }
        Ok(total)
    }

    pub fn sample_loss_grad(&mut self, sample: &MultiModalSample, eps: &[Vec<f64>], scale: f64) -> Result<f64> {
        self.check_modalities(sample, eps)?;
        let mut total = 0.0;
        for (k, m) in self.models.iter_mut().enumerate() {
            total += m
                .sample_loss_grad(&sample.x[k], &sample.y, &eps[k], LossWeights::default(), scale)?
                .total;
        }
        Ok(total)
    }

    fn check_modalities(&self, sample: &MultiModalSample, eps: &[Vec<f64>]) -> Result<()> {
        if sample.x.len() != self.models.len() || eps.len() != self.models.len() {
            return Err(Error::shape(
                "NoSharedModel",
                format!("{} modalities", self.models.len()),
                format!("{} inputs, {} noise vectors", sample.x.len(), eps.len()),
            ));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.models
            .iter()
            .flat_map(|m| m.nets())
            .map(Mlp::num_params)
            .sum()
    }
}

impl Parameterized for NoSharedModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[f64])) {
        self.models.iter().for_each(|m| m.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        self.models.iter_mut().for_each(|m| m.visit_params_mut(f));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoImageSpecificConfig {
    /// Common `J` of every modality.
    pub input_dim: usize,
    pub modalities: usize,
    pub outcome_dim: usize,
    /// Latent dimension `q'` of the shared isotropic encoder.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

impl NoImageSpecificConfig {
    /// Fails unless every modality has the same dimension.
    pub fn from_input_dims(
        input_dims: &[usize],
        outcome_dim: usize,
        latent_dim: usize,
        hidden: Vec<usize>,
        sgd: SgdConfig,
    ) -> Result<Self> {
        let first = *input_dims
            .first()
            .ok_or_else(|| Error::InvalidConfig("need at least one modality".into()))?;
        if input_dims.iter().any(|&j| j != first) {
            return Err(Error::InvalidConfig(format!(
                "the shared-only ablation needs equal modality dims, got {input_dims:?}"
            )));
        }
        Ok(NoImageSpecificConfig {
            input_dim: first,
            modalities: input_dims.len(),
            outcome_dim,
            latent_dim,
            hidden,
            sgd,
            loss_weights: LossWeights::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.modalities == 0 || self.outcome_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "dims must be >= 1 (J {}, K {}, m {}, q' {})",
                self.input_dim, self.modalities, self.outcome_dim, self.latent_dim
            )));
        }
        self.sgd.validate()
    }
}

/// Shared isotropic encoder `J → q'+1`, shared decoder `q' → J`, predictor
/// `K(q'+1) → m`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoImageSpecificModel {
    pub config: NoImageSpecificConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub predictor: Mlp,
}

struct ModalityTrace {
    enc_cache: ForwardCache,
    enc: GaussianEncoding,
    eps: Vec<f64>,
    dec_cache: ForwardCache,
    x_hat: Vector,
}

pub(crate) struct NoIsTrace {
    modalities: Vec<ModalityTrace>,
    pred_cache: ForwardCache,
    y_hat: Vector,
}

impl NoImageSpecificModel {
    pub fn new(config: NoImageSpecificConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (j, q, h) = (config.input_dim, config.latent_dim, &config.hidden);
        let mut encoder = Mlp::with_hidden("nois.encoder", j, h, q + 1)?;
        let mut decoder = Mlp::with_hidden("nois.decoder", q, h, j)?;
        let mut predictor =
            Mlp::with_hidden("nois.predictor", config.modalities * (q + 1), h, config.outcome_dim)?;
        encoder.xavier_init(rng);
        decoder.xavier_init(rng);
        predictor.xavier_init(rng);
        Ok(NoImageSpecificModel {
            config,
            encoder,
            decoder,
            predictor,
        })
    }

    pub fn from_parts(config: NoImageSpecificConfig, encoder: Mlp, decoder: Mlp, predictor: Mlp) -> Result<Self> {
        config.validate()?;
        let (j, q) = (config.input_dim, config.latent_dim);
        let ok = encoder.in_dim() == j
            && encoder.out_dim() == q + 1
            && decoder.in_dim() == q
            && decoder.out_dim() == j
            && predictor.in_dim() == config.modalities * (q + 1)
            && predictor.out_dim() == config.outcome_dim;
        if !ok {
            return Err(Error::InvalidConfig(
                "shared-only networks do not match the configured dimensions".into(),
            ));
        }
        Ok(NoImageSpecificModel {
            config,
            encoder,
            decoder,
            predictor,
        })
    }

    fn check_inputs(&self, x_list: &[Vector]) -> Result<()> {
        let c = &self.config;
        if x_list.len() != c.modalities || x_list.iter().any(|x| x.len() != c.input_dim) {
            return Err(Error::shape(
                "NoImageSpecificModel",
                format!("{} modalities of dim {}", c.modalities, c.input_dim),
                format!("{:?}", x_list.iter().map(|x| x.len()).collect::<Vec<_>>()),
            ));
        }
        Ok(())
    }

    fn features(encs: impl Iterator<Item = GaussianEncoding>) -> Vector {
        let mut g = Vec::new();
        for e in encs {
            g.extend_from_slice(&e.mu);
            g.push(e.sigma);
        }
        g.into()
    }

    pub fn predict(&self, x_list: &[Vector]) -> Result<Vector> {
        self.check_inputs(x_list)?;
        let q = self.config.latent_dim;
        let encs = x_list
            .iter()
            .map(|x| encode_head_split(&self.encoder.eval(x)?, q))
            .collect::<Result<Vec<_>>>()?;
        self.predictor.eval(&Self::features(encs.into_iter()))
    }

    pub(crate) fn evaluate(&self, sample: &MultiModalSample, eps: &[Vec<f64>]) -> Result<(LossParts, NoIsTrace)> {
        self.check_inputs(&sample.x)?;
        let q = self.config.latent_dim;
        let mut recon = 0.0;
        let mut mods = Vec::with_capacity(sample.x.len());
        for (x, e) in sample.x.iter().zip(eps) {
            let (raw, enc_cache) = self.encoder.forward(x)?;
            let enc = encode_head_split(&raw, q)?;
            let z = reparam_with_noise(&enc, e);
            let (x_hat, dec_cache) = self.decoder.forward(&z)?;
            recon += x.dist_sq(&x_hat)? + kl_isotropic(&enc);
            mods.push(ModalityTrace {
                enc_cache,
                enc,
                eps: e.clone(),
                dec_cache,
                x_hat,
            });
        }
        let g = Self::features(mods.iter().map(|m| m.enc.clone()));
        let (y_hat, pred_cache) = self.predictor.forward(&g)?;
        let pred = sample.y.dist_sq(&y_hat)?;
        let w = self.config.loss_weights;
        let parts = LossParts {
            recon,
            pred,
            total: w.recon * recon + w.pred * pred,
        };
        parts.check_finite()?;
        Ok((
            parts,
            NoIsTrace {
                modalities: mods,
                pred_cache,
                y_hat,
            },
        ))
    }

    pub(crate) fn backprop(&mut self, trace: &NoIsTrace, sample: &MultiModalSample, scale: f64) -> Result<()> {
        let q = self.config.latent_dim;
        let w = self.config.loss_weights;
        let (wr, wp) = (w.recon * scale, w.pred * scale);
        let dy: Vec<f64> = trace
            .y_hat
            .iter()
            .zip(sample.y.iter())
            .map(|(a, b)| 2.0 * wp * (a - b))
            .collect();
        let dg = self.predictor.backward(&trace.pred_cache, &dy)?;
        for (k, m) in trace.modalities.iter().enumerate() {
            let gk = &dg[k * (q + 1)..(k + 1) * (q + 1)];
            let dx: Vec<f64> = m
                .x_hat
                .iter()
                .zip(sample.x[k].iter())
                .map(|(a, b)| 2.0 * wr * (a - b))
                .collect();
            let dz = self.decoder.backward(&m.dec_cache, &dx)?;
            let mut draw = vec![0.0; q + 1];
            let mut dsig = gk[q];
            for j in 0..q {
                draw[j] = dz[j] + gk[j] + wr * m.enc.mu[j];
                dsig += dz[j] * m.eps[j];
            }
            draw[q] = if m.enc.clamped {
                0.0
            } else {
                dsig * m.enc.sigma + wr * q as f64 * (m.enc.sigma * m.enc.sigma - 1.0)
            };
            self.encoder.backward(&m.enc_cache, &draw)?;
        }
        Ok(())
    }

    pub fn sample_loss(&self, sample: &MultiModalSample, eps: &[Vec<f64>]) -> Result<f64> {
        Ok(self.evaluate(sample, eps)?.0.total)
    }

    pub fn sample_loss_grad(&mut self, sample: &MultiModalSample, eps: &[Vec<f64>], scale: f64) -> Result<LossParts> {
        let (parts, trace) = self.evaluate(sample, eps)?;
        self.backprop(&trace, sample, scale)?;
        Ok(parts)
    }

    pub fn train_step(&mut self, batch: &[&MultiModalSample], rng: &mut Rng) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let (k, q) = (self.config.modalities, self.config.latent_dim);
        let mut mean = LossParts::default();
        for s in batch {
            let eps: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..q).map(|_| rng.standard_normal()).collect())
                .collect();
            let parts = self.sample_loss_grad(s, &eps, scale)?;
            mean.accumulate(&parts, scale);
        }
        let sgd = self.config.sgd.clone();
        self.encoder.sgd_step(&sgd)?;
        self.decoder.sgd_step(&sgd)?;
        self.predictor.sgd_step(&sgd)?;
        Ok(mean)
    }

    pub fn fit(&mut self, train: &[MultiModalSample], rng: &mut Rng) -> Result<Vec<f64>> {
        let sgd = self.config.sgd.clone();
        run_epochs(train, &sgd, rng, |batch, rng| self.train_step(batch, rng))
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.encoder, &self.decoder, &self.predictor]
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }
}

impl Parameterized for NoImageSpecificModel {
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
