//! The integrative variational autoencoder.
//!
//! For each modality `k` the image-specific encoder `E_k` maps `x_k` to the
//! shallow posterior `N(μ_{E_k}, σ_{E_k}² I_p)`; the shared encoder `Ē` maps a
//! shallow sample `h_k` to the deep posterior `N(μ_Ē, σ_Ē² I_q)`. Decoding runs
//! `z_k → D̄ → D_k → x̂_k`. The predictor maps the fused summary
//!
//! ```text
//! g = (μ_{E_k}ᵀ, σ_{E_k}, μ_Ē(h_k)ᵀ, σ_Ē(h_k) : k = 1..K)
//! ```
//!
//! to `ŷ`. The per-subject training loss is
//!
//! ```text
//! Σ_k [ ‖x_k − x̂_k‖² + KL_shallow_k + KL_deep_k ]  +  ‖y − ŷ‖²
//! ```
//!
//! where the bracketed sum is the negative ELBO. Training draws one noise
//! sample per subject; prediction plugs in `h_k = μ_{E_k}` and is deterministic.

mod ablation;

pub use ablation::{NoImageSpecificConfig, NoImageSpecificModel, NoSharedModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Vector};
use crate::neuralnet::{ForwardCache, Mlp, Parameterized, SgdConfig};
use crate::simgen::MultiModalSample;
use crate::vae::{
    encode_head_split, kl_isotropic, reparam_with_noise, GaussianEncoding, LossParts,
    LossWeights,
};

/// How prediction-loss gradients are routed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientRouting {
    /// The total loss is backpropagated into every parameter set, so the
    /// prediction loss also shapes the encoders.
    #[default]
    Joint,
    /// Encoders and decoders see only the reconstruction loss; the predictor
    /// sees only the prediction loss (features are treated as constants).
    Split,
}

/// Hidden-layer widths for each of the five network roles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayers {
    pub enc_img: Vec<usize>,
    pub enc_shared: Vec<usize>,
    pub dec_shared: Vec<usize>,
    pub dec_img: Vec<usize>,
    pub predictor: Vec<usize>,
}

impl HiddenLayers {
    pub fn uniform(widths: &[usize]) -> Self {
        HiddenLayers {
            enc_img: widths.to_vec(),
            enc_shared: widths.to_vec(),
            dec_shared: widths.to_vec(),
            dec_img: widths.to_vec(),
            predictor: widths.to_vec(),
        }
    }
}

impl Default for HiddenLayers {
    fn default() -> Self {
        HiddenLayers::uniform(&[32, 32])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvaConfig {
    /// `J_k` for each modality; `K = input_dims.len()`.
    pub input_dims: Vec<usize>,
    pub outcome_dim: usize,
    /// Shallow latent dimension `p`.
    pub shallow_dim: usize,
    /// Deep latent dimension `q`.
    pub deep_dim: usize,
    #[serde(default)]
    pub hidden: HiddenLayers,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub routing: GradientRouting,
}

impl InvaConfig {
    pub fn new(input_dims: Vec<usize>, outcome_dim: usize, shallow_dim: usize, deep_dim: usize) -> Self {
        InvaConfig {
            input_dims,
            outcome_dim,
            shallow_dim,
            deep_dim,
            hidden: HiddenLayers::default(),
            sgd: SgdConfig::default(),
            seed: 0,
            loss_weights: LossWeights::default(),
            routing: GradientRouting::Joint,
        }
    }

    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }

    /// `K · (p + q + 2)`
    pub fn fused_dim(&self) -> usize {
        self.modalities() * (self.shallow_dim + self.deep_dim + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() {
            return Err(Error::InvalidConfig("need at least one modality".into()));
        }
        if self.input_dims.contains(&0)
            || self.outcome_dim == 0
            || self.shallow_dim == 0
            || self.deep_dim == 0
        {
            return Err(Error::InvalidConfig(format!(
                "all dimensions must be >= 1 (J {:?}, m {}, p {}, q {})",
                self.input_dims, self.outcome_dim, self.shallow_dim, self.deep_dim
            )));
        }
        self.sgd.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    /// `h = μ + σ ε`, `z = μ + σ ε`.
    Sample,
    /// `h = μ`, `z = μ`.
    MeanPlugIn,
}

/// Encoder outputs of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoding {
    pub shallow: GaussianEncoding,
    pub h: Vector,
    pub deep: GaussianEncoding,
    pub z: Vector,
}

/// Predictor input `g`; see the module docs for its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeatures {
    pub g: Vector,
}

impl FusedFeatures {
    pub fn from_encodings(encodings: &[ModalityEncoding]) -> Self {
        let mut g = Vec::new();
        for e in encodings {
            g.extend_from_slice(&e.shallow.mu);
            g.push(e.shallow.sigma);
            g.extend_from_slice(&e.deep.mu);
            g.push(e.deep.sigma);
        }
        FusedFeatures { g: g.into() }
    }
}

/// Standard normal noise for every reparameterized draw of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct InvaNoise {
    pub eps_h: Vec<Vec<f64>>,
    pub eps_z: Vec<Vec<f64>>,
}

impl InvaNoise {
    pub fn draw(config: &InvaConfig, rng: &mut Rng) -> Self {
        let k = config.modalities();
        let mut eps_h = Vec::with_capacity(k);
        let mut eps_z = Vec::with_capacity(k);
        for _ in 0..k {
            eps_h.push((0..config.shallow_dim).map(|_| rng.standard_normal()).collect());
            eps_z.push((0..config.deep_dim).map(|_| rng.standard_normal()).collect());
        }
        InvaNoise { eps_h, eps_z }
    }

    /// All-zero noise, which turns every draw into its mean.
    pub fn zeros(config: &InvaConfig) -> Self {
        let k = config.modalities();
        InvaNoise {
            eps_h: vec![vec![0.0; config.shallow_dim]; k],
            eps_z: vec![vec![0.0; config.deep_dim]; k],
        }
    }
}

/// Per-modality terms of the reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityTerms {
    pub recon_sq: f64,
    pub kl_shallow: f64,
    pub kl_deep: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub parts: LossParts,
    pub modalities: Vec<ModalityTerms>,
}

/// ELBO contribution of one modality: `E[log p(x|z)] − KL_h − KL_z` with the
/// expectation realized single-sample as `−‖x − x̂‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub log_lik: f64,
    pub kl_shallow: f64,
    pub kl_deep: f64,
}

impl ElboTerms {
    pub fn elbo(&self) -> f64 {
        self.log_lik - self.kl_shallow - self.kl_deep
    }
}

struct ModalityTrace {
    enc_img: ForwardCache,
    enc_shared: ForwardCache,
    dec_shared: ForwardCache,
    dec_img: ForwardCache,
    encoding: ModalityEncoding,
    x_hat: Vector,
}

/// Everything a forward pass leaves behind for backprop and ELBO bookkeeping.
pub struct InvaTrace {
    modalities: Vec<ModalityTrace>,
    noise: InvaNoise,
    predictor: ForwardCache,
    y_hat: Vector,
}

impl InvaTrace {
    pub fn y_hat(&self) -> &Vector {
        &self.y_hat
    }

    pub fn x_hat(&self, k: usize) -> &Vector {
        &self.modalities[k].x_hat
    }

    pub fn encodings(&self) -> impl Iterator<Item = &ModalityEncoding> {
        self.modalities.iter().map(|m| &m.encoding)
    }

    /// ELBO terms recomputed from the raw encoder-head outputs in the caches.
    pub fn elbo_terms(&self, sample: &MultiModalSample) -> Vec<ElboTerms> {
        fn kl_from_head(raw: &[f64]) -> f64 {
            let (mu, ls) = raw.split_at(raw.len() - 1);
            let ls = ls[0].clamp(-crate::vae::LOG_SIGMA_LIMIT, crate::vae::LOG_SIGMA_LIMIT);
            let var = (2.0 * ls).exp();
            mu.iter().map(|m| 0.5 * (m * m + var - 1.0 - 2.0 * ls)).sum()
        }
        self.modalities
            .iter()
            .zip(&sample.x)
            .map(|(m, x)| ElboTerms {
                log_lik: -x
                    .iter()
                    .zip(m.x_hat.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
                kl_shallow: kl_from_head(m.enc_img.output()),
                kl_deep: kl_from_head(m.enc_shared.output()),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvaModel {
    pub config: InvaConfig,
    /// `E_k` (parameters `α_k`): `J_k → p + 1`.
    pub enc_img: Vec<Mlp>,
    /// `Ē` (parameters `β`): `p → q + 1`.
    pub enc_shared: Mlp,
    /// `D̄` (parameters `γ`): `q → p`.
    pub dec_shared: Mlp,
    /// `D_k` (parameters `θ_k`): `p → J_k`.
    pub dec_img: Vec<Mlp>,
    /// Predictor (parameters `δ`): `K(p + q + 2) → m`.
    pub predictor: Mlp,
}

impl InvaModel {
    /// Builds all networks and draws Xavier weights from `config.seed`.
    pub fn new(config: InvaConfig) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = Rng::new(model.config.seed);
        model.for_each_net_mut(|net| net.xavier_init(&mut rng));
        Ok(model)
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(config: InvaConfig) -> Result<Self> {
        config.validate()?;
        let p = config.shallow_dim;
        let q = config.deep_dim;
        let h = &config.hidden;
        let enc_img = config
            .input_dims
            .iter()
            .enumerate()
            .map(|(k, &j)| Mlp::with_hidden(format!("enc_img.{k}"), j, &h.enc_img, p + 1))
            .collect::<Result<Vec<_>>>()?;
        let dec_img = config
            .input_dims
            .iter()
            .enumerate()
            .map(|(k, &j)| Mlp::with_hidden(format!("dec_img.{k}"), p, &h.dec_img, j))
            .collect::<Result<Vec<_>>>()?;
        let enc_shared = Mlp::with_hidden("enc_shared", p, &h.enc_shared, q + 1)?;
        let dec_shared = Mlp::with_hidden("dec_shared", q, &h.dec_shared, p)?;
        let predictor =
            Mlp::with_hidden("predictor", config.fused_dim(), &h.predictor, config.outcome_dim)?;
        let model = InvaModel {
            config,
            enc_img,
            enc_shared,
            dec_shared,
            dec_img,
            predictor,
        };
        model.check_dimension_chain()?;
        Ok(model)
    }

    /// Reassembles a model from checkpointed networks.
    pub fn from_parts(
        config: InvaConfig,
        enc_img: Vec<Mlp>,
        enc_shared: Mlp,
        dec_shared: Mlp,
        dec_img: Vec<Mlp>,
        predictor: Mlp,
    ) -> Result<Self> {
        config.validate()?;
        let model = InvaModel {
            config,
            enc_img,
            enc_shared,
            dec_shared,
            dec_img,
            predictor,
        };
        model.check_dimension_chain()?;
        Ok(model)
    }

    /// `J_k → p+1 → p → q+1 → q → p → J_k` for every `k`, and
    /// predictor input `K(p+q+2)`.
    pub fn check_dimension_chain(&self) -> Result<()> {
        let c = &self.config;
        let (p, q) = (c.shallow_dim, c.deep_dim);
        let k = c.modalities();
        let bad = |what: String| Err(Error::InvalidConfig(format!("dimension chain broken: {what}")));
        if self.enc_img.len() != k || self.dec_img.len() != k {
            return bad(format!("expected {k} image-specific encoder/decoder pairs"));
        }
        for (i, &j) in c.input_dims.iter().enumerate() {
            let (e, d) = (&self.enc_img[i], &self.dec_img[i]);
            if e.in_dim() != j || e.out_dim() != p + 1 {
                return bad(format!("enc_img.{i} is {}→{}", e.in_dim(), e.out_dim()));
            }
            if d.in_dim() != p || d.out_dim() != j {
                return bad(format!("dec_img.{i} is {}→{}", d.in_dim(), d.out_dim()));
            }
        }
        if self.enc_shared.in_dim() != p || self.enc_shared.out_dim() != q + 1 {
            return bad("enc_shared".into());
        }
        if self.dec_shared.in_dim() != q || self.dec_shared.out_dim() != p {
            return bad("dec_shared".into());
        }
        if self.predictor.in_dim() != c.fused_dim() || self.predictor.out_dim() != c.outcome_dim {
            return bad("predictor".into());
        }
        Ok(())
    }

    pub fn for_each_net(&self, mut f: impl FnMut(&Mlp)) {
        self.enc_img.iter().for_each(&mut f);
        f(&self.enc_shared);
        f(&self.dec_shared);
        self.dec_img.iter().for_each(&mut f);
        f(&self.predictor);
    }

    pub fn for_each_net_mut(&mut self, mut f: impl FnMut(&mut Mlp)) {
        self.enc_img.iter_mut().for_each(&mut f);
        f(&mut self.enc_shared);
        f(&mut self.dec_shared);
        self.dec_img.iter_mut().for_each(&mut f);
        f(&mut self.predictor);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_net(|net| n += net.num_params());
        n
    }

    fn check_inputs(&self, x_list: &[Vector]) -> Result<()> {
        let dims = &self.config.input_dims;
        if x_list.len() != dims.len() || x_list.iter().zip(dims).any(|(x, &j)| x.len() != j) {
            return Err(Error::shape(
                "InvaModel",
                format!("input dims {dims:?}"),
                format!("{:?}", x_list.iter().map(|x| x.len()).collect::<Vec<_>>()),
            ));
        }
        Ok(())
    }

    /// Encodes every modality under explicit noise, keeping forward caches.
    fn encode_traced(
        &self,
        x_list: &[Vector],
        noise: &InvaNoise,
    ) -> Result<Vec<(ForwardCache, ForwardCache, ModalityEncoding)>> {
        self.check_inputs(x_list)?;
        let (p, q) = (self.config.shallow_dim, self.config.deep_dim);
        x_list
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let (raw_h, c_img) = self.enc_img[k].forward(x)?;
                let shallow = encode_head_split(&raw_h, p)?;
                let h = reparam_with_noise(&shallow, &noise.eps_h[k]);
                let (raw_z, c_shared) = self.enc_shared.forward(&h)?;
                let deep = encode_head_split(&raw_z, q)?;
                let z = reparam_with_noise(&deep, &noise.eps_z[k]);
                Ok((
                    c_img,
                    c_shared,
                    ModalityEncoding {
                        shallow,
                        h,
                        deep,
                        z,
                    },
                ))
            })
            .collect()
    }

    pub fn encode(&self, x_list: &[Vector], rng: &mut Rng, mode: EncodeMode) -> Result<Vec<ModalityEncoding>> {
        let noise = match mode {
            EncodeMode::Sample => InvaNoise::draw(&self.config, rng),
            EncodeMode::MeanPlugIn => InvaNoise::zeros(&self.config),
        };
        self.encode_with_noise(x_list, &noise)
    }

    pub fn encode_with_noise(&self, x_list: &[Vector], noise: &InvaNoise) -> Result<Vec<ModalityEncoding>> {
        Ok(self
            .encode_traced(x_list, noise)?
            .into_iter()
            .map(|(_, _, e)| e)
            .collect())
    }

    /// `x̂_k = μ_{D_k}(μ_D̄(z_k))`.
    pub fn decode(&self, z: &[f64], k: usize) -> Result<Vector> {
        let dec = self.dec_img.get(k).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "modality index {k} out of range (K = {})",
                self.dec_img.len()
            ))
        })?;
        if z.len() != self.config.deep_dim {
            return Err(Error::shape(
                "InvaModel::decode",
                format!("deep dim {}", self.config.deep_dim),
                format!("z len {}", z.len()),
            ));
        }
        dec.eval(&self.dec_shared.eval(z)?)
    }

    pub fn fuse_features(&self, x_list: &[Vector], rng: &mut Rng, mode: EncodeMode) -> Result<FusedFeatures> {
        Ok(FusedFeatures::from_encodings(&self.encode(x_list, rng, mode)?))
    }

    /// Deterministic prediction from mean plug-in features.
    pub fn predict(&self, x_list: &[Vector]) -> Result<Vector> {
        let enc = self.encode_with_noise(x_list, &InvaNoise::zeros(&self.config))?;
        self.predictor.eval(&FusedFeatures::from_encodings(&enc).g)
    }

    /// Forward pass of the training loss at fixed noise.
    pub fn evaluate(&self, sample: &MultiModalSample, noise: &InvaNoise) -> Result<(LossBreakdown, InvaTrace)> {
        if sample.y.len() != self.config.outcome_dim {
            return Err(Error::shape(
                "InvaModel::evaluate",
                format!("outcome dim {}", self.config.outcome_dim),
                format!("y len {}", sample.y.len()),
            ));
        }
        let encoded = self.encode_traced(&sample.x, noise)?;
        let mut traces = Vec::with_capacity(encoded.len());
        let mut terms = Vec::with_capacity(encoded.len());
        for (k, (c_img, c_shared, encoding)) in encoded.into_iter().enumerate() {
            let (hh, c_dshared) = self.dec_shared.forward(&encoding.z)?;
            let (x_hat, c_dimg) = self.dec_img[k].forward(&hh)?;
            let t = ModalityTerms {
                recon_sq: sample.x[k].dist_sq(&x_hat)?,
                kl_shallow: kl_isotropic(&encoding.shallow),
                kl_deep: kl_isotropic(&encoding.deep),
            };
            for (name, v) in [
                ("recon_sq", t.recon_sq),
                ("kl_shallow", t.kl_shallow),
                ("kl_deep", t.kl_deep),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: format!("{name}[{k}]"),
                    });
                }
            }
            terms.push(t);
            traces.push(ModalityTrace {
                enc_img: c_img,
                enc_shared: c_shared,
                dec_shared: c_dshared,
                dec_img: c_dimg,
                encoding,
                x_hat,
            });
        }
        let g = FusedFeatures::from_encodings(
            &traces.iter().map(|t| t.encoding.clone()).collect::<Vec<_>>(),
        );
        let (y_hat, c_pred) = self.predictor.forward(&g.g)?;
        let pred = sample.y.dist_sq(&y_hat)?;
        if !pred.is_finite() {
            return Err(Error::NonFiniteLoss { term: "pred".into() });
        }
        let recon: f64 = terms
            .iter()
            .map(|t| t.recon_sq + t.kl_shallow + t.kl_deep)
            .sum();
        let w = self.config.loss_weights;
        let parts = LossParts {
            recon,
            pred,
            total: w.recon * recon + w.pred * pred,
        };
        Ok((
            LossBreakdown {
                parts,
                modalities: terms,
            },
            InvaTrace {
                modalities: traces,
                noise: noise.clone(),
                predictor: c_pred,
                y_hat,
            },
        ))
    }

    /// Training loss of one subject with a single fresh noise draw.
    pub fn loss_total(&self, sample: &MultiModalSample, rng: &mut Rng) -> Result<(LossBreakdown, InvaTrace)> {
        let noise = InvaNoise::draw(&self.config, rng);
        self.evaluate(sample, &noise)
    }

    /// Accumulates `scale · ∂(weighted total)/∂θ` for one evaluated subject.
    pub fn backprop(&mut self, trace: &InvaTrace, sample: &MultiModalSample, scale: f64) -> Result<()> {
        let (p, q) = (self.config.shallow_dim, self.config.deep_dim);
        let w = self.config.loss_weights;
        let wr = w.recon * scale;
        let wp = w.pred * scale;
        let joint = self.config.routing == GradientRouting::Joint;

        let dy_hat: Vec<f64> = trace
            .y_hat
            .iter()
            .zip(sample.y.iter())
            .map(|(a, b)| 2.0 * wp * (a - b))
            .collect();
        let dg = self.predictor.backward(&trace.predictor, &dy_hat)?;
        let block = p + q + 2;

        for (k, mt) in trace.modalities.iter().enumerate() {
            let enc = &mt.encoding;
            let gk = &dg[k * block..(k + 1) * block];
            let route = if joint { 1.0 } else { 0.0 };

            let dx_hat: Vec<f64> = mt
                .x_hat
                .iter()
                .zip(sample.x[k].iter())
                .map(|(a, b)| 2.0 * wr * (a - b))
                .collect();
            let dhh = self.dec_img[k].backward(&mt.dec_img, &dx_hat)?;
            let dz = self.dec_shared.backward(&mt.dec_shared, &dhh)?;

            // deep level: z = μ_Ē + σ_Ē ε_z
            let eps_z = &trace.noise.eps_z[k];
            let mut draw_z = vec![0.0; q + 1];
            let mut dsig_z = route * gk[p + 1 + q];
            for j in 0..q {
                draw_z[j] = dz[j] + route * gk[p + 1 + j] + wr * enc.deep.mu[j];
                dsig_z += dz[j] * eps_z[j];
            }
            draw_z[q] = kl_and_path_dlog(&enc.deep, dsig_z, wr);
            let dh = self.enc_shared.backward(&mt.enc_shared, &draw_z)?;

            // shallow level: h = μ_E + σ_E ε_h
            let eps_h = &trace.noise.eps_h[k];
            let mut draw_h = vec![0.0; p + 1];
            let mut dsig_h = route * gk[p];
            for j in 0..p {
                draw_h[j] = dh[j] + route * gk[j] + wr * enc.shallow.mu[j];
                dsig_h += dh[j] * eps_h[j];
            }
            draw_h[p] = kl_and_path_dlog(&enc.shallow, dsig_h, wr);
            self.enc_img[k].backward(&mt.enc_img, &draw_h)?;
        }
        Ok(())
    }

    /// Loss at fixed noise, no gradients.
    pub fn sample_loss(&self, sample: &MultiModalSample, noise: &InvaNoise) -> Result<f64> {
        Ok(self.evaluate(sample, noise)?.0.parts.total)
    }

    /// Loss at fixed noise with gradients accumulated (scaled by `scale`).
    pub fn sample_loss_grad(&mut self, sample: &MultiModalSample, noise: &InvaNoise, scale: f64) -> Result<LossBreakdown> {
        let (breakdown, trace) = self.evaluate(sample, noise)?;
        self.backprop(&trace, sample, scale)?;
        Ok(breakdown)
    }

    /// One SGD step on the mean loss of `batch`; each parameter set gets its own step.
    pub fn train_step(&mut self, batch: &[&MultiModalSample], rng: &mut Rng) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut mean = LossParts::default();
        for s in batch {
            let noise = InvaNoise::draw(&self.config, rng);
            let b = self.sample_loss_grad(s, &noise, scale)?;
            b.parts.check_finite()?;
            mean.accumulate(&b.parts, scale);
        }
        let sgd = self.config.sgd.clone();
        let mut result = Ok(());
        self.for_each_net_mut(|net| {
            if result.is_ok() {
                result = net.sgd_step(&sgd).map(|_| ());
            }
        });
        result?;
        Ok(mean)
    }

    /// Trains for `config.sgd.epochs` epochs; returns the mean total loss per epoch.
    pub fn fit(&mut self, train: &[MultiModalSample], rng: &mut Rng) -> Result<Vec<f64>> {
        let sgd = self.config.sgd.clone();
        crate::vae::run_epochs(train, &sgd, rng, |batch, rng| self.train_step(batch, rng))
    }

    /// Test-time MSPE using [`InvaModel::predict`].
    pub fn mspe(&self, data: &[MultiModalSample]) -> Result<f64> {
        let preds = data
            .iter()
            .map(|s| self.predict(&s.x))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::simgen::mspe(
            data.iter().zip(&preds).map(|(s, p)| (s.y.as_slice(), p.as_slice())),
        ))
    }
}

/// `∂/∂ log σ` of `σ`-path gradient plus the weighted KL term `dim (σ² − 1)`.
fn kl_and_path_dlog(enc: &GaussianEncoding, dsigma: f64, kl_weight: f64) -> f64 {
    if enc.clamped {
        return 0.0;
    }
    dsigma * enc.sigma + kl_weight * enc.dim() as f64 * (enc.sigma * enc.sigma - 1.0)
}

impl Parameterized for InvaModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[f64])) {
        self.for_each_net(|net| net.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        self.for_each_net_mut(|net| net.visit_params_mut(f));
    }
}

#[cfg(test)]
mod tests;
