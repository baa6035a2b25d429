//! Method roster, training configuration, and model checkpoints.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inva::{
    GradientRouting, HiddenLayers, InvaConfig, InvaModel, NoImageSpecificConfig,
    NoImageSpecificModel, NoSharedModel,
};
use crate::ndcore::{mix_seed, Rng, Vector};
use crate::neuralnet::{read_mlp, write_mlp, Lines, Mlp, SgdConfig};
use crate::simgen::{mspe, MultiModalSample};
use crate::vae::{LossWeights, VaeBaseline, VaeConfig};

/// Every method the harness knows how to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Inva,
    /// VAE baseline on the first modality only.
    VaeX1,
    /// VAE baseline on the second modality only.
    VaeX2,
    /// Per-modality VAEs, predictions averaged.
    InvaNoShared,
    /// One shared isotropic autoencoder for all modalities.
    InvaNoImageSpecific,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Inva,
        Method::VaeX1,
        Method::VaeX2,
        Method::InvaNoShared,
        Method::InvaNoImageSpecific,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Inva => "inva",
            Method::VaeX1 => "vae_x1",
            Method::VaeX2 => "vae_x2",
            Method::InvaNoShared => "inva_wo_shd",
            Method::InvaNoImageSpecific => "inva_wo_is",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidConfig(format!("unknown method `{s}` (known: {})", names.join(", ")))
            })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Hyperparameters shared by every method of a plan. Unset latent sizes are
/// resolved from the data dimensions by [`TrainingConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// `p`; defaults to the largest modality dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shallow_dim: Option<usize>,
    /// `q`; defaults to `ceil(p / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deep_dim: Option<usize>,
    /// Latent size of the VAE baselines and the no-shared ablation; defaults to `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vae_latent_dim: Option<usize>,
    /// Latent size `q'` of the no-image-specific ablation; defaults to
    /// `p + q + 1`, which gives its predictor the same input width as InVA's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_latent_dim: Option<usize>,
    #[serde(default)]
    pub routing: GradientRouting,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            sgd: SgdConfig::default(),
            hidden: default_hidden(),
            shallow_dim: None,
            deep_dim: None,
            vae_latent_dim: None,
            shared_latent_dim: None,
            routing: GradientRouting::Joint,
            loss_weights: LossWeights::default(),
        }
    }
}

/// Latent sizes after defaults have been filled in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentDims {
    pub shallow: usize,
    pub deep: usize,
    pub vae: usize,
    pub shared: usize,
}

impl TrainingConfig {
    pub fn resolve(&self, input_dims: &[usize]) -> LatentDims {
        let shallow = self
            .shallow_dim
            .unwrap_or_else(|| input_dims.iter().copied().max().unwrap_or(1));
        let deep = self.deep_dim.unwrap_or(shallow.div_ceil(2));
        LatentDims {
            shallow,
            deep,
            vae: self.vae_latent_dim.unwrap_or(shallow),
            shared: self.shared_latent_dim.unwrap_or(shallow + deep + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        for (name, v) in [
            ("shallow_dim", self.shallow_dim),
            ("deep_dim", self.deep_dim),
            ("vae_latent_dim", self.vae_latent_dim),
            ("shared_latent_dim", self.shared_latent_dim),
        ] {
            if v == Some(0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// A model of any roster method.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Inva(InvaModel),
    Vae { modality: usize, model: VaeBaseline },
    NoShared(NoSharedModel),
    NoImageSpecific(NoImageSpecificModel),
}

/// Checkpoint header; the networks follow in a fixed order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
enum ModelSpec {
    Inva { config: InvaConfig },
    Vae { modality: usize, config: VaeConfig },
    NoShared { configs: Vec<VaeConfig> },
    NoImageSpecific { config: NoImageSpecificConfig },
}

pub const CHECKPOINT_MAGIC: &str = "inva-checkpoint v1";

impl TrainedModel {
    /// Freshly initialized model; weights are drawn from `seed`.
    pub fn build(
        method: Method,
        cfg: &TrainingConfig,
        input_dims: &[usize],
        outcome_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.resolve(input_dims);
        let init_seed = mix_seed(&[seed, 1]);
        let vae_cfg = |j: usize| VaeConfig {
            input_dim: j,
            outcome_dim,
            latent_dim: dims.vae,
            hidden: cfg.hidden.clone(),
        };
        let modality_dim = |k: usize| {
            input_dims.get(k).copied().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{method} needs modality {} but the data has {}",
                    k + 1,
                    input_dims.len()
                ))
            })
        };
        Ok(match method {
            Method::Inva => {
                let mut c = InvaConfig::new(input_dims.to_vec(), outcome_dim, dims.shallow, dims.deep);
                c.hidden = HiddenLayers::uniform(&cfg.hidden);
                c.sgd = cfg.sgd.clone();
                c.seed = init_seed;
                c.loss_weights = cfg.loss_weights;
                c.routing = cfg.routing;
                TrainedModel::Inva(InvaModel::new(c)?)
            }
            Method::VaeX1 | Method::VaeX2 => {
                let modality = if method == Method::VaeX1 { 0 } else { 1 };
                let model = VaeBaseline::new(vae_cfg(modality_dim(modality)?), &mut Rng::new(init_seed))?;
                TrainedModel::Vae { modality, model }
            }
            Method::InvaNoShared => TrainedModel::NoShared(NoSharedModel::new(
                input_dims.iter().map(|&j| vae_cfg(j)).collect(),
                &mut Rng::new(init_seed),
            )?),
            Method::InvaNoImageSpecific => {
                let mut c = NoImageSpecificConfig::from_input_dims(
                    input_dims,
                    outcome_dim,
                    dims.shared,
                    cfg.hidden.clone(),
                    cfg.sgd.clone(),
                )?;
                c.loss_weights = cfg.loss_weights;
                TrainedModel::NoImageSpecific(NoImageSpecificModel::new(c, &mut Rng::new(init_seed))?)
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Inva(_) => Method::Inva,
            TrainedModel::Vae { modality: 0, .. } => Method::VaeX1,
            TrainedModel::Vae { .. } => Method::VaeX2,
            TrainedModel::NoShared(_) => Method::InvaNoShared,
            TrainedModel::NoImageSpecific(_) => Method::InvaNoImageSpecific,
        }
    }

    /// Trains in place with `sgd` and a training stream derived from `seed`;
    /// returns the per-epoch mean loss.
    pub fn fit(&mut self, train: &[MultiModalSample], sgd: &SgdConfig, seed: u64) -> Result<Vec<f64>> {
        let mut rng = Rng::new(mix_seed(&[seed, 2]));
        match self {
            TrainedModel::Inva(m) => {
                m.config.sgd = sgd.clone();
                m.fit(train, &mut rng)
            }
            TrainedModel::Vae { modality, model } => model.fit(train, *modality, sgd, &mut rng),
            TrainedModel::NoShared(m) => m.fit(train, sgd, &mut rng),
            TrainedModel::NoImageSpecific(m) => {
                m.config.sgd = sgd.clone();
                m.fit(train, &mut rng)
            }
        }
    }

    pub fn predict(&self, x_list: &[Vector]) -> Result<Vector> {
        match self {
            TrainedModel::Inva(m) => m.predict(x_list),
            TrainedModel::Vae { modality, model } => {
                let x = x_list.get(*modality).ok_or_else(|| {
                    Error::InvalidArgument(format!("input has no modality {}", modality + 1))
                })?;
                model.predict(x)
            }
            TrainedModel::NoShared(m) => m.predict(x_list),
            TrainedModel::NoImageSpecific(m) => m.predict(x_list),
        }
    }

    /// `(1/(n m)) Σ ‖y − ŷ‖²` over `data`.
    pub fn mspe(&self, data: &[MultiModalSample]) -> Result<f64> {
        let preds = data
            .iter()
            .map(|s| self.predict(&s.x))
            .collect::<Result<Vec<_>>>()?;
        for (s, p) in data.iter().zip(&preds) {
            if s.y.len() != p.len() {
                return Err(Error::shape("mspe", format!("y len {}", s.y.len()), format!("ŷ len {}", p.len())));
            }
        }
        Ok(mspe(data.iter().zip(&preds).map(|(s, p)| (s.y.as_slice(), p.as_slice()))))
    }

    pub fn num_params(&self) -> usize {
        match self {
            TrainedModel::Inva(m) => m.num_params(),
            TrainedModel::Vae { model, .. } => model.nets().iter().map(|n| n.num_params()).sum(),
            TrainedModel::NoShared(m) => m.num_params(),
            TrainedModel::NoImageSpecific(m) => m.num_params(),
        }
    }

    /// Every network of the model, predictor(s) included.
    pub fn predictors_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            TrainedModel::Inva(m) => vec![&mut m.predictor],
            TrainedModel::Vae { model, .. } => vec![&mut model.predictor],
            TrainedModel::NoShared(m) => m.models.iter_mut().map(|v| &mut v.predictor).collect(),
            TrainedModel::NoImageSpecific(m) => vec![&mut m.predictor],
        }
    }

    fn nets(&self) -> Vec<&Mlp> {
        match self {
            TrainedModel::Inva(m) => {
                let mut v = Vec::new();
                v.extend(m.enc_img.iter());
                v.push(&m.enc_shared);
                v.push(&m.dec_shared);
                v.extend(m.dec_img.iter());
                v.push(&m.predictor);
                v
            }
            TrainedModel::Vae { model, .. } => model.nets().to_vec(),
            TrainedModel::NoShared(m) => m.models.iter().flat_map(|v| v.nets()).collect(),
            TrainedModel::NoImageSpecific(m) => m.nets().to_vec(),
        }
    }

    fn spec(&self) -> ModelSpec {
        match self {
            TrainedModel::Inva(m) => ModelSpec::Inva { config: m.config.clone() },
            TrainedModel::Vae { modality, model } => ModelSpec::Vae {
                modality: *modality,
                config: model.config.clone(),
            },
            TrainedModel::NoShared(m) => ModelSpec::NoShared {
                configs: m.models.iter().map(|v| v.config.clone()).collect(),
            },
            TrainedModel::NoImageSpecific(m) => ModelSpec::NoImageSpecific { config: m.config.clone() },
        }
    }

    /// Text checkpoint: magic line, `config <json>`, then every network.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        let io = |e: std::io::Error| Error::io("checkpoint", e);
        writeln!(out, "{CHECKPOINT_MAGIC}").map_err(io)?;
        let json = serde_json::to_string(&self.spec()).map_err(|e| Error::json("checkpoint", e))?;
        writeln!(out, "config {json}").map_err(io)?;
        for net in self.nets() {
            write_mlp(net, out).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut lines = Lines::new(reader, source);
        let magic = lines.next_line()?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(lines.err(format!("expected `{CHECKPOINT_MAGIC}`, found `{magic}`")));
        }
        let line = lines.next_line()?;
        let json = line
            .strip_prefix("config ")
            .ok_or_else(|| lines.err("expected `config <json>`".into()))?;
        let spec: ModelSpec =
            serde_json::from_str(json).map_err(|e| lines.err(format!("bad config: {e}")))?;
        let mut next = || read_mlp(&mut lines);
        Ok(match spec {
            ModelSpec::Inva { config } => {
                let k = config.modalities();
                let enc_img = (0..k).map(|_| next()).collect::<Result<Vec<_>>>()?;
                let enc_shared = next()?;
                let dec_shared = next()?;
                let dec_img = (0..k).map(|_| next()).collect::<Result<Vec<_>>>()?;
                let predictor = next()?;
                TrainedModel::Inva(InvaModel::from_parts(
                    config, enc_img, enc_shared, dec_shared, dec_img, predictor,
                )?)
            }
            ModelSpec::Vae { modality, config } => {
                let (e, d, p) = (next()?, next()?, next()?);
                TrainedModel::Vae {
                    modality,
                    model: VaeBaseline::from_parts(config, e, d, p)?,
                }
            }
            ModelSpec::NoShared { configs } => {
                let models = configs
                    .into_iter()
                    .map(|c| {
                        let (e, d, p) = (next()?, next()?, next()?);
                        VaeBaseline::from_parts(c, e, d, p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                TrainedModel::NoShared(NoSharedModel::from_models(models)?)
            }
            ModelSpec::NoImageSpecific { config } => {
                let (e, d, p) = (next()?, next()?, next()?);
                TrainedModel::NoImageSpecific(NoImageSpecificModel::from_parts(config, e, d, p)?)
            }
        })
    }
}

/// Builds `method` and trains it on `train`. `seed` drives both the weight
/// initialization and the minibatch/noise stream.
pub fn train_method(
    method: Method,
    cfg: &TrainingConfig,
    train: &[MultiModalSample],
    seed: u64,
) -> Result<(TrainedModel, Vec<f64>)> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let input_dims: Vec<usize> = first.x.iter().map(|x| x.len()).collect();
    let mut model = TrainedModel::build(method, cfg, &input_dims, first.y.len(), seed)?;
    let trace = model.fit(train, &cfg.sgd, seed)?;
    Ok((model, trace))
}
