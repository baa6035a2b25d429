//! Finite-difference gradient checks of every model's full training loss on
//! small configurations.

use crate::error::Result;
use crate::inva::{
    HiddenLayers, InvaConfig, InvaModel, InvaNoise, NoImageSpecificConfig, NoImageSpecificModel,
    NoSharedModel,
};
use crate::ndcore::{mix_seed, Rng};
use crate::neuralnet::{grad_check_model, GradCheckReport, SgdConfig, FD_STEP};
use crate::simgen::MultiModalSample;
use crate::vae::{LossWeights, VaeBaseline, VaeConfig};

/// One model of the suite and its check result.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub label: String,
    pub report: GradCheckReport,
}

const P: usize = 2;
const Q: usize = 1;
const WIDTH: usize = 3;

fn toy_sample(dims: &[usize], m: usize, rng: &mut Rng) -> Result<MultiModalSample> {
    Ok(MultiModalSample {
        x: dims.iter().map(|&j| rng.gauss_vec(j, 0.0, 1.0)).collect::<Result<_>>()?,
        y: rng.gauss_vec(m, 0.0, 1.0)?,
    })
}

fn noise(dims: &[usize], rng: &mut Rng) -> Vec<Vec<f64>> {
    dims.iter()
        .map(|&d| (0..d).map(|_| rng.standard_normal()).collect())
        .collect()
}

/// Checks InVA (several `J_k` pairs), both ablations, and the VAE baseline
/// with `p = 2`, `q = 1`, hidden width 3, against central differences.
pub fn gradcheck_suite(seed: u64, tol: f64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let m = 2;
    for (i, dims) in [[2, 2], [2, 8], [5, 3], [8, 8]].iter().enumerate() {
        let mut rng = Rng::new(mix_seed(&[seed, 0x1A, i as u64]));
        let mut cfg = InvaConfig::new(dims.to_vec(), m, P, Q);
        cfg.hidden = HiddenLayers::uniform(&[WIDTH]);
        cfg.seed = mix_seed(&[seed, 0x1B, i as u64]);
        let mut model = InvaModel::new(cfg.clone())?;
        let s = toy_sample(dims, m, &mut rng)?;
        let nz = InvaNoise::draw(&cfg, &mut rng);
        let report = grad_check_model(
            &mut model,
            |mm: &mut InvaModel| Ok(mm.sample_loss_grad(&s, &nz, 1.0)?.parts.total),
            |mm: &InvaModel| mm.sample_loss(&s, &nz),
            FD_STEP,
            tol,
        )?;
        out.push(SuiteEntry {
            label: format!("inva J={dims:?}"),
            report,
        });
    }
    for j in [2, 5, 8] {
        let mut rng = Rng::new(mix_seed(&[seed, 0x2A, j as u64]));
        let dims = [j, j];

        let cfg = NoImageSpecificConfig::from_input_dims(&dims, m, P, vec![WIDTH], SgdConfig::default())?;
        let mut model = NoImageSpecificModel::new(cfg, &mut rng)?;
        let s = toy_sample(&dims, m, &mut rng)?;
        let eps = noise(&[P, P], &mut rng);
        let report = grad_check_model(
            &mut model,
            |mm: &mut NoImageSpecificModel| Ok(mm.sample_loss_grad(&s, &eps, 1.0)?.total),
            |mm: &NoImageSpecificModel| mm.sample_loss(&s, &eps),
            FD_STEP,
            tol,
        )?;
        out.push(SuiteEntry {
            label: format!("inva_wo_is J={j}"),
            report,
        });

        let vc = VaeConfig {
            input_dim: j,
            outcome_dim: m,
            latent_dim: P,
            hidden: vec![WIDTH],
        };
        let mut model = NoSharedModel::new(vec![vc.clone(), vc.clone()], &mut rng)?;
        let eps = noise(&[P, P], &mut rng);
        let report = grad_check_model(
            &mut model,
            |mm: &mut NoSharedModel| mm.sample_loss_grad(&s, &eps, 1.0),
            |mm: &NoSharedModel| mm.sample_loss(&s, &eps),
            FD_STEP,
            tol,
        )?;
        out.push(SuiteEntry {
            label: format!("inva_wo_shd J={j}"),
            report,
        });

        let mut model = VaeBaseline::new(vc, &mut rng)?;
        let e = noise(&[P], &mut rng).remove(0);
        let w = LossWeights::default();
        let report = grad_check_model(
            &mut model,
            |mm: &mut VaeBaseline| Ok(mm.sample_loss_grad(&s.x[0], &s.y, &e, w, 1.0)?.total),
            |mm: &VaeBaseline| Ok(mm.sample_loss(&s.x[0], &s.y, &e, w)?.total),
            FD_STEP,
            tol,
        )?;
        out.push(SuiteEntry {
            label: format!("vae J={j}"),
            report,
        });
    }
    Ok(out)
}
