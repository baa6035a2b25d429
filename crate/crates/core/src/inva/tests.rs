use super::*;
use crate::neuralnet::{flat_grads, flat_params, grad_check_model, Activation, LayerSpec, FD_STEP};
use crate::simgen::{gen_scenario, SimScenario};
use crate::vae::{VaeBaseline, VaeConfig};

fn small_config(routing: GradientRouting) -> InvaConfig {
    let mut c = InvaConfig::new(vec![2, 3], 2, 2, 1);
    c.hidden = HiddenLayers::uniform(&[3]);
    c.seed = 11;
    c.routing = routing;
    c
}

fn sample_for(dims: &[usize], m: usize, seed: u64) -> MultiModalSample {
    let mut rng = Rng::new(seed);
    MultiModalSample {
        x: dims.iter().map(|&j| rng.gauss_vec(j, 0.0, 1.0).unwrap()).collect(),
        y: rng.gauss_vec(m, 0.0, 1.0).unwrap(),
    }
}

fn linear(name: &str, w: &[&[f64]], b: &[f64]) -> Mlp {
    let mut net = Mlp::new(name, &[LayerSpec::new(w[0].len(), w.len(), Activation::Identity)]).unwrap();
    let layer = &mut net.layers_mut()[0];
    for (i, row) in w.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            layer.weight.as_mut_slice()[i * row.len() + j] = *v;
        }
    }
    layer.bias = Vector::from_slice(b);
    net
}

#[test]
fn zero_networks_give_standard_encodings() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::zeroed(cfg.clone()).unwrap();
    let s = sample_for(&cfg.input_dims, 2, 3);
    let (b, trace) = model.evaluate(&s, &InvaNoise::zeros(&cfg)).unwrap();
    for e in trace.encodings() {
        assert!(e.shallow.mu.iter().all(|&v| v == 0.0));
        assert_eq!(e.shallow.sigma, 1.0);
        assert_eq!(e.deep.sigma, 1.0);
        assert!(e.h.iter().all(|&v| v == 0.0));
    }
    for t in &b.modalities {
        assert_eq!(t.kl_shallow, 0.0);
        assert_eq!(t.kl_deep, 0.0);
    }
    let expect_recon: f64 = s.x.iter().map(|x| x.norm_sq()).sum();
    assert!((b.parts.recon - expect_recon).abs() < 1e-14);
    assert!((b.parts.pred - s.y.norm_sq()).abs() < 1e-14);
}

#[test]
fn identity_chain_reconstructs_exactly() {
    // J = p = q = 2, single linear layers, encoders emit (x, log σ = -5).
    let mut cfg = InvaConfig::new(vec![2], 1, 2, 2);
    cfg.hidden = HiddenLayers::uniform(&[]);
    let eye_head: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]];
    let eye: [&[f64]; 2] = [&[1.0, 0.0], &[0.0, 1.0]];
    let model = InvaModel::from_parts(
        cfg.clone(),
        vec![linear("e", &eye_head, &[0.0, 0.0, -5.0])],
        linear("es", &eye_head, &[0.0, 0.0, -5.0]),
        linear("ds", &eye, &[0.0, 0.0]),
        vec![linear("d", &eye, &[0.0, 0.0])],
        linear("p", &[&[0.0; 6]], &[0.0]),
    )
    .unwrap();
    let x = Vector::from_slice(&[0.7, -1.3]);
    let enc = model
        .encode(std::slice::from_ref(&x), &mut Rng::new(0), EncodeMode::MeanPlugIn)
        .unwrap();
    assert_eq!(enc[0].h, x);
    assert_eq!(enc[0].z, x);
    assert_eq!(model.decode(&enc[0].z, 0).unwrap(), x);
}

#[test]
fn mismatched_dimension_chain_is_rejected() {
    let cfg = small_config(GradientRouting::Joint);
    let m = InvaModel::zeroed(cfg.clone()).unwrap();
    let bad_dec = Mlp::with_hidden("ds", 2, &[3], 2).unwrap();
    let err = InvaModel::from_parts(
        cfg,
        m.enc_img.clone(),
        m.enc_shared.clone(),
        bad_dec,
        m.dec_img.clone(),
        m.predictor.clone(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("dec_shared"), "{err}");
}

#[test]
fn fused_layout_and_modality_permutation() {
    let enc = |a: f64| ModalityEncoding {
        shallow: GaussianEncoding::new(Vector::from_slice(&[a, a + 1.0]), 0.0),
        h: Vector::zeros(2),
        deep: GaussianEncoding::new(Vector::from_slice(&[a + 2.0]), 2f64.ln()),
        z: Vector::zeros(1),
    };
    let g = FusedFeatures::from_encodings(&[enc(10.0), enc(20.0)]).g;
    assert_eq!(g.len(), 2 * (2 + 1 + 2));
    assert_eq!(g.as_slice()[..5], [10.0, 11.0, 1.0, 12.0, 2.0]);
    let swapped = FusedFeatures::from_encodings(&[enc(20.0), enc(10.0)]).g;
    assert_eq!(swapped.as_slice()[..5], g.as_slice()[5..]);
    assert_eq!(swapped.as_slice()[5..], g.as_slice()[..5]);
}

#[test]
fn loss_matches_straight_line_computation() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::new(cfg.clone()).unwrap();
    let s = sample_for(&cfg.input_dims, 2, 5);
    let noise = InvaNoise::draw(&cfg, &mut Rng::new(9));
    let (b, _) = model.evaluate(&s, &noise).unwrap();

    let mut total = 0.0;
    let mut g = Vec::new();
    for k in 0..2 {
        let r = model.enc_img[k].eval(&s.x[k]).unwrap();
        let (mu_h, ls_h) = (&r[..2], r[2]);
        let h: Vec<f64> = (0..2).map(|j| mu_h[j] + ls_h.exp() * noise.eps_h[k][j]).collect();
        let r2 = model.enc_shared.eval(&h).unwrap();
        let (mu_z, ls_z) = (r2[0], r2[1]);
        let z = mu_z + ls_z.exp() * noise.eps_z[k][0];
        let xh = model.dec_img[k].eval(&model.dec_shared.eval(&[z]).unwrap()).unwrap();
        let rec: f64 = xh.iter().zip(s.x[k].iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let kl_h = 0.5 * (mu_h.iter().map(|m| m * m).sum::<f64>() + 2.0 * ((2.0 * ls_h).exp() - 1.0 - 2.0 * ls_h));
        let kl_z = 0.5 * (mu_z * mu_z + (2.0 * ls_z).exp() - 1.0 - 2.0 * ls_z);
        total += rec + kl_h + kl_z;
        g.extend_from_slice(mu_h);
        g.push(ls_h.exp());
        g.push(mu_z);
        g.push(ls_z.exp());
    }
    let yh = model.predictor.eval(&g).unwrap();
    let pred: f64 = yh.iter().zip(s.y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((b.parts.recon - total).abs() < 1e-12);
    assert!((b.parts.pred - pred).abs() < 1e-12);
    assert!((b.parts.total - total - pred).abs() < 1e-12);
}

#[test]
fn recon_loss_is_negative_elbo() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::new(cfg.clone()).unwrap();
    for seed in 0..5 {
        let s = sample_for(&cfg.input_dims, 2, 100 + seed);
        let noise = InvaNoise::draw(&cfg, &mut Rng::new(seed));
        let (b, trace) = model.evaluate(&s, &noise).unwrap();
        let elbo = trace.elbo_terms(&s);
        for (t, e) in b.modalities.iter().zip(&elbo) {
            assert!((t.recon_sq + e.log_lik).abs() < 1e-10);
            assert!((t.kl_shallow - e.kl_shallow).abs() < 1e-10);
            assert!((t.kl_deep - e.kl_deep).abs() < 1e-10);
        }
        let neg_elbo: f64 = elbo.iter().map(|e| -e.elbo()).sum();
        assert!((b.parts.recon - neg_elbo).abs() < 1e-10);
    }
}

#[test]
fn full_system_gradient_check() {
    let cfg = small_config(GradientRouting::Joint);
    let mut model = InvaModel::new(cfg.clone()).unwrap();
    let s = sample_for(&cfg.input_dims, 2, 21);
    let noise = InvaNoise::draw(&cfg, &mut Rng::new(22));
    let report = grad_check_model(
        &mut model,
        |m: &mut InvaModel| Ok(m.sample_loss_grad(&s, &noise, 1.0)?.parts.total),
        |m: &InvaModel| m.sample_loss(&s, &noise),
        FD_STEP,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report}");
    assert!(report.tensors.iter().any(|t| t.name.starts_with("enc_img.1")));
}

#[test]
fn split_routing_separates_losses() {
    let s = sample_for(&[2, 3], 2, 31);
    let cfg = small_config(GradientRouting::Split);
    let noise = InvaNoise::draw(&cfg, &mut Rng::new(32));

    let mut split = InvaModel::new(cfg.clone()).unwrap();
    split.sample_loss_grad(&s, &noise, 1.0).unwrap();

    let mut recon_only = InvaModel::new(InvaConfig {
        loss_weights: LossWeights { recon: 1.0, pred: 0.0 },
        routing: GradientRouting::Joint,
        ..cfg.clone()
    })
    .unwrap();
    recon_only.sample_loss_grad(&s, &noise, 1.0).unwrap();

    let mut joint = InvaModel::new(InvaConfig {
        routing: GradientRouting::Joint,
        ..cfg
    })
    .unwrap();
    joint.sample_loss_grad(&s, &noise, 1.0).unwrap();

    for k in 0..2 {
        assert_eq!(flat_grads(&split.enc_img[k]), flat_grads(&recon_only.enc_img[k]));
        assert_eq!(flat_grads(&split.dec_img[k]), flat_grads(&recon_only.dec_img[k]));
    }
    assert_eq!(flat_grads(&split.enc_shared), flat_grads(&recon_only.enc_shared));
    assert_eq!(flat_grads(&split.predictor), flat_grads(&joint.predictor));
}

#[test]
fn joint_routing_lets_prediction_reach_encoders() {
    let cfg = small_config(GradientRouting::Joint);
    let s = sample_for(&cfg.input_dims, 2, 41);
    let noise = InvaNoise::draw(&cfg, &mut Rng::new(42));
    let mut joint = InvaModel::new(cfg.clone()).unwrap();
    joint.sample_loss_grad(&s, &noise, 1.0).unwrap();
    let mut recon_only = InvaModel::new(InvaConfig {
        loss_weights: LossWeights { recon: 1.0, pred: 0.0 },
        ..cfg
    })
    .unwrap();
    recon_only.sample_loss_grad(&s, &noise, 1.0).unwrap();
    for k in 0..2 {
        let a = flat_grads(&joint.enc_img[k]);
        let b = flat_grads(&recon_only.enc_img[k]);
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "modality {k}: prediction gradient missing");
    }
    // decoders never see the prediction loss
    assert_eq!(flat_grads(&joint.dec_shared), flat_grads(&recon_only.dec_shared));
}

#[test]
fn zero_learning_rate_keeps_params() {
    let mut cfg = small_config(GradientRouting::Joint);
    cfg.sgd.learning_rate = 0.0;
    let mut model = InvaModel::new(cfg.clone()).unwrap();
    let before = model.clone();
    let s = sample_for(&cfg.input_dims, 2, 51);
    let loss = model.train_step(&[&s], &mut Rng::new(1)).unwrap();
    assert!(loss.total > 0.0);
    assert_eq!(flat_params(&model), flat_params(&before));
}

#[test]
fn parameter_count_formula() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::zeroed(cfg).unwrap();
    // widths 3, J = (2, 3), p = 2, q = 1, m = 2
    let lin = |i: usize, o: usize| i * o + o;
    let mlp = |i: usize, o: usize| lin(i, 3) + lin(3, o);
    let expect = mlp(2, 3) + mlp(3, 3) // E_k
        + mlp(2, 2) // Ē
        + mlp(1, 2) // D̄
        + mlp(2, 2) + mlp(2, 3) // D_k
        + mlp(2 * (2 + 1 + 2), 2); // predictor
    assert_eq!(model.num_params(), expect);
}

#[test]
fn prediction_is_deterministic_and_uses_means() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::new(cfg.clone()).unwrap();
    let s = sample_for(&cfg.input_dims, 2, 61);
    let a = model.predict(&s.x).unwrap();
    let b = model.predict(&s.x).unwrap();
    assert_eq!(a, b);
    let (_, trace) = model.evaluate(&s, &InvaNoise::zeros(&cfg)).unwrap();
    assert_eq!(&a, trace.y_hat());
}

#[test]
fn nan_input_names_the_term() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::new(cfg.clone()).unwrap();
    let mut s = sample_for(&cfg.input_dims, 2, 71);
    s.y = Vector::from_slice(&[f64::NAN, 0.0]);
    let err = model.evaluate(&s, &InvaNoise::zeros(&cfg)).err().unwrap();
    assert!(err.to_string().contains("pred"), "{err}");
}

#[test]
fn wrong_input_shape_is_an_error() {
    let cfg = small_config(GradientRouting::Joint);
    let model = InvaModel::new(cfg).unwrap();
    assert!(model.predict(&[Vector::zeros(2)]).is_err());
    assert!(model.predict(&[Vector::zeros(2), Vector::zeros(2)]).is_err());
    assert!(model.decode(&[0.0], 5).is_err());
}

#[test]
fn training_reduces_loss() {
    let data = gen_scenario(&SimScenario::new(200, 2, 1, 0.1, 3)).unwrap();
    let j = data.split.train[0].x[0].len();
    let mut cfg = InvaConfig::new(vec![j, j], j, j, 2);
    cfg.hidden = HiddenLayers::uniform(&[16]);
    cfg.sgd.learning_rate = 5e-3;
    cfg.sgd.momentum = 0.9;
    cfg.sgd.batch_size = 16;
    cfg.sgd.epochs = 30;
    let mut model = InvaModel::new(cfg).unwrap();
    let trace = model.fit(&data.split.train, &mut Rng::new(4)).unwrap();
    assert_eq!(trace.len(), 30);
    assert!(trace[29] < 0.7 * trace[0], "{trace:?}");
}

#[test]
fn no_shared_with_one_modality_is_the_baseline() {
    let data = gen_scenario(&SimScenario::new(40, 2, 1, 0.1, 5)).unwrap();
    let j = data.split.train[0].x[0].len();
    let vc = VaeConfig {
        input_dim: j,
        outcome_dim: j,
        latent_dim: 2,
        hidden: vec![4],
    };
    let sgd = SgdConfig {
        epochs: 3,
        batch_size: 8,
        ..SgdConfig::default()
    };
    let mut base = VaeBaseline::new(vc.clone(), &mut Rng::new(7)).unwrap();
    let mut abl = NoSharedModel::new(vec![vc], &mut Rng::new(7)).unwrap();
    let lb = base.fit(&data.split.train, 0, &sgd, &mut Rng::new(8)).unwrap();
    let la = abl.fit(&data.split.train, &sgd, &mut Rng::new(8)).unwrap();
    assert_eq!(la, lb);
    let x = &data.split.test[0].x;
    assert_eq!(abl.predict(&x[..1]).unwrap(), base.predict(&x[0]).unwrap());
}

#[test]
fn no_shared_averages_predictions() {
    let vc = |j| VaeConfig {
        input_dim: j,
        outcome_dim: 2,
        latent_dim: 1,
        hidden: vec![3],
    };
    let m = NoSharedModel::new(vec![vc(2), vc(3)], &mut Rng::new(1)).unwrap();
    let s = sample_for(&[2, 3], 2, 2);
    let a = m.models[0].predict(&s.x[0]).unwrap();
    let b = m.models[1].predict(&s.x[1]).unwrap();
    let y = m.predict(&s.x).unwrap();
    for i in 0..2 {
        assert!((y[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
    }
}

#[test]
fn no_image_specific_needs_equal_dims() {
    let err = NoImageSpecificConfig::from_input_dims(&[4, 5], 1, 2, vec![3], SgdConfig::default()).unwrap_err();
    assert!(err.to_string().contains("[4, 5]"), "{err}");
}

#[test]
fn no_image_specific_gradient_check() {
    let cfg = NoImageSpecificConfig::from_input_dims(&[3, 3], 2, 2, vec![3], SgdConfig::default()).unwrap();
    let mut m = NoImageSpecificModel::new(cfg, &mut Rng::new(3)).unwrap();
    let s = sample_for(&[3, 3], 2, 4);
    let mut rng = Rng::new(5);
    let eps: Vec<Vec<f64>> = (0..2).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
    let report = grad_check_model(
        &mut m,
        |m: &mut NoImageSpecificModel| Ok(m.sample_loss_grad(&s, &eps, 1.0)?.total),
        |m: &NoImageSpecificModel| m.sample_loss(&s, &eps),
        FD_STEP,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report}");
}

#[test]
fn ablations_have_fewer_parameters() {
    let mut cfg = InvaConfig::new(vec![9, 9], 9, 9, 5);
    cfg.hidden = HiddenLayers::uniform(&[16]);
    let full = InvaModel::zeroed(cfg).unwrap().num_params();
    let nois = NoImageSpecificModel::new(
        NoImageSpecificConfig::from_input_dims(&[9, 9], 9, 9, vec![16], SgdConfig::default()).unwrap(),
        &mut Rng::new(0),
    )
    .unwrap();
    assert!(nois.num_params() < full);
}
