//! Fully connected networks with hand-written backpropagation.
//!
//! A [`Mlp`] is an ordered list of affine layers `a_l = σ_l(W_l a_{l-1} + b_l)`.
//! `forward` returns the output together with a [`ForwardCache`]; `backward`
//! consumes that cache, accumulates `∂L/∂W_l`, `∂L/∂b_l` into the network's
//! gradient buffers and returns `∂L/∂x`. Several forward/backward pairs may be
//! run before a single [`Mlp::sgd_step`], which is how minibatches and
//! weight sharing (one network applied to several inputs) are handled.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{read_mlp, write_mlp, Lines};
pub use gradcheck::{
    flat_grads, flat_params, grad_check, grad_check_model, param_count, relative_error, set_flat_params,
    zero_grads, GradCheckReport, TensorCheck, FD_STEP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, Rng, Vector};

/// Elementwise clip applied to every gradient entry before a step.
pub const GRAD_CLIP: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            batch_size: 64,
            epochs: 100,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    pub weight: Matrix,
    pub bias: Vector,
    grad_w: Matrix,
    grad_b: Vector,
    vel_w: Matrix,
    vel_b: Vector,
}

impl Layer {
    fn new(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weight: Matrix::zeros(spec.out_dim, spec.in_dim),
            bias: Vector::zeros(spec.out_dim),
            grad_w: Matrix::zeros(spec.out_dim, spec.in_dim),
            grad_b: Vector::zeros(spec.out_dim),
            vel_w: Matrix::zeros(spec.out_dim, spec.in_dim),
            vel_b: Vector::zeros(spec.out_dim),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn grad_weight(&self) -> &Matrix {
        &self.grad_w
    }

    pub fn grad_bias(&self) -> &Vector {
        &self.grad_b
    }
}

/// Per-layer inputs and post-activation outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Vector>,
    outputs: Vec<Vector>,
}

impl ForwardCache {
    pub fn output(&self) -> &Vector {
        self.outputs.last().expect("cache of a network with at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(name: impl Into<String>, specs: &[LayerSpec]) -> Result<Self> {
        let name = name.into();
        if specs.is_empty() {
            return Err(Error::InvalidConfig(format!("{name}: network needs at least one layer")));
        }
        for (l, s) in specs.iter().enumerate() {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: layer {l} has a zero dimension ({}x{})",
                    s.out_dim, s.in_dim
                )));
            }
            if l > 0 && specs[l - 1].out_dim != s.in_dim {
                return Err(Error::InvalidConfig(format!(
                    "{name}: layer {l} expects input {} but layer {} emits {}",
                    s.in_dim,
                    l - 1,
                    specs[l - 1].out_dim
                )));
            }
        }
        Ok(Mlp {
            name,
            layers: specs.iter().copied().map(Layer::new).collect(),
        })
    }

    /// Tanh hidden layers of the given widths followed by an Identity output layer.
    pub fn with_hidden(
        name: impl Into<String>,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &w in hidden {
            specs.push(LayerSpec::new(prev, w, Activation::Tanh));
            prev = w;
        }
        specs.push(LayerSpec::new(prev, out_dim, Activation::Identity));
        Mlp::new(name, &specs)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.in_dim * l.spec.out_dim + l.spec.out_dim)
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vector, ForwardCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("{} input dim {}", self.name, self.in_dim()),
                format!("input len {}", x.len()),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut a = Vector::from_slice(x);
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&a)?;
            let act = layer.spec.activation;
            for (zi, bi) in z.iter_mut().zip(layer.bias.iter()) {
                *zi = act.apply(*zi + bi);
            }
            inputs.push(a);
            a = z;
            outputs.push(a.clone());
        }
        Ok((a, ForwardCache { inputs, outputs }))
    }

    /// Forward pass without keeping a cache.
    pub fn eval(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates parameter gradients for `upstream = ∂L/∂y` and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vector> {
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(a, l)| a.len() != l.spec.in_dim)
        {
            return Err(Error::MissingCache(format!(
                "{}: cache does not belong to this network",
                self.name
            )));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("{} output dim {}", self.name, self.out_dim()),
                format!("upstream len {}", upstream.len()),
            ));
        }
        let mut delta = Vector::from_slice(upstream);
        for (l, layer) in self.layers.iter_mut().enumerate().rev() {
            let out = &cache.outputs[l];
            let act = layer.spec.activation;
            for (d, o) in delta.iter_mut().zip(out.iter()) {
                *d *= act.derivative_from_output(*o);
            }
            layer.grad_w.add_outer(1.0, &delta, &cache.inputs[l])?;
            layer.grad_b.axpy(1.0, &delta)?;
            delta = layer.weight.matvec_t(&delta)?;
        }
        Ok(delta)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.grad_w.fill(0.0);
            layer.grad_b.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Scales every accumulated gradient by `s`.
    pub fn scale_grad(&mut self, s: f64) {
        for layer in &mut self.layers {
            layer.grad_w.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            layer.grad_b.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// `p ← p − λ (g + μ v)`, `v ← g + μ v`, then zero the gradients.
    ///
    /// Gradients are clipped elementwise to `±GRAD_CLIP` first. Returns the
    /// number of clipped entries.
    pub fn sgd_step(&mut self, cfg: &SgdConfig) -> Result<usize> {
        cfg.validate()?;
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(i) = layer.grad_w.as_slice().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("{}.layer{l}.weight[{i}]", self.name),
                });
            }
            if let Some(i) = layer.grad_b.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("{}.layer{l}.bias[{i}]", self.name),
                });
            }
        }
        let lr = cfg.learning_rate;
        let mu = cfg.momentum;
        let mut clipped = 0;
        for layer in &mut self.layers {
            let Layer {
                weight,
                bias,
                grad_w,
                grad_b,
                vel_w,
                vel_b,
                ..
            } = layer;
            clipped += apply_update(
                weight.as_mut_slice(),
                grad_w.as_mut_slice(),
                vel_w.as_mut_slice(),
                lr,
                mu,
            );
            clipped += apply_update(bias, grad_b, vel_b, lr, mu);
        }
        if clipped > 0 {
            log::debug!("{}: clipped {clipped} gradient entries to ±{GRAD_CLIP}", self.name);
        }
        Ok(clipped)
    }

    /// Xavier/Glorot uniform weights, zero biases.
    pub fn xavier_init(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            let LayerSpec { in_dim, out_dim, .. } = layer.spec;
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = rng.uniform_range(-limit, limit);
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
            layer.vel_w.fill(0.0);
            layer.vel_b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Sets every weight and bias to zero.
    pub fn zero_params(&mut self) {
        for layer in &mut self.layers {
            layer.weight.fill(0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Sets the output-layer bias entry `index` (e.g. to force a log-σ head).
    pub fn set_output_bias(&mut self, index: usize, value: f64) {
        let last = self.layers.len() - 1;
        self.layers[last].bias[index] = value;
    }
}

fn apply_update(p: &mut [f64], g: &mut [f64], v: &mut [f64], lr: f64, mu: f64) -> usize {
    let mut clipped = 0;
    for ((pi, gi), vi) in p.iter_mut().zip(g.iter_mut()).zip(v.iter_mut()) {
        let mut grad = *gi;
        if grad.abs() > GRAD_CLIP {
            grad = grad.clamp(-GRAD_CLIP, GRAD_CLIP);
            clipped += 1;
        }
        let step = if mu > 0.0 { grad + mu * *vi } else { grad };
        *vi = step;
        *pi -= lr * step;
        *gi = 0.0;
    }
    clipped
}

/// Uniform access to named parameter tensors and their gradient buffers.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[f64]));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]));
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64], &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(
                &format!("{}.layer{l}.weight", self.name),
                layer.weight.as_slice(),
                layer.grad_w.as_slice(),
            );
            f(&format!("{}.layer{l}.bias", self.name), &layer.bias, &layer.grad_b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let name = self.name.clone();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(
                &format!("{name}.layer{l}.weight"),
                layer.weight.as_mut_slice(),
                layer.grad_w.as_mut_slice(),
            );
            f(&format!("{name}.layer{l}.bias"), &mut layer.bias, &mut layer.grad_b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(seed: u64, dims: &[usize]) -> Mlp {
        let hidden = &dims[1..dims.len() - 1];
        let mut net = Mlp::with_hidden("net", dims[0], hidden, dims[dims.len() - 1]).unwrap();
        let mut rng = Rng::new(seed);
        net.xavier_init(&mut rng);
        for layer in net.layers_mut() {
            for b in layer.bias.iter_mut() {
                *b = rng.normal(0.0, 0.3);
            }
        }
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::new("id", &[LayerSpec::new(3, 3, Activation::Identity)]).unwrap();
        net.layers_mut()[0].weight = Matrix::identity(3);
        let y = net.eval(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y.as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let net = Mlp::new("z", &[LayerSpec::new(4, 2, Activation::Tanh)]).unwrap();
        assert_eq!(net.eval(&[1.0, 2.0, 3.0, 4.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_matches_straight_line_evaluator() {
        let net = random_net(3, &[4, 5, 3]);
        let x = [0.3, -1.2, 0.7, 2.0];
        let y = net.eval(&x).unwrap();

        // independent evaluation straight from the raw parameter arrays
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = [0.0; 5];
        for i in 0..5 {
            let mut acc = l0.bias[i];
            for j in 0..4 {
                acc += l0.weight.as_slice()[i * 4 + j] * x[j];
            }
            hidden[i] = acc.tanh();
        }
        for i in 0..3 {
            let mut acc = l1.bias[i];
            for j in 0..5 {
                acc += l1.weight.as_slice()[i * 5 + j] * hidden[j];
            }
            assert!((acc - y[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = random_net(1, &[3, 2]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_layer_backward_calculus() {
        let mut net = Mlp::new("lin", &[LayerSpec::new(2, 3, Activation::Identity)]).unwrap();
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        net.layers_mut()[0].weight = w.clone();
        let x = [0.5, -1.0];
        let g = [1.0, -2.0, 0.25];
        let (_, cache) = net.forward(&x).unwrap();
        let dx = net.backward(&cache, &g).unwrap();
        assert_eq!(dx, w.matvec_t(&g).unwrap());
        let gw = net.layers()[0].grad_weight();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(gw[(i, j)], g[i] * x[j]);
            }
        }
        assert_eq!(net.layers()[0].grad_bias().as_slice(), &g);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = random_net(9, &[3, 4, 2]);
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let dx = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        assert!(flat_grads(&net).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let a = random_net(1, &[3, 4, 2]);
        let mut b = random_net(1, &[5, 4, 2]);
        let (_, cache) = a.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            b.backward(&cache, &[1.0, 1.0]),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = random_net(21, &[4, 6, 5, 3]);
        let x = Vector::from_slice(&[0.2, -0.4, 1.1, -0.9]);
        let target = [0.3, -0.1, 0.8];
        let report = grad_check(&mut net, &x, 1e-4, |y| {
            let r: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
            (r.iter().map(|v| v * v).sum(), r.iter().map(|v| 2.0 * v).collect())
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut net = random_net(4, &[3, 4, 2]);
        let before = flat_params(&net);
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        net.backward(&cache, &[1.0, -1.0]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.0,
            ..SgdConfig::default()
        };
        net.sgd_step(&cfg).unwrap();
        assert_eq!(before, flat_params(&net));
        assert!(flat_grads(&net).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn scalar_sgd_step() {
        let mut net = Mlp::new("w", &[LayerSpec::new(1, 1, Activation::Identity)]).unwrap();
        net.layers_mut()[0].weight[(0, 0)] = 1.0;
        net.visit_params_mut(&mut |name, _, g| {
            if name.ends_with("weight") {
                g[0] = 2.0;
            }
        });
        let cfg = SgdConfig {
            learning_rate: 0.1,
            ..SgdConfig::default()
        };
        net.sgd_step(&cfg).unwrap();
        assert!((net.layers()[0].weight[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges_geometrically() {
        // L(w) = (w − 3)², w ← w − 0.1·2(w − 3) contracts by 0.8 per step.
        let mut net = Mlp::new("w", &[LayerSpec::new(1, 1, Activation::Identity)]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            ..SgdConfig::default()
        };
        for _ in 0..100 {
            let w = net.layers()[0].weight[(0, 0)];
            net.visit_params_mut(&mut |name, _, g| {
                if name.ends_with("weight") {
                    g[0] = 2.0 * (w - 3.0);
                }
            });
            net.sgd_step(&cfg).unwrap();
        }
        assert!((net.layers()[0].weight[(0, 0)] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut net = Mlp::new("w", &[LayerSpec::new(1, 1, Activation::Identity)]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.5,
            ..SgdConfig::default()
        };
        for _ in 0..2 {
            net.visit_params_mut(&mut |name, _, g| {
                if name.ends_with("weight") {
                    g[0] = 1.0;
                }
            });
            net.sgd_step(&cfg).unwrap();
        }
        // step 1: v = 1, w = −0.1; step 2: v = 1 + 0.5, w = −0.25
        assert!((net.layers()[0].weight[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_path() {
        let mut net = random_net(2, &[2, 3, 1]);
        net.layers_mut()[1].grad_b[0] = f64::NAN;
        let err = net.sgd_step(&SgdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("net.layer1.bias[0]"), "{err}");
    }

    #[test]
    fn huge_gradients_are_clipped() {
        let mut net = Mlp::new("w", &[LayerSpec::new(1, 1, Activation::Identity)]).unwrap();
        net.visit_params_mut(&mut |name, _, g| {
            if name.ends_with("weight") {
                g[0] = 1e9;
            }
        });
        let cfg = SgdConfig {
            learning_rate: 1.0,
            ..SgdConfig::default()
        };
        assert_eq!(net.sgd_step(&cfg).unwrap(), 1);
        assert_eq!(net.layers()[0].weight[(0, 0)], -GRAD_CLIP);
    }

    #[test]
    fn xavier_init_properties() {
        let mut a = Mlp::with_hidden("a", 256, &[], 256).unwrap();
        let mut b = a.clone();
        a.xavier_init(&mut Rng::new(5));
        b.xavier_init(&mut Rng::new(5));
        assert_eq!(a, b);
        let layer = &a.layers()[0];
        assert!(layer.bias.iter().all(|v| *v == 0.0));
        let w = layer.weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 512.0;
        assert!((var - expected).abs() / expected < 0.2, "var {var}");
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = random_net(8, &[5, 7, 7, 2]);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = net.eval(&x).unwrap();
        let b = net.eval(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn mismatched_chain_rejected() {
        let specs = [
            LayerSpec::new(3, 4, Activation::Tanh),
            LayerSpec::new(5, 2, Activation::Identity),
        ];
        assert!(Mlp::new("bad", &specs).is_err());
    }
}
