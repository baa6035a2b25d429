//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::Result;
use crate::ndcore::Vector;

use super::{Mlp, Parameterized};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

pub fn param_count<M: Parameterized + ?Sized>(model: &M) -> usize {
    let mut n = 0;
    model.visit_params(&mut |_, p, _| n += p.len());
    n
}

pub fn flat_params<M: Parameterized + ?Sized>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, p, _| out.extend_from_slice(p));
    out
}

pub fn flat_grads<M: Parameterized + ?Sized>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, _, g| out.extend_from_slice(g));
    out
}

pub fn set_flat_params<M: Parameterized + ?Sized>(model: &mut M, values: &[f64]) {
    let mut offset = 0;
    model.visit_params_mut(&mut |_, p, _| {
        p.copy_from_slice(&values[offset..offset + p.len()]);
        offset += p.len();
    });
    assert_eq!(offset, values.len(), "flat parameter length mismatch");
}

pub fn zero_grads<M: Parameterized + ?Sized>(model: &mut M) {
    model.visit_params_mut(&mut |_, _, g| g.iter_mut().for_each(|v| *v = 0.0));
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    /// Index, analytic and numeric value of the worst entry.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.max_rel_err > self.tol)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: max rel err {:.3e} (tol {:.1e}) {}",
            self.max_rel_err,
            self.tol,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for t in &self.tensors {
            let (i, a, n) = t.worst;
            writeln!(
                f,
                "  {:<36} n={:<5} max rel err {:.3e}  [{i}] analytic {a:.6e} numeric {n:.6e}",
                t.name, t.len, t.max_rel_err
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences for every parameter.
///
/// `analytic` must accumulate `∂L/∂θ` into the model's gradient
/// buffers (they are zeroed beforehand) and return `L`. `loss` must evaluate
/// the same `L` without touching gradients. Any randomness inside the loss has
/// to be fixed by the caller so both closures see the same function.
pub fn grad_check_model<M, A, L>(
    model: &mut M,
    mut analytic: A,
    mut loss: L,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    A: FnMut(&mut M) -> Result<f64>,
    L: FnMut(&M) -> Result<f64>,
{
    zero_grads(model);
    analytic(model)?;
    let grads = flat_grads(model);
    zero_grads(model);

    let mut layout = Vec::new();
    model.visit_params(&mut |name, p, _| layout.push((name.to_string(), p.len())));

    let base = flat_params(model);
    let mut work = base.clone();
    let mut tensors = Vec::with_capacity(layout.len());
    let mut offset = 0;
    for (name, len) in layout {
        let mut check = TensorCheck {
            name,
            len,
            max_rel_err: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for i in 0..len {
            let idx = offset + i;
            work[idx] = base[idx] + step;
            set_flat_params(model, &work);
            let plus = loss(model)?;
            work[idx] = base[idx] - step;
            set_flat_params(model, &work);
            let minus = loss(model)?;
            work[idx] = base[idx];
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grads[idx], numeric);
            if err > check.max_rel_err || i == 0 {
                check.max_rel_err = err.max(check.max_rel_err);
                check.worst = (i, grads[idx], numeric);
            }
        }
        offset += len;
        tensors.push(check);
    }
    set_flat_params(model, &base);

    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_err,
        tol,
        passed: max_rel_err <= tol,
    })
}

/// Gradient check of a single network under a scalar loss of its output.
///
/// `loss_fn` maps the network output `y` to `(L(y), ∂L/∂y)`.
pub fn grad_check<F>(net: &mut Mlp, x: &Vector, tol: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&Vector) -> (f64, Vec<f64>),
{
    grad_check_model(
        net,
        |n: &mut Mlp| {
            let (y, cache) = n.forward(x)?;
            let (l, dy) = loss_fn(&y);
            n.backward(&cache, &dy)?;
            Ok(l)
        },
        |n: &Mlp| Ok(loss_fn(&n.eval(x)?).0),
        FD_STEP,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Rng;
    use crate::neuralnet::{Activation, LayerSpec};

    fn sq_loss(y: &Vector) -> (f64, Vec<f64>) {
        (y.norm_sq(), y.iter().map(|v| 2.0 * v).collect())
    }

    #[test]
    fn linear_net_is_exact() {
        let mut net = Mlp::new("lin", &[LayerSpec::new(3, 2, Activation::Identity)]).unwrap();
        net.xavier_init(&mut Rng::new(1));
        let x = Vector::from_slice(&[0.5, -0.25, 1.0]);
        let report = grad_check(&mut net, &x, 1e-8, sq_loss).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn two_layer_tanh_net() {
        let mut net = Mlp::with_hidden("mlp", 3, &[4], 2).unwrap();
        net.xavier_init(&mut Rng::new(7));
        let x = Vector::from_slice(&[0.3, 0.9, -0.6]);
        let report = grad_check(&mut net, &x, 1e-4, sq_loss).unwrap();
        assert!(report.passed, "{report}");
        assert_eq!(report.tensors.len(), 4);
    }

    #[test]
    fn sign_flipped_backward_fails() {
        let mut net = Mlp::with_hidden("mlp", 3, &[4], 2).unwrap();
        net.xavier_init(&mut Rng::new(7));
        let x = Vector::from_slice(&[0.3, 0.9, -0.6]);
        let report = grad_check_model(
            &mut net,
            |n: &mut Mlp| {
                let (y, cache) = n.forward(&x)?;
                let (l, dy) = sq_loss(&y);
                n.backward(&cache, &dy)?;
                n.scale_grad(-1.0);
                Ok(l)
            },
            |n: &Mlp| Ok(sq_loss(&n.eval(&x)?).0),
            FD_STEP,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.failures().count() > 0);
    }

    #[test]
    fn flat_round_trip() {
        let mut net = Mlp::with_hidden("m", 2, &[3], 1).unwrap();
        let values: Vec<f64> = (0..param_count(&net)).map(|i| i as f64).collect();
        set_flat_params(&mut net, &values);
        assert_eq!(flat_params(&net), values);
    }
}
