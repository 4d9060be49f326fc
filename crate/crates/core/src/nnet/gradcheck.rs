//! Central finite-difference verification of [`Mlp::backward`].

use ndarray::Array2;
use rand::Rng;

use super::{
    ce_softmax_grad, loss_ce, loss_ce_grad, loss_mse, loss_mse_grad, Activation, Freeze,
    LayerSpec, Mlp, OutputGrad,
};
use crate::error::Result;
use crate::seed::{derive_seed, rng_for};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that exact-zero gradients are
/// compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Cross-entropy through the fused softmax gradient.
    CrossEntropyFused,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cases: Vec<CaseResult>,
}

impl Report {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn loss(kind: LossKind, out: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy | LossKind::CrossEntropyFused => loss_ce(out, target),
        LossKind::Mse => loss_mse(out, target),
    }
}

/// Largest relative error between analytic and finite-difference gradients
/// over every parameter and every input entry; returns (error, count).
pub fn check(m: &Mlp, x: &Array2<f64>, target: &Array2<f64>, kind: LossKind) -> Result<(f64, usize)> {
    let acts = m.forward(x.view())?;
    let out = acts.output();
    let g = match kind {
        LossKind::CrossEntropy => loss_ce_grad(out, target)?,
        LossKind::CrossEntropyFused => ce_softmax_grad(out, target)?,
        LossKind::Mse => loss_mse_grad(out, target)?,
    };
    let grad = match kind {
        LossKind::CrossEntropyFused => OutputGrad::PreActivation(g.view()),
        _ => OutputGrad::Output(g.view()),
    };
    let grads = m.backward(&acts, grad, Freeze::None, true)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut probe = m.clone();
    for (li, lg) in grads.layers.iter().enumerate() {
        let analytic: Vec<f64> = lg.dw.iter().chain(&lg.db).copied().collect();
        for (pi, &a) in analytic.iter().enumerate() {
            let orig = *probe.param_mut(li, pi);
            *probe.param_mut(li, pi) = orig + FD_STEP;
            let lp = loss(kind, &probe.predict(x.view())?, target)?;
            *probe.param_mut(li, pi) = orig - FD_STEP;
            let lm = loss(kind, &probe.predict(x.view())?, target)?;
            *probe.param_mut(li, pi) = orig;
            worst = worst.max(rel_error(a, (lp - lm) / (2.0 * FD_STEP)));
            count += 1;
        }
    }
    let dx = grads.input.expect("input gradient requested");
    let mut xp = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = xp[[i, j]];
            xp[[i, j]] = orig + FD_STEP;
            let lp = loss(kind, &m.predict(xp.view())?, target)?;
            xp[[i, j]] = orig - FD_STEP;
            let lm = loss(kind, &m.predict(xp.view())?, target)?;
            xp[[i, j]] = orig;
            worst = worst.max(rel_error(dx[[i, j]], (lp - lm) / (2.0 * FD_STEP)));
            count += 1;
        }
    }
    Ok((worst, count))
}

/// Three-layer random networks covering every activation with both losses.
pub fn run_suite(seed: u64) -> Result<Report> {
    use Activation::*;
    let cases: [(Activation, Activation, Activation, LossKind); 7] = [
        (Softplus, Tanh, Softmax, LossKind::CrossEntropy),
        (Softplus, Tanh, Softmax, LossKind::CrossEntropyFused),
        (Sigmoid, Relu, Softmax, LossKind::CrossEntropy),
        (Tanh, Sigmoid, Linear, LossKind::Mse),
        (Relu, Softplus, Sigmoid, LossKind::Mse),
        (Softplus, Relu, Tanh, LossKind::Mse),
        (Linear, Sigmoid, Softmax, LossKind::Mse),
    ];
    let (batch, inp, h1, h2, out) = (7, 5, 6, 5, 4);
    let mut results = Vec::new();
    for (ci, &(a1, a2, a3, kind)) in cases.iter().enumerate() {
        let case_seed = derive_seed(seed, &[ci as u64]);
        let m = Mlp::init(
            inp,
            &[LayerSpec::new(h1, a1), LayerSpec::new(h2, a2), LayerSpec::new(out, a3)],
            case_seed,
        )?;
        let mut rng = rng_for(case_seed, &[1]);
        let x = Array2::from_shape_fn((batch, inp), |_| rng.random_range(-1.5..1.5));
        let target = match kind {
            LossKind::Mse => Array2::from_shape_fn((batch, out), |_| rng.random_range(-1.0..1.0)),
            _ => {
                let classes: Vec<usize> = (0..batch).map(|_| rng.random_range(0..out)).collect();
                Array2::from_shape_fn((batch, out), |(i, j)| f64::from(u8::from(classes[i] == j)))
            }
        };
        let (err, checked) = check(&m, &x, &target, kind)?;
        results.push(CaseResult {
            name: format!("{a1}-{a2}-{a3}/{kind:?}"),
            checked,
            max_rel_error: err,
        });
    }
    Ok(Report { cases: results })
}
