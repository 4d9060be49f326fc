//! Dense feed-forward networks trained by plain SGD.
//!
//! Row-major batches: inputs are `batch x in`, each layer computes
//! `act(X W^T + b)` with `W` stored `out x in`.

mod container;
pub mod gradcheck;
mod loss;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use container::{ModelContainer, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{ce_softmax_grad, loss_ce, loss_ce_grad, loss_mse, loss_mse_grad, CE_LOG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Softplus,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    Linear,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Softplus,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Softmax,
        Activation::Linear,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Relu => 3,
            Activation::Softmax => 4,
            Activation::Linear => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        }
    }

    /// Applies the activation in place to a batch of pre-activations.
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Softplus => z.mapv_inplace(softplus),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Linear => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }

    /// Converts `dL/dy` into `dL/dz` given the layer output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            // d softplus / dz = sigmoid(z) = 1 - exp(-y)
            Activation::Softplus => Zip::from(grad).and(y).for_each(|g, &y| *g *= -(-y).exp_m1()),
            Activation::Tanh => Zip::from(grad).and(y).for_each(|g, &y| *g *= 1.0 - y * y),
            Activation::Sigmoid => Zip::from(grad).and(y).for_each(|g, &y| *g *= y * (1.0 - y)),
            Activation::Relu => Zip::from(grad).and(y).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Linear => {}
            Activation::Softmax => {
                for (mut g, p) in grad.rows_mut().into_iter().zip(y.rows()) {
                    let dot = g.dot(&p);
                    Zip::from(&mut g).and(&p).for_each(|g, &p| *g = p * (*g - dot));
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::param(format!("unknown activation '{s}'")))
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(units: usize, activation: Activation) -> Self {
        Self { units, activation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Which layers an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freeze {
    None,
    /// The first `n` layers are frozen.
    Prefix(usize),
    /// The last `n` layers are frozen.
    Suffix(usize),
    All,
}

impl Freeze {
    pub fn is_frozen(self, layer: usize, n_layers: usize) -> bool {
        match self {
            Freeze::None => false,
            Freeze::Prefix(n) => layer < n,
            Freeze::Suffix(n) => layer + n >= n_layers,
            Freeze::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    seed: u64,
}

/// Cached outputs of a forward pass; `outputs[0]` is the input batch and
/// `outputs[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub outputs: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("activations always hold the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// `dL/dX` for the input batch, when requested.
    pub input: Option<Array2<f64>>,
}

/// Where the loss gradient enters the network.
#[derive(Debug, Clone, Copy)]
pub enum OutputGrad<'a> {
    /// `dL/dy` with respect to the final layer's output.
    Output(ArrayView2<'a, f64>),
    /// `dL/dz` with respect to the final layer's pre-activation, e.g. the
    /// fused softmax/cross-entropy gradient.
    PreActivation(ArrayView2<'a, f64>),
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 || specs.is_empty() || specs.iter().any(|s| s.units == 0) {
            return Err(Error::param("network needs a positive input width and non-empty layers"));
        }
        let mut rng = rng_for(seed, &[]);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for s in specs {
            let bound = (6.0 / (fan_in + s.units) as f64).sqrt();
            let w = Array2::from_shape_fn((s.units, fan_in), |_| rng.random_range(-bound..=bound));
            layers.push(Layer {
                w,
                b: Array1::zeros(s.units),
                activation: s.activation,
            });
            fan_in = s.units;
        }
        Self::from_layers(layers, seed)
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("network has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.output_dim() {
                return Err(Error::shape(format!("layer {i}: bias length differs from output width")));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.input_dim(),
                    layers[i - 1].output_dim()
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::param(format!("softmax in hidden layer {i}")));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, batch has {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Activations> {
        self.check_input(&x)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_owned());
        for l in &self.layers {
            let mut z = outputs.last().unwrap().dot(&l.w.t());
            z += &l.b;
            l.activation.apply(&mut z);
            outputs.push(z);
        }
        Ok(Activations { outputs })
    }

    /// Final-layer output only.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            l.activation.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    /// Exact gradients of the loss whose gradient is `grad`. Frozen layers
    /// get zero gradients but still pass the signal through to earlier
    /// layers.
    pub fn backward(
        &self,
        acts: &Activations,
        grad: OutputGrad<'_>,
        freeze: Freeze,
        want_input_grad: bool,
    ) -> Result<Gradients> {
        let n = self.layers.len();
        if acts.outputs.len() != n + 1 {
            return Err(Error::param("activation cache does not belong to this network"));
        }
        let batch = acts.outputs[0].nrows();
        let (mut delta, skip_last_act) = match grad {
            OutputGrad::Output(g) => (g.to_owned(), false),
            OutputGrad::PreActivation(g) => (g.to_owned(), true),
        };
        if delta.dim() != (batch, self.output_dim()) {
            return Err(Error::shape(format!(
                "output gradient is {:?}, network output is {:?}",
                delta.dim(),
                (batch, self.output_dim())
            )));
        }
        let first_needed = if want_input_grad {
            0
        } else {
            (0..n).find(|&i| !freeze.is_frozen(i, n)).unwrap_or(n)
        };
        let mut grads: Vec<Option<LayerGrad>> = vec![None; n];
        for i in (0..n).rev() {
            let l = &self.layers[i];
            if !(skip_last_act && i + 1 == n) {
                l.activation.backprop(&acts.outputs[i + 1], &mut delta);
            }
            let frozen = freeze.is_frozen(i, n);
            grads[i] = Some(if frozen {
                LayerGrad {
                    dw: Array2::zeros(l.w.dim()),
                    db: Array1::zeros(l.b.len()),
                    frozen,
                }
            } else {
                LayerGrad {
                    dw: delta.t().dot(&acts.outputs[i]),
                    db: delta.sum_axis(Axis(0)),
                    frozen,
                }
            });
            if i > first_needed || (i == 0 && want_input_grad) {
                delta = delta.dot(&l.w);
            } else {
                break;
            }
        }
        let layers = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.unwrap_or_else(|| LayerGrad {
                    dw: Array2::zeros(self.layers[i].w.dim()),
                    db: Array1::zeros(self.layers[i].b.len()),
                    frozen: freeze.is_frozen(i, n),
                })
            })
            .collect();
        Ok(Gradients {
            layers,
            input: want_input_grad.then_some(delta),
        })
    }

    /// `W -= lr dW`, `b -= lr db` on layers that are not frozen.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::param(format!("learning rate {lr} must be finite and >= 0")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layer count differs from network"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if g.frozen {
                continue;
            }
            if g.dw.dim() != l.w.dim() || g.db.len() != l.b.len() {
                return Err(Error::shape("gradient shapes differ from network"));
            }
            l.w.scaled_add(-lr, &g.dw);
            l.b.scaled_add(-lr, &g.db);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Mutable parameter access for finite-difference checks.
    pub(crate) fn param_mut(&mut self, layer: usize, index: usize) -> &mut f64 {
        let l = &mut self.layers[layer];
        let nw = l.w.len();
        if index < nw {
            let cols = l.w.ncols();
            &mut l.w[[index / cols, index % cols]]
        } else {
            &mut l.b[index - nw]
        }
    }
}

/// Optimisation settings shared by the network trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_utterances: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 30,
            batch_utterances: 32,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_utterances == 0 {
            return Err(Error::param("epochs and batch_utterances must be >= 1"));
        }
        Ok(())
    }
}
