//! Dense feed-forward networks with analytic time-derivative propagation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::activation::Activation;
use crate::error::{bail, Result};
use crate::tape::{Tape, Unary, Var};
use crate::tensor::Tensor;

/// Weights (`in × out`) and biases of a dense network.
///
/// Hidden layers apply `activation`; the final layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(weights: Vec<Tensor>, biases: Vec<Tensor>, activation: Activation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            bail!(Dimension, "{} weight matrices but {} bias vectors", weights.len(), biases.len());
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if !w.is_matrix() || b.shape() != [w.cols()] {
                bail!(Dimension, "layer {}: weight {:?} with bias {:?}", l, w.shape(), b.shape());
            }
            if l > 0 && weights[l - 1].cols() != w.rows() {
                bail!(
                    Dimension,
                    "layer {} expects {} inputs but the previous layer has {} outputs",
                    l,
                    w.rows(),
                    weights[l - 1].cols()
                );
            }
        }
        Ok(Self { weights, biases, activation })
    }

    /// Xavier-uniform weights and zero biases for the given layer sizes
    /// (input, hidden..., output).
    pub fn xavier<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            bail!(Dimension, "invalid layer sizes {:?}", sizes);
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Self::new(weights, biases, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].cols()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Hidden layer widths.
    pub fn widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1].iter().map(|w| w.cols()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(|t| t.len()).sum()
    }

    /// Parameters in the order `W0, b0, W1, b1, …`.
    pub fn to_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
    }

    /// Overwrites the parameters from `flat` (same order as [`to_flat`](Self::to_flat)),
    /// returning how many values were consumed.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> usize {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for t in [w, b] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
        at
    }

    /// Places every weight and bias on the tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        self.register_as(tape, true)
    }

    /// Places the parameters on the tape, trainable or constant.
    pub fn register_as(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        let weights = self.weights.iter().map(&mut put).collect();
        let biases = self.biases.iter().map(&mut put).collect();
        MlpVars { weights, biases, activation: self.activation }
    }

    /// Forward pass without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register_as(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = vars.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Handles of an [`MlpParams`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub activation: Activation,
}

impl MlpVars {
    /// All parameter handles in `W0, b0, W1, b1, …` order.
    pub fn params(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut a = x;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let pre = tape.matmul(a, self.weights[l])?;
            let pre = tape.add_bias(pre, self.biases[l])?;
            a = if l == last { pre } else { tape.activation(pre, self.activation)? };
        }
        Ok(a)
    }

    /// Output and its time derivative along `dx`, by the chain rule through each layer.
    pub fn forward_with_derivative(&self, tape: &mut Tape, x: Var, dx: Var) -> Result<(Var, Var)> {
        let mut a = x;
        let mut v = dx;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let pre = tape.matmul(a, self.weights[l])?;
            let pre = tape.add_bias(pre, self.biases[l])?;
            let dpre = tape.matmul(v, self.weights[l])?;
            if l == last {
                return Ok((pre, dpre));
            }
            a = tape.activation(pre, self.activation)?;
            v = if self.activation == Activation::Linear {
                dpre
            } else {
                let slope = tape.unary(pre, Unary::Act(self.activation, 1))?;
                tape.mul(slope, dpre)?
            };
        }
        unreachable!("loop returns at the last layer")
    }

    /// Output with first and second time derivatives along `(dx, ddx)`.
    pub fn forward_with_second_derivative(
        &self,
        tape: &mut Tape,
        x: Var,
        dx: Var,
        ddx: Var,
    ) -> Result<(Var, Var, Var)> {
        if !self.activation.has_second_derivative() {
            bail!(
                Domain,
                "{} has no second derivative at its kink; use a smooth activation",
                self.activation
            );
        }
        let (mut a, mut v, mut u) = (x, dx, ddx);
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let pre = tape.matmul(a, self.weights[l])?;
            let pre = tape.add_bias(pre, self.biases[l])?;
            let dpre = tape.matmul(v, self.weights[l])?;
            let ddpre = tape.matmul(u, self.weights[l])?;
            if l == last {
                return Ok((pre, dpre, ddpre));
            }
            a = tape.activation(pre, self.activation)?;
            if self.activation == Activation::Linear {
                v = dpre;
                u = ddpre;
                continue;
            }
            let s1 = tape.unary(pre, Unary::Act(self.activation, 1))?;
            let s2 = tape.unary(pre, Unary::Act(self.activation, 2))?;
            v = tape.mul(s1, dpre)?;
            let curvature = tape.square(dpre)?;
            let curvature = tape.mul(s2, curvature)?;
            let along = tape.mul(s1, ddpre)?;
            u = tape.add(curvature, along)?;
        }
        unreachable!("loop returns at the last layer")
    }
}

/// Checks that an input matrix fits the network.
pub(crate) fn check_input(params: &MlpParams, x: &Tensor, what: &str) -> Result<()> {
    if !x.is_matrix() || x.cols() != params.input_dim() {
        return Err(crate::Error::Dimension(format!(
            "{what}: network takes {} inputs, got {:?}",
            params.input_dim(),
            x.shape()
        )));
    }
    Ok(())
}

/// Zero-initialised copy with the same architecture.
pub fn zeros_like(params: &MlpParams) -> MlpParams {
    MlpParams {
        weights: params.weights.iter().map(|w| Tensor::zeros(w.shape())).collect(),
        biases: params.biases.iter().map(|b| Tensor::zeros(b.shape())).collect(),
        activation: params.activation,
    }
}

/// Identity-like square network with no hidden layer.
pub fn identity(n: usize) -> MlpParams {
    MlpParams {
        weights: vec![Tensor::identity(n)],
        biases: vec![Tensor::zeros(&[n])],
        activation: Activation::Linear,
    }
}
