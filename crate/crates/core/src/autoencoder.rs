//! Encoder/decoder pair with a sparse latent model, and its training losses.
//!
//! Time derivatives are pushed through the networks analytically, so `dz`
//! comes from the encoder Jacobian applied to `dx`, and the decoder maps the
//! model prediction `Θ(z)·(mask∘Φ)` back to the observation space.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::Activation;
use crate::error::{bail, Result};
use crate::library::{library_on_tape, ModelOrder, SindyCoefficients, SindySpec};
use crate::mlp::{check_input, MlpParams, MlpVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Weights of the four loss terms.
///
/// The numbering follows the usual statement of the objective:
/// `λ1` reconstruction, `λ2` derivative consistency in observation space,
/// `λ3` derivative consistency in latent space, `λ4` the L1 penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// λ1
    pub decoder: f64,
    /// λ2
    pub sindy_x: f64,
    /// λ3
    pub sindy_z: f64,
    /// λ4
    pub sindy_regularization: f64,
}

impl LossWeights {
    /// Lorenz configuration: reconstruction dominated, no latent derivative term.
    pub fn lorenz() -> Self {
        Self { decoder: 1.0, sindy_x: 1e-4, sindy_z: 0.0, sindy_regularization: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("decoder", self.decoder),
            ("sindy_x", self.sindy_x),
            ("sindy_z", self.sindy_z),
            ("sindy_regularization", self.sindy_regularization),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bail!(Domain, "loss weight {name} must be finite and non-negative, got {v}");
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::lorenz()
    }
}

/// Encoder `d → n` and decoder `n → d` with mirrored hidden widths.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

impl AutoencoderParams {
    pub fn new(encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        if encoder.input_dim() != decoder.output_dim() || encoder.output_dim() != decoder.input_dim() {
            bail!(
                Dimension,
                "encoder {}→{} does not invert decoder {}→{}",
                encoder.input_dim(),
                encoder.output_dim(),
                decoder.input_dim(),
                decoder.output_dim()
            );
        }
        let mut rev = decoder.widths();
        rev.reverse();
        if encoder.widths() != rev {
            bail!(Dimension, "decoder widths {:?} are not the reverse of {:?}", decoder.widths(), encoder.widths());
        }
        Ok(Self { encoder, decoder })
    }

    pub fn xavier<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc = Vec::with_capacity(widths.len() + 2);
        enc.push(input_dim);
        enc.extend_from_slice(widths);
        enc.push(latent_dim);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        let encoder = MlpParams::xavier(&enc, activation, rng)?;
        let decoder = MlpParams::xavier(&dec, activation, rng)?;
        Self::new(encoder, decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.encoder.widths()
    }

    pub fn activation(&self) -> Activation {
        self.encoder.activation
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        check_input(&self.encoder, x, "encode")?;
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        check_input(&self.decoder, z, "decode")?;
        self.decoder.forward(z)
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }
}

/// `∇φ(x)·dx` row by row.
pub fn z_derivative(x: &Tensor, dx: &Tensor, net: &MlpParams) -> Result<Tensor> {
    check_input(net, x, "z_derivative")?;
    x.check_same_shape(dx, "z_derivative")?;
    let mut tape = Tape::new();
    let vars = net.register_as(&mut tape, false);
    let (xv, dxv) = (tape.constant(x.clone()), tape.constant(dx.clone()));
    let (_, dz) = vars.forward_with_derivative(&mut tape, xv, dxv)?;
    Ok(tape.value(dz).clone())
}

/// First and second time derivatives of `φ(x(t))`.
pub fn z_derivative_order2(x: &Tensor, dx: &Tensor, ddx: &Tensor, net: &MlpParams) -> Result<(Tensor, Tensor)> {
    check_input(net, x, "z_derivative_order2")?;
    x.check_same_shape(dx, "z_derivative_order2")?;
    x.check_same_shape(ddx, "z_derivative_order2")?;
    let mut tape = Tape::new();
    let vars = net.register_as(&mut tape, false);
    let (xv, dxv, ddxv) = (tape.constant(x.clone()), tape.constant(dx.clone()), tape.constant(ddx.clone()));
    let (_, dz, ddz) = vars.forward_with_second_derivative(&mut tape, xv, dxv, ddxv)?;
    Ok((tape.value(dz).clone(), tape.value(ddz).clone()))
}

/// How the coefficient matrix starts out.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientInit {
    Constant(f64),
    Xavier,
    /// Standard normal entries.
    Normal,
    Specified(Tensor),
}

pub fn init_coefficients<R: Rng + ?Sized>(init: &CoefficientInit, spec: &SindySpec, rng: &mut R) -> Result<SindyCoefficients> {
    let (p, n) = (spec.library_dim()?, spec.latent_dim);
    let phi = match init {
        CoefficientInit::Constant(c) => Tensor::filled(&[p, n], *c),
        CoefficientInit::Xavier => {
            let limit = libm::sqrt(6.0 / (p + n) as f64);
            Tensor::matrix(p, n, (0..p * n).map(|_| rng.random_range(-limit..limit)).collect())?
        }
        CoefficientInit::Normal => Tensor::matrix(
            p,
            n,
            (0..p * n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v
                })
                .collect(),
        )?,
        CoefficientInit::Specified(t) => {
            if t.shape() != [p, n] {
                bail!(Dimension, "specified coefficients {:?}, library needs [{p}, {n}]", t.shape());
            }
            t.clone()
        }
    };
    SindyCoefficients::new(phi)
}

/// One batch of observations; `ddx` is required for second-order models.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Tensor,
    pub dx: &'a Tensor,
    pub ddx: Option<&'a Tensor>,
}

/// Every intermediate of a forward pass through the full model.
///
/// For second-order models `dz_predict` and `dx_decode` hold the predicted
/// second derivatives, and `ddz`/`ddx` the observed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: Tensor,
    pub dx: Tensor,
    pub ddx: Option<Tensor>,
    pub z: Tensor,
    pub dz: Tensor,
    pub ddz: Option<Tensor>,
    pub x_decode: Tensor,
    pub dx_decode: Tensor,
    pub ddx_decode: Option<Tensor>,
    pub theta: Tensor,
    pub dz_predict: Tensor,
    pub coefficients: SindyCoefficients,
}

/// Loss components and the two weighted sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub decoder: f64,
    pub sindy_z: f64,
    pub sindy_x: f64,
    pub sindy_regularization: f64,
    pub total: f64,
    /// `total` without the L1 term.
    pub refinement: f64,
}

impl Losses {
    fn combine(decoder: f64, sindy_z: f64, sindy_x: f64, reg: f64, w: &LossWeights) -> Self {
        let refinement = w.decoder * decoder + w.sindy_z * sindy_z + w.sindy_x * sindy_x;
        Self {
            decoder,
            sindy_z,
            sindy_x,
            sindy_regularization: reg,
            total: refinement + w.sindy_regularization * reg,
            refinement,
        }
    }
}

fn mean_sq_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "loss")?;
    if a.is_empty() {
        bail!(Domain, "loss over an empty batch");
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Loss components from a populated state.
pub fn assemble_losses(state: &NetworkState, w: &LossWeights, spec: &SindySpec) -> Result<Losses> {
    let decoder = mean_sq_diff(&state.x, &state.x_decode)?;
    let (sindy_z, sindy_x) = match spec.model_order {
        ModelOrder::First => (mean_sq_diff(&state.dz, &state.dz_predict)?, mean_sq_diff(&state.dx, &state.dx_decode)?),
        ModelOrder::Second => {
            let (Some(ddz), Some(ddx), Some(ddx_dec)) = (&state.ddz, &state.ddx, &state.ddx_decode) else {
                bail!(Contract, "second-order losses need ddx, ddz and ddx_decode");
            };
            (mean_sq_diff(ddz, &state.dz_predict)?, mean_sq_diff(ddx, ddx_dec)?)
        }
    };
    let masked = state.coefficients.masked();
    let reg = masked.data().iter().map(|v| v.abs()).sum::<f64>() / masked.len() as f64;
    Ok(Losses::combine(decoder, sindy_z, sindy_x, reg, w))
}

/// Handles of a forward pass recorded on a tape.
struct Recorded {
    z: Var,
    dz: Var,
    ddz: Option<Var>,
    x_decode: Var,
    dx_decode: Var,
    ddx_decode: Option<Var>,
    theta: Var,
    dz_predict: Var,
    decoder: Var,
    sindy_z: Var,
    sindy_x: Var,
    reg: Var,
}

fn check_batch(params: &AutoencoderParams, coeffs: &SindyCoefficients, spec: &SindySpec, b: &Batch<'_>) -> Result<()> {
    check_input(&params.encoder, b.x, "batch")?;
    b.x.check_same_shape(b.dx, "batch dx")?;
    if spec.latent_dim != params.latent_dim() {
        bail!(Dimension, "library for {} latent coordinates, encoder produces {}", spec.latent_dim, params.latent_dim());
    }
    if coeffs.phi.shape() != [spec.library_dim()?, spec.latent_dim] {
        bail!(Dimension, "coefficients {:?} do not fit the library", coeffs.phi.shape());
    }
    if spec.model_order == ModelOrder::Second {
        match b.ddx {
            Some(ddx) => b.x.check_same_shape(ddx, "batch ddx")?,
            None => bail!(Contract, "second-order model needs ddx"),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn record(
    tape: &mut Tape,
    enc: &MlpVars,
    dec: &MlpVars,
    phi: Var,
    mask: &Tensor,
    spec: &SindySpec,
    b: &Batch<'_>,
) -> Result<Recorded> {
    let x = tape.constant(b.x.clone());
    let dx = tape.constant(b.dx.clone());
    let mask = tape.constant(mask.clone());
    let masked = tape.mul(phi, mask)?;
    let absm = tape.abs(masked)?;
    let reg = tape.mean(absm)?;
    match spec.model_order {
        ModelOrder::First => {
            let (z, dz) = enc.forward_with_derivative(tape, x, dx)?;
            let theta = library_on_tape(tape, z, None, spec)?;
            let dz_predict = tape.matmul(theta, masked)?;
            let (x_decode, dx_decode) = dec.forward_with_derivative(tape, z, dz_predict)?;
            let decoder = tape.mse(x, x_decode)?;
            let sindy_z = tape.mse(dz, dz_predict)?;
            let sindy_x = tape.mse(dx, dx_decode)?;
            Ok(Recorded { z, dz, ddz: None, x_decode, dx_decode, ddx_decode: None, theta, dz_predict, decoder, sindy_z, sindy_x, reg })
        }
        ModelOrder::Second => {
            let ddx = tape.constant(b.ddx.expect("checked").clone());
            let (z, dz, ddz) = enc.forward_with_second_derivative(tape, x, dx, ddx)?;
            let theta = library_on_tape(tape, z, Some(dz), spec)?;
            let ddz_predict = tape.matmul(theta, masked)?;
            let (x_decode, dx_decode, ddx_decode) = dec.forward_with_second_derivative(tape, z, dz, ddz_predict)?;
            let decoder = tape.mse(x, x_decode)?;
            let sindy_z = tape.mse(ddz, ddz_predict)?;
            let sindy_x = tape.mse(ddx, ddx_decode)?;
            Ok(Recorded {
                z,
                dz,
                ddz: Some(ddz),
                x_decode,
                dx_decode,
                ddx_decode: Some(ddx_decode),
                theta,
                dz_predict: ddz_predict,
                decoder,
                sindy_z,
                sindy_x,
                reg,
            })
        }
    }
}

/// Forward pass through encoder, library and decoder.
pub fn forward_state(
    params: &AutoencoderParams,
    coeffs: &SindyCoefficients,
    spec: &SindySpec,
    batch: &Batch<'_>,
) -> Result<NetworkState> {
    check_batch(params, coeffs, spec, batch)?;
    let mut tape = Tape::new();
    let enc = params.encoder.register_as(&mut tape, false);
    let dec = params.decoder.register_as(&mut tape, false);
    let phi = tape.constant(coeffs.phi.clone());
    let r = record(&mut tape, &enc, &dec, phi, &coeffs.mask_tensor(), spec, batch)?;
    let v = |x: Var| tape.value(x).clone();
    Ok(NetworkState {
        x: batch.x.clone(),
        dx: batch.dx.clone(),
        ddx: batch.ddx.cloned(),
        z: v(r.z),
        dz: v(r.dz),
        ddz: r.ddz.map(v),
        x_decode: v(r.x_decode),
        dx_decode: v(r.dx_decode),
        ddx_decode: r.ddx_decode.map(v),
        theta: v(r.theta),
        dz_predict: v(r.dz_predict),
        coefficients: coeffs.clone(),
    })
}

/// Gradient with respect to every trainable group.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderGradient {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub phi: Tensor,
}

/// Which weighted sum to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Total,
    Refinement,
}

/// Loss components and the gradient of the chosen objective.
pub fn loss_and_gradient(
    params: &AutoencoderParams,
    coeffs: &SindyCoefficients,
    spec: &SindySpec,
    weights: &LossWeights,
    batch: &Batch<'_>,
    objective: Objective,
) -> Result<(Losses, AutoencoderGradient)> {
    check_batch(params, coeffs, spec, batch)?;
    let mut tape = Tape::new();
    let enc = params.encoder.register(&mut tape);
    let dec = params.decoder.register(&mut tape);
    let phi = tape.leaf(coeffs.phi.clone());
    let r = record(&mut tape, &enc, &dec, phi, &coeffs.mask_tensor(), spec, batch)?;
    let mut acc = None;
    let mut terms = alloc::vec![(r.decoder, weights.decoder), (r.sindy_z, weights.sindy_z), (r.sindy_x, weights.sindy_x)];
    if objective == Objective::Total {
        terms.push((r.reg, weights.sindy_regularization));
    }
    for (v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let s = tape.scale(v, w)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let item = |v: Var| tape.value(v).item();
    let losses = Losses::combine(item(r.decoder), item(r.sindy_z), item(r.sindy_x), item(r.reg), weights);

    let mut g_enc = params.encoder.clone();
    let mut g_dec = params.decoder.clone();
    let Some(loss) = acc else {
        // every weight is zero: the objective is identically zero
        let zero = |p: &mut MlpParams| {
            p.weights.iter_mut().chain(p.biases.iter_mut()).for_each(|t| t.data_mut().fill(0.0));
        };
        zero(&mut g_enc);
        zero(&mut g_dec);
        return Ok((losses, AutoencoderGradient { encoder: g_enc, decoder: g_dec, phi: Tensor::zeros(coeffs.phi.shape()) }));
    };
    let mut wrt = enc.params();
    wrt.extend(dec.params());
    wrt.push(phi);
    let grads = tape.grad(loss, &wrt)?;
    let mut it = grads.into_iter();
    for p in [&mut g_enc, &mut g_dec] {
        for (w, b) in p.weights.iter_mut().zip(p.biases.iter_mut()) {
            *w = it.next().expect("weight grad");
            *b = it.next().expect("bias grad");
        }
    }
    let phi_grad = it.next().expect("phi grad");
    Ok((losses, AutoencoderGradient { encoder: g_enc, decoder: g_dec, phi: phi_grad }))
}
