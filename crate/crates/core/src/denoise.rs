//! Separation of measurement noise from a sampled trajectory.
//!
//! The observations `Y` (one sample per row) are modelled as `X + N`, where
//! `X` follows an autonomous vector field `f` represented by a small network.
//! Both `N` and the network are fitted so that Runge–Kutta steps of `f`
//! started from the interior states `Y − N` predict the observed neighbours
//! up to `num_dt` samples ahead and behind.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::dynamics::TimeSeries;
use crate::error::{bail, Diverged, Error, Result};
use crate::mlp::MlpParams;
use crate::optim::{self, Adam, LbfgsConfig, Termination};
use crate::rk::{rk_timestep, Direction, RkScheme};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Weighting of the `j`-th prediction step in the fidelity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDecay {
    /// `decay_const^j`
    Exp,
    /// `1 / (1 + j)`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiseOptimizer {
    Lbfgs,
    /// Full-batch Adam with a fixed learning rate.
    Adam { learning_rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    /// Prediction horizon in samples, in each direction.
    pub num_dt: usize,
    /// Weight of `½‖N‖²`.
    pub gamma: f64,
    /// Weight of the mean of `½‖W‖²` over weight matrices.
    pub beta_reg: f64,
    pub weight_decay: WeightDecay,
    pub decay_const: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub max_iter: usize,
    pub ftol: f64,
    pub gtol: f64,
    pub optimizer: DenoiseOptimizer,
    /// Moving-average window used to initialise the noise estimate.
    pub init_window: usize,
    /// Rows per tape when evaluating the objective; bounds memory use.
    pub chunk_rows: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            num_dt: 10,
            gamma: 1e-5,
            beta_reg: 1e-8,
            weight_decay: WeightDecay::Exp,
            decay_const: 0.9,
            hidden_layers: 3,
            hidden_width: 32,
            activation: Activation::Elu,
            max_iter: 50_000,
            ftol: 1e-15,
            gtol: 1e-11,
            optimizer: DenoiseOptimizer::Lbfgs,
            init_window: 7,
            chunk_rows: 512,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_dt == 0 {
            bail!(Domain, "num_dt must be at least 1");
        }
        if !(self.gamma >= 0.0) || !(self.beta_reg >= 0.0) {
            bail!(Domain, "regularizer weights must be non-negative");
        }
        if !(self.decay_const > 0.0 && self.decay_const <= 1.0) {
            bail!(Domain, "decay_const must lie in (0, 1], got {}", self.decay_const);
        }
        if self.hidden_width == 0 {
            bail!(Domain, "hidden_width must be positive");
        }
        if self.init_window < 3 || self.init_window % 2 == 0 {
            bail!(Domain, "init_window must be odd and at least 3, got {}", self.init_window);
        }
        if self.chunk_rows == 0 {
            bail!(Domain, "chunk_rows must be positive");
        }
        if let DenoiseOptimizer::Adam { learning_rate } = self.optimizer {
            if !(learning_rate > 0.0) {
                bail!(Domain, "learning rate must be positive");
            }
        }
        Ok(())
    }

    /// Weight of each prediction step, nearest first.
    pub fn step_weights(&self) -> Vec<f64> {
        (0..self.num_dt)
            .map(|j| match self.weight_decay {
                WeightDecay::Exp => libm::pow(self.decay_const, j as f64),
                WeightDecay::Linear => 1.0 / (1.0 + j as f64),
            })
            .collect()
    }

    /// Layer sizes of the vector-field network for an `n`-dimensional state.
    pub fn layer_sizes(&self, n: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend(core::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(n);
        s
    }
}

/// Estimated measurement error, one row per sample like the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub noise: Tensor,
}

/// `Y` minus its centred moving average along time, with the series mirrored
/// at both ends.
pub fn init_noise_estimate(y: &Tensor, window: usize) -> Result<NoiseEstimate> {
    if window < 3 || window % 2 == 0 {
        bail!(Domain, "window must be odd and at least 3, got {window}");
    }
    if !y.is_matrix() {
        bail!(Dimension, "observations must be a matrix, got {:?}", y.shape());
    }
    let (m, n) = (y.rows(), y.cols());
    if window > m {
        bail!(Domain, "window {window} longer than the {m}-sample series");
    }
    let half = (window / 2) as isize;
    let mirror = |i: isize| -> usize {
        let last = m as isize - 1;
        let r = if i < 0 { -i } else if i > last { 2 * last - i } else { i };
        r as usize
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for k in -half..=half {
                acc += y.get(mirror(i as isize + k), c);
            }
            out[i * n + c] = y.get(i, c) - acc / window as f64;
        }
    }
    Ok(NoiseEstimate { noise: Tensor::matrix(m, n, out)? })
}

/// The three parts of the objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseTerms {
    pub fidelity: f64,
    pub weight_reg: f64,
    pub noise_reg: f64,
    pub total: f64,
}

/// Gradient of the objective with respect to every trainable quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseGradient {
    /// Same layout as the network parameters.
    pub network: MlpParams,
    pub noise: Tensor,
}

fn step_sizes(t: &[f64]) -> Result<Vec<f64>> {
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(bad) = h.iter().find(|&&v| !(v > 0.0)) {
        bail!(Domain, "time grid must be strictly increasing (step {bad})");
    }
    Ok(h)
}

fn check_problem(y: &Tensor, t: &[f64], params: &MlpParams, noise: &NoiseEstimate, cfg: &DenoiseConfig) -> Result<()> {
    cfg.validate()?;
    if !y.is_matrix() || y.rows() != t.len() {
        bail!(Dimension, "observations {:?} do not match {} time samples", y.shape(), t.len());
    }
    if noise.noise.shape() != y.shape() {
        bail!(Dimension, "noise {:?} differs from observations {:?}", noise.noise.shape(), y.shape());
    }
    if params.input_dim() != y.cols() || params.output_dim() != y.cols() {
        bail!(Dimension, "vector field maps {} to {} but the state has {} components", params.input_dim(), params.output_dim(), y.cols());
    }
    if y.rows() <= 2 * cfg.num_dt {
        bail!(Domain, "{} samples leave no interior for num_dt = {}", y.rows(), cfg.num_dt);
    }
    Ok(())
}

fn regularizers(params: &MlpParams, noise: &Tensor) -> (f64, f64) {
    let count = params.weights.len() as f64;
    let w: f64 = params.weights.iter().map(|w| 0.5 * w.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / count;
    let nr = 0.5 * noise.data().iter().map(|v| v * v).sum::<f64>();
    (w, nr)
}

/// Fidelity term, optionally with gradients (network flat, noise).
fn fidelity(
    y: &Tensor,
    h: &[f64],
    params: &MlpParams,
    noise: &Tensor,
    cfg: &DenoiseConfig,
    want_grad: bool,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
    let (m, n) = (y.rows(), y.cols());
    let k = cfg.num_dt;
    let interior = m - 2 * k;
    let norm = 1.0 / (interior * n) as f64;
    let weights = cfg.step_weights();
    let scheme = RkScheme::three_eighths();
    let mut total = 0.0;
    let mut g_net = if want_grad { vec![0.0; params.num_params()] } else { Vec::new() };
    let mut g_noise = if want_grad { vec![0.0; m * n] } else { Vec::new() };

    let mut r0 = 0;
    while r0 < interior {
        let c = cfg.chunk_rows.min(interior - r0);
        let span = c + 2 * k;
        let mut tape = Tape::new();
        let net = params.register_as(&mut tape, want_grad);
        let y_w = y.slice_rows(r0, span)?;
        let n_w = noise.slice_rows(r0, span)?;
        let n_var = if want_grad { tape.leaf(n_w) } else { tape.constant(n_w) };
        let y0 = tape.constant(y_w.slice_rows(k, c)?);
        let n0 = tape.slice_rows(n_var, k, c)?;
        let x0 = tape.sub(y0, n0)?;
        let mut field = |tape: &mut Tape, x| net.forward(tape, x);

        let mut loss = None;
        for dir in [Direction::Forward, Direction::Backward] {
            let mut x = x0;
            for (j, &wj) in weights.iter().enumerate() {
                let (h_at, target_at) = match dir {
                    Direction::Forward => (r0 + k + j, k + 1 + j),
                    Direction::Backward => (r0 + k - 1 - j, k - 1 - j),
                };
                let hs = Arc::new(h[h_at..h_at + c].to_vec());
                x = rk_timestep(&mut tape, x, &mut field, &hs, dir, &scheme)?;
                let n_t = tape.slice_rows(n_var, target_at, c)?;
                let pred = tape.add(x, n_t)?;
                let target = tape.constant(y_w.slice_rows(target_at, c)?);
                let sse = tape.sse(pred, target)?;
                let term = tape.scale(sse, wj * norm)?;
                loss = Some(match loss {
                    None => term,
                    Some(l) => tape.add(l, term)?,
                });
            }
        }
        let loss = loss.expect("num_dt >= 1");
        total += tape.value(loss).item();
        if want_grad {
            let mut wrt = net.params();
            wrt.push(n_var);
            let grads = tape.grad(loss, &wrt)?;
            let mut at = 0;
            for g in &grads[..grads.len() - 1] {
                for (acc, v) in g_net[at..at + g.len()].iter_mut().zip(g.data()) {
                    *acc += v;
                }
                at += g.len();
            }
            let gn = grads[grads.len() - 1].data();
            for (acc, v) in g_noise[r0 * n..(r0 + span) * n].iter_mut().zip(gn) {
                *acc += v;
            }
        }
        r0 += c;
    }
    Ok((total, want_grad.then_some((g_net, g_noise))))
}

/// Value of the denoising objective.
pub fn denoise_objective(
    y: &Tensor,
    t: &[f64],
    params: &MlpParams,
    noise: &NoiseEstimate,
    cfg: &DenoiseConfig,
) -> Result<DenoiseTerms> {
    check_problem(y, t, params, noise, cfg)?;
    let h = step_sizes(t)?;
    let (fid, _) = fidelity(y, &h, params, &noise.noise, cfg, false)?;
    let (w, nr) = regularizers(params, &noise.noise);
    Ok(terms(fid, w, nr, cfg))
}

fn terms(fidelity: f64, weight_reg: f64, noise_reg: f64, cfg: &DenoiseConfig) -> DenoiseTerms {
    DenoiseTerms {
        fidelity,
        weight_reg,
        noise_reg,
        total: fidelity + cfg.beta_reg * weight_reg + cfg.gamma * noise_reg,
    }
}

/// Value and gradient of the denoising objective.
pub fn denoise_gradient(
    y: &Tensor,
    t: &[f64],
    params: &MlpParams,
    noise: &NoiseEstimate,
    cfg: &DenoiseConfig,
) -> Result<(DenoiseTerms, DenoiseGradient)> {
    check_problem(y, t, params, noise, cfg)?;
    let h = step_sizes(t)?;
    let mut flat = Vec::new();
    let value = objective_flat(y, &h, params, &noise.noise, cfg, &mut flat)?;
    let mut network = params.clone();
    let used = network.set_from_flat(&flat);
    let noise = Tensor::new(y.shape().to_vec(), flat[used..].to_vec())?;
    Ok((value, DenoiseGradient { network, noise }))
}

/// Objective with the gradient written to `grad` in `[network…, noise…]` order.
fn objective_flat(
    y: &Tensor,
    h: &[f64],
    params: &MlpParams,
    noise: &Tensor,
    cfg: &DenoiseConfig,
    grad: &mut Vec<f64>,
) -> Result<DenoiseTerms> {
    let (fid, g) = fidelity(y, h, params, noise, cfg, true)?;
    let (mut g_net, g_noise) = g.expect("gradient requested");
    let (w, nr) = regularizers(params, noise);
    // regularizer gradients: weights only, biases excluded
    let scale = cfg.beta_reg / params.weights.len() as f64;
    let mut at = 0;
    for (wm, b) in params.weights.iter().zip(&params.biases) {
        for (gv, wv) in g_net[at..at + wm.len()].iter_mut().zip(wm.data()) {
            *gv += scale * wv;
        }
        at += wm.len() + b.len();
    }
    grad.clear();
    grad.extend_from_slice(&g_net);
    grad.extend(g_noise.iter().zip(noise.data()).map(|(g, v)| g + cfg.gamma * v));
    Ok(terms(fid, w, nr, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    /// `Y − N` with derivatives from the fitted vector field.
    pub denoised: TimeSeries,
    pub noise: NoiseEstimate,
    pub network: MlpParams,
    /// Objective after each iteration; index 0 is the initial value.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl DenoiseOutput {
    /// Drops `num_dt` samples at each end, where the noise estimate only sees
    /// the regularizer.
    pub fn interior(&self, num_dt: usize) -> Result<TimeSeries> {
        let m = self.denoised.len();
        if m <= 2 * num_dt {
            bail!(Domain, "{m} samples leave no interior for num_dt = {num_dt}");
        }
        self.denoised.slice(num_dt, m - 2 * num_dt)
    }
}

fn assemble(
    t: &[f64],
    y: &Tensor,
    network: MlpParams,
    noise: Tensor,
    history: Vec<f64>,
    iterations: usize,
    termination: Termination,
) -> Result<DenoiseOutput> {
    let x = y.zip_map(&noise, |a, b| a - b)?;
    let dx = network.forward(&x)?;
    Ok(DenoiseOutput {
        denoised: TimeSeries::new(t.to_vec(), x, Some(dx), None)?,
        noise: NoiseEstimate { noise },
        network,
        history,
        iterations,
        termination,
    })
}

/// Fits the noise estimate and the vector field.
///
/// Deterministic for a given `seed`. When the objective stops being finite the
/// error carries the best state reached so far.
pub fn separate_noise(
    t: &[f64],
    y: &Tensor,
    cfg: &DenoiseConfig,
    seed: u64,
) -> core::result::Result<DenoiseOutput, Diverged<Option<DenoiseOutput>>> {
    separate_noise_with_progress(t, y, cfg, seed, &mut |_, _| {})
}

/// [`separate_noise`] reporting `(iteration, objective)` after every iteration.
pub fn separate_noise_with_progress(
    t: &[f64],
    y: &Tensor,
    cfg: &DenoiseConfig,
    seed: u64,
    progress: &mut dyn FnMut(usize, f64),
) -> core::result::Result<DenoiseOutput, Diverged<Option<DenoiseOutput>>> {
    let fail = |error: Error| Diverged { error, partial: None };
    cfg.validate().map_err(fail)?;
    if !y.is_matrix() || y.rows() < 2 * cfg.num_dt + 2 {
        return Err(fail(Error::Domain(alloc::format!(
            "need at least {} samples for num_dt = {}, got {:?}",
            2 * cfg.num_dt + 2,
            cfg.num_dt,
            y.shape()
        ))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = MlpParams::xavier(&cfg.layer_sizes(y.cols()), cfg.activation, &mut rng).map_err(fail)?;
    let noise0 = init_noise_estimate(y, cfg.init_window).map_err(fail)?;
    check_problem(y, t, &network, &noise0, cfg).map_err(fail)?;
    let h = step_sizes(t).map_err(fail)?;

    let mut x0 = Vec::new();
    network.to_flat(&mut x0);
    let net_len = x0.len();
    x0.extend_from_slice(noise0.noise.data());

    let unpack = |flat: &[f64], network: &mut MlpParams| -> Tensor {
        network.set_from_flat(&flat[..net_len]);
        Tensor::new(y.shape().to_vec(), flat[net_len..].to_vec()).expect("shape preserved")
    };

    match cfg.optimizer {
        DenoiseOptimizer::Lbfgs => {
            let mut scratch = network.clone();
            let mut buf = Vec::new();
            let obj = |flat: &[f64], g: &mut [f64]| -> Result<f64> {
                let noise = unpack(flat, &mut scratch);
                let v = objective_flat(y, &h, &scratch, &noise, cfg, &mut buf)?;
                g.copy_from_slice(&buf);
                Ok(v.total)
            };
            let lcfg = LbfgsConfig {
                max_iter: cfg.max_iter,
                max_evals: cfg.max_iter.saturating_mul(2).max(10),
                ftol: cfg.ftol,
                gtol: cfg.gtol,
                ..LbfgsConfig::default()
            };
            let report = optim::minimize(obj, &x0, &lcfg, |i, f| progress(i, f)).map_err(fail)?;
            let noise = unpack(&report.x, &mut network);
            assemble(t, y, network, noise, report.history, report.iterations, report.termination).map_err(fail)
        }
        DenoiseOptimizer::Adam { learning_rate } => {
            let mut adam = Adam::new(x0.len());
            let mut flat = x0;
            let mut grad = Vec::new();
            let mut best = (f64::INFINITY, flat.clone());
            let mut history = Vec::new();
            let mut scratch = network.clone();
            let mut termination = Termination::MaxIterations;
            for it in 0..=cfg.max_iter {
                let noise = unpack(&flat, &mut scratch);
                let value = match objective_flat(y, &h, &scratch, &noise, cfg, &mut grad) {
                    Ok(v) if v.total.is_finite() => v.total,
                    Ok(_) | Err(Error::NonFinite(_)) => {
                        let error = Error::Divergence {
                            stage: String::from("denoise"),
                            step: it,
                            detail: String::from("objective became non-finite"),
                        };
                        let partial = if best.0.is_finite() {
                            let noise = unpack(&best.1, &mut network);
                            assemble(t, y, network, noise, history, it, Termination::NoProgress).ok()
                        } else {
                            None
                        };
                        return Err(Diverged { error, partial });
                    }
                    Err(e) => return Err(fail(e)),
                };
                if value < best.0 {
                    best = (value, flat.clone());
                }
                history.push(value);
                if it > 0 {
                    progress(it, value);
                }
                if it == cfg.max_iter {
                    break;
                }
                if grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) <= cfg.gtol {
                    termination = Termination::GradientTolerance;
                    break;
                }
                adam.step(&mut flat, &grad, learning_rate);
            }
            let iterations = history.len() - 1;
            let noise = unpack(&best.1, &mut network);
            assemble(t, y, network, noise, history, iterations, termination).map_err(fail)
        }
    }
}
