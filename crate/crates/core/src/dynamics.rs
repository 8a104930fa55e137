//! Lorenz trajectories, high-dimensional embeddings and synthetic measurement noise.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Parameters of the Lorenz system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

impl LorenzParams {
    pub fn new(sigma: f64, rho: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0 && rho > 0.0 && beta > 0.0) {
            bail!(Domain, "Lorenz parameters must be positive, got ({sigma}, {rho}, {beta})");
        }
        Ok(Self { sigma, rho, beta })
    }
}

pub fn lorenz_rhs(s: &[f64; 3], p: &LorenzParams) -> [f64; 3] {
    [
        p.sigma * (s[1] - s[0]),
        s[0] * (p.rho - s[2]) - s[1],
        s[0] * s[1] - p.beta * s[2],
    ]
}

/// Second time derivative along the flow, `J(s) · f(s)`.
pub fn lorenz_second_derivative(s: &[f64; 3], p: &LorenzParams) -> [f64; 3] {
    let f = lorenz_rhs(s, p);
    [
        p.sigma * (f[1] - f[0]),
        f[0] * (p.rho - s[2]) - s[0] * f[2] - f[1],
        f[0] * s[1] + s[0] * f[1] - p.beta * f[2],
    ]
}

/// Samples of a trajectory: time grid, states and optionally derivatives, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub x: Tensor,
    pub dx: Option<Tensor>,
    pub ddx: Option<Tensor>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, x: Tensor, dx: Option<Tensor>, ddx: Option<Tensor>) -> Result<Self> {
        if !x.is_matrix() || x.rows() != t.len() {
            bail!(Dimension, "states {:?} do not match {} time samples", x.shape(), t.len());
        }
        for (name, d) in [("dx", &dx), ("ddx", &ddx)] {
            if let Some(d) = d {
                if d.shape() != x.shape() {
                    bail!(Dimension, "{} shape {:?} differs from states {:?}", name, d.shape(), x.shape());
                }
            }
        }
        check_increasing(&t)?;
        Ok(Self { t, x, dx, ddx })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let sl = |m: &Option<Tensor>| m.as_ref().map(|m| m.slice_rows(start, len)).transpose();
        Ok(Self {
            t: self.t[start..start + len].to_vec(),
            x: self.x.slice_rows(start, len)?,
            dx: sl(&self.dx)?,
            ddx: sl(&self.ddx)?,
        })
    }
}

fn check_increasing(t: &[f64]) -> Result<()> {
    if let Some(w) = t.windows(2).find(|w| !(w[1] > w[0])) {
        bail!(Domain, "time grid must be strictly increasing ({} then {})", w[0], w[1]);
    }
    Ok(())
}

/// `m` samples starting at 0 with spacing `dt`.
pub fn uniform_grid(m: usize, dt: f64) -> Vec<f64> {
    (0..m).map(|k| k as f64 * dt).collect()
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(rhs: &mut F, x: &[f64], h: f64, out: &mut [f64])
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    rhs(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(&tmp, &mut k4);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates an autonomous system with fixed-step RK4 over the grid `t`.
///
/// `dx` of the result holds the right-hand side evaluated at every sample.
pub fn integrate_rk4<F>(mut rhs: F, x0: &[f64], t: &[f64]) -> Result<TimeSeries>
where
    F: FnMut(&[f64], &mut [f64]),
{
    check_increasing(t)?;
    if t.is_empty() {
        bail!(Domain, "empty time grid");
    }
    let n = x0.len();
    let m = t.len();
    let mut x = vec![0.0; m * n];
    let mut dx = vec![0.0; m * n];
    x[..n].copy_from_slice(x0);
    for k in 1..m {
        let (prev, next) = x.split_at_mut(k * n);
        rk4_step(&mut rhs, &prev[(k - 1) * n..], t[k] - t[k - 1], &mut next[..n]);
    }
    for k in 0..m {
        rhs(&x[k * n..(k + 1) * n], &mut dx[k * n..(k + 1) * n]);
    }
    TimeSeries::new(t.to_vec(), Tensor::matrix(m, n, x)?, Some(Tensor::matrix(m, n, dx)?), None)
}

/// Lorenz trajectory with exact first and second derivatives at every sample.
pub fn lorenz_trajectory(x0: [f64; 3], t: &[f64], p: &LorenzParams) -> Result<TimeSeries> {
    let mut ts = integrate_rk4(
        |s, out| {
            let f = lorenz_rhs(&[s[0], s[1], s[2]], p);
            out.copy_from_slice(&f);
        },
        &x0,
        t,
    )?;
    let mut ddx = Vec::with_capacity(ts.len() * 3);
    for r in 0..ts.len() {
        let s = ts.x.row(r);
        ddx.extend_from_slice(&lorenz_second_derivative(&[s[0], s[1], s[2]], p));
    }
    ts.ddx = Some(Tensor::matrix(ts.len(), 3, ddx)?);
    Ok(ts)
}

/// Spatial modes used to lift latent coordinates into a high-dimensional observation space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModes {
    /// `d × n` linear modes, one column per latent coordinate.
    pub modes: Tensor,
    /// Optional `d × n` modes multiplying the cube of each latent coordinate.
    pub cubic: Option<Tensor>,
    /// Per-coordinate scale applied to the latent state before embedding.
    pub normalization: Vec<f64>,
}

impl EmbeddingModes {
    /// Legendre polynomials sampled on `d` uniform points of `[-1, 1]`: `P_0..P_{n-1}`
    /// as linear modes and, when `cubic` is set, `P_n..P_{2n-1}` as cubic modes.
    pub fn legendre(d: usize, n: usize, cubic: bool, normalization: Vec<f64>) -> Result<Self> {
        let needed = if cubic { 2 * n } else { n };
        if d < needed || d < 2 {
            bail!(Dimension, "embedding dimension {} too small for {} modes", d, needed);
        }
        let grid: Vec<f64> = (0..d).map(|i| -1.0 + 2.0 * i as f64 / (d - 1) as f64).collect();
        let polys = legendre_table(&grid, needed);
        let pick = |offset: usize| {
            let mut data = vec![0.0; d * n];
            for i in 0..d {
                for j in 0..n {
                    data[i * n + j] = polys[offset + j][i];
                }
            }
            Tensor::matrix(d, n, data)
        };
        let modes = pick(0)?;
        let cubic = if cubic { Some(pick(n)?) } else { None };
        Self::new(modes, cubic, normalization)
    }

    pub fn new(modes: Tensor, cubic: Option<Tensor>, normalization: Vec<f64>) -> Result<Self> {
        if !modes.is_matrix() || modes.cols() != normalization.len() {
            bail!(
                Dimension,
                "modes {:?} do not match {} normalization entries",
                modes.shape(),
                normalization.len()
            );
        }
        if let Some(c) = &cubic {
            if c.shape() != modes.shape() {
                bail!(Dimension, "cubic modes {:?} differ from linear {:?}", c.shape(), modes.shape());
            }
        }
        if normalization.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            bail!(Domain, "normalization entries must be finite and nonzero");
        }
        Ok(Self { modes, cubic, normalization })
    }

    pub fn input_dim(&self) -> usize {
        self.modes.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.modes.cols()
    }
}

fn legendre_table(grid: &[f64], count: usize) -> Vec<Vec<f64>> {
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let col = grid
            .iter()
            .enumerate()
            .map(|(i, &x)| match k {
                0 => 1.0,
                1 => x,
                _ => {
                    let kf = (k - 1) as f64;
                    ((2.0 * kf + 1.0) * x * table[k - 1][i] - kf * table[k - 2][i]) / (kf + 1.0)
                }
            })
            .collect();
        table.push(col);
    }
    table
}

/// Lifts a latent trajectory into observation space, propagating derivatives exactly.
///
/// With `u = normalization ∘ z`, each observation is `Σ uᵢ·modeᵢ + Σ uᵢ³·cubicᵢ`.
/// `dx` is always produced; `ddx` is produced when the latent series carries one.
pub fn embed_highdim(latent: &TimeSeries, modes: &EmbeddingModes) -> Result<TimeSeries> {
    let n = modes.latent_dim();
    let d = modes.input_dim();
    if latent.dim() != n {
        bail!(Dimension, "latent dimension {} does not match {} modes", latent.dim(), n);
    }
    let Some(dz) = &latent.dx else {
        bail!(Dimension, "embedding needs latent derivatives");
    };
    let m = latent.len();
    let scale = &modes.normalization;
    let mut u = vec![0.0; m * n];
    let mut du = vec![0.0; m * n];
    let mut ddu = latent.ddx.as_ref().map(|_| vec![0.0; m * n]);
    for r in 0..m {
        for j in 0..n {
            u[r * n + j] = scale[j] * latent.x.get(r, j);
            du[r * n + j] = scale[j] * dz.get(r, j);
            if let (Some(dd), Some(src)) = (ddu.as_mut(), latent.ddx.as_ref()) {
                dd[r * n + j] = scale[j] * src.get(r, j);
            }
        }
    }
    // Coefficients on the linear and cubic modes for x, dx and ddx.
    let mut lin = [u.clone(), du.clone(), ddu.clone().unwrap_or_default()];
    let mut cub = [vec![0.0; m * n], vec![0.0; m * n], vec![0.0; m * n]];
    if modes.cubic.is_some() {
        for i in 0..m * n {
            let (a, b) = (u[i], du[i]);
            cub[0][i] = a * a * a;
            cub[1][i] = 3.0 * a * a * b;
            if let Some(dd) = &ddu {
                cub[2][i] = 6.0 * a * b * b + 3.0 * a * a * dd[i];
            }
        }
    }
    let modes_t = modes.modes.transpose()?;
    let cubic_t = modes.cubic.as_ref().map(|c| c.transpose()).transpose()?;
    let mut lift = |k: usize| -> Result<Tensor> {
        let coeffs = Tensor::matrix(m, n, core::mem::take(&mut lin[k]))?;
        let mut out = coeffs.matmul(&modes_t)?;
        if let Some(ct) = &cubic_t {
            let c = Tensor::matrix(m, n, core::mem::take(&mut cub[k]))?.matmul(ct)?;
            for (o, v) in out.data_mut().iter_mut().zip(c.data()) {
                *o += v;
            }
        }
        debug_assert_eq!(out.cols(), d);
        Ok(out)
    };
    let x = lift(0)?;
    let dx = lift(1)?;
    let ddx = if ddu.is_some() { Some(lift(2)?) } else { None };
    TimeSeries::new(latent.t.clone(), x, Some(dx), ddx)
}

/// Clean and noisy versions of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub clean: TimeSeries,
    pub observed: TimeSeries,
    /// `observed.x - clean.x`.
    pub true_noise: Tensor,
    pub noise_level: f64,
    pub seed: u64,
}

/// Population standard deviation of all entries.
pub fn global_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Adds iid Gaussian noise whose standard deviation is `level` times the
/// standard deviation of all entries of the clean states. Derivatives, when
/// present, are perturbed the same way relative to their own spread.
pub fn add_noise(clean: &TimeSeries, level: f64, seed: u64) -> Result<NoisyDataset> {
    if !(level >= 0.0) || !level.is_finite() {
        bail!(Domain, "noise level must be a finite non-negative fraction, got {level}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |m: &Tensor| -> (Tensor, Tensor) {
        let sd = level * global_std(m.data());
        let noise: Vec<f64> = (0..m.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        let noise = Tensor::new(m.shape().to_vec(), noise).expect("same shape");
        let noisy = m.zip_map(&noise, |a, b| a + b).expect("same shape");
        (noisy, noise)
    };
    let (x, true_noise) = perturb(&clean.x);
    let dx = clean.dx.as_ref().map(|d| perturb(d).0);
    let ddx = clean.ddx.as_ref().map(|d| perturb(d).0);
    Ok(NoisyDataset {
        observed: TimeSeries { t: clean.t.clone(), x, dx, ddx },
        clean: clean.clone(),
        true_noise,
        noise_level: level,
        seed,
    })
}

fn multiset_count(n: usize, k: usize) -> usize {
    // C(n + k - 1, k)
    let mut c: usize = 1;
    for i in 0..k {
        c = c * (n + i) / (i + 1);
    }
    c
}

/// Number of candidate functions in a polynomial (and optional sine) library.
pub fn library_size(
    n: usize,
    poly_order: usize,
    include_sine: bool,
    include_constant: bool,
) -> Result<usize> {
    if n == 0 {
        bail!(Domain, "library needs at least one variable");
    }
    if !(1..=5).contains(&poly_order) {
        bail!(Domain, "polynomial order must be in 1..=5, got {poly_order}");
    }
    let mut count = usize::from(include_constant);
    for k in 1..=poly_order {
        count += multiset_count(n, k);
    }
    if include_sine {
        count += n;
    }
    Ok(count)
}

/// Exact Lorenz coefficients on the constant-first polynomial library of three
/// normalized variables.
pub fn lorenz_ground_truth_coefficients(
    normalization: &[f64; 3],
    poly_order: usize,
    p: &LorenzParams,
) -> Result<Tensor> {
    if normalization.iter().any(|&v| v == 0.0) {
        bail!(Domain, "normalization entries must be nonzero");
    }
    if poly_order < 2 {
        bail!(Domain, "the Lorenz field needs quadratic terms (poly order >= 2)");
    }
    let rows = library_size(3, poly_order, false, true)?;
    let [n0, n1, n2] = *normalization;
    let mut xi = Tensor::zeros(&[rows, 3]);
    xi.set(1, 0, -p.sigma);
    xi.set(2, 0, p.sigma * n0 / n1);
    xi.set(1, 1, p.rho * n1 / n0);
    xi.set(2, 1, -1.0);
    xi.set(6, 1, -n1 / (n0 * n2));
    xi.set(3, 2, -p.beta);
    xi.set(5, 2, n2 / (n0 * n1));
    Ok(xi)
}
