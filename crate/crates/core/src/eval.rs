//! Evaluation of a trained model: relative errors, simulation of the latent
//! model, alignment with a reference system and noise-recovery statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::autoencoder::{assemble_losses, forward_state, Batch};
use crate::dynamics::TimeSeries;
use crate::error::{bail, Diverged, Error, Result};
use crate::library::{build_library_order1, LibraryColumn, ModelOrder, SindyCoefficients, SindySpec};
use crate::tensor::Tensor;
use crate::trainer::ModelBundle;

/// Relative Frobenius errors over a whole test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `‖x − ψ(φ(x))‖ / ‖x‖`
    pub decoder_relative_error: f64,
    /// `‖ẋ − ẋ_decode‖ / ‖ẋ‖` (second derivatives for second-order models)
    pub decoder_sindy_relative_error: f64,
    /// `‖ż − Θ(z)(mask∘Φ)‖ / ‖ż‖` (second derivatives for second-order models)
    pub latent_sindy_relative_error: f64,
}

fn sq_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq(a: &Tensor) -> f64 {
    a.data().iter().map(|v| v * v).sum()
}

/// Rows per forward pass in [`compute_metrics`].
const EVAL_CHUNK: usize = 1024;

pub fn compute_metrics(model: &ModelBundle, data: &TimeSeries) -> Result<Metrics> {
    let dx = data.dx.as_ref().ok_or_else(|| Error::Contract("test data needs time derivatives".into()))?;
    if model.spec.model_order == ModelOrder::Second && data.ddx.is_none() {
        bail!(Contract, "second-order model needs second derivatives in the test data");
    }
    let mut acc = [0.0f64; 6];
    let mut start = 0;
    while start < data.len() {
        let len = EVAL_CHUNK.min(data.len() - start);
        let x = data.x.slice_rows(start, len)?;
        let dxc = dx.slice_rows(start, len)?;
        let ddx = data.ddx.as_ref().map(|d| d.slice_rows(start, len)).transpose()?;
        let s = forward_state(&model.params, &model.coefficients, &model.spec, &Batch { x: &x, dx: &dxc, ddx: ddx.as_ref() })?;
        acc[0] += sq_diff(&s.x, &s.x_decode);
        acc[1] += sq(&s.x);
        match model.spec.model_order {
            ModelOrder::First => {
                acc[2] += sq_diff(&s.dx, &s.dx_decode);
                acc[3] += sq(&s.dx);
                acc[4] += sq_diff(&s.dz, &s.dz_predict);
                acc[5] += sq(&s.dz);
            }
            ModelOrder::Second => {
                let (ddx, ddx_dec, ddz) = (s.ddx.as_ref().expect("checked"), s.ddx_decode.as_ref().expect("set"), s.ddz.as_ref().expect("set"));
                acc[2] += sq_diff(ddx, ddx_dec);
                acc[3] += sq(ddx);
                acc[4] += sq_diff(ddz, &s.dz_predict);
                acc[5] += sq(ddz);
            }
        }
        start += len;
    }
    let ratio = |num: f64, den: f64, what: &str| -> Result<f64> {
        if !(den > 0.0) {
            bail!(Domain, "{what} has zero norm; relative error undefined");
        }
        Ok(libm::sqrt(num / den))
    };
    Ok(Metrics {
        decoder_relative_error: ratio(acc[0], acc[1], "x")?,
        decoder_sindy_relative_error: ratio(acc[2], acc[3], "dx")?,
        latent_sindy_relative_error: ratio(acc[4], acc[5], "dz")?,
    })
}

/// Mean loss components over a dataset, in the training weights of `model`.
pub fn dataset_losses(model: &ModelBundle, data: &TimeSeries) -> Result<crate::autoencoder::Losses> {
    let dx = data.dx.as_ref().ok_or_else(|| Error::Contract("data needs time derivatives".into()))?;
    let s = forward_state(&model.params, &model.coefficients, &model.spec, &Batch { x: &data.x, dx, ddx: data.ddx.as_ref() })?;
    assemble_losses(&s, &model.config.loss_weights, &model.spec)
}

/// Integrates the latent model with classical RK4 on the grid `t`.
///
/// `z0` holds the latent state, followed by its velocity for second-order
/// models. The result's `x` is the latent trajectory and `dx` its velocity.
/// Trajectories leaving `|z| ≤ 1e6` stop with a divergence error carrying the
/// samples computed so far.
pub fn sindy_simulate(
    z0: &[f64],
    t: &[f64],
    coeffs: &SindyCoefficients,
    spec: &SindySpec,
) -> core::result::Result<TimeSeries, Diverged<Option<TimeSeries>>> {
    let fail = |error: Error| Diverged { error, partial: None };
    let n = spec.latent_dim;
    let dim = spec.effective_dim();
    if z0.len() != dim {
        return Err(fail(Error::Dimension(format!("initial state has {} entries, model needs {dim}", z0.len()))));
    }
    let p = spec.library_dim().map_err(fail)?;
    if coeffs.phi.shape() != [p, n] {
        return Err(fail(Error::Dimension(format!("coefficients {:?} do not fit the library", coeffs.phi.shape()))));
    }
    if t.is_empty() {
        return Err(fail(Error::Domain("empty time grid".into())));
    }
    if let Some(w) = t.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(fail(Error::Domain(format!("time grid must be strictly increasing ({} then {})", w[0], w[1]))));
    }
    let phi = coeffs.masked();
    let mut theta = Vec::with_capacity(p);
    let mut rhs = |s: &[f64], out: &mut [f64]| {
        spec.evaluate_point(s, &mut theta);
        let accel = match spec.model_order {
            ModelOrder::First => 0,
            ModelOrder::Second => {
                out[..n].copy_from_slice(&s[n..]);
                n
            }
        };
        for j in 0..n {
            out[accel + j] = (0..p).map(|r| theta[r] * phi.get(r, j)).sum();
        }
    };
    let m = t.len();
    let mut states = Vec::with_capacity(m * dim);
    let mut rates = Vec::with_capacity(m * dim);
    let mut cur = z0.to_vec();
    let mut next = vec![0.0; dim];
    let mut rate = vec![0.0; dim];
    let pack = |states: &[f64], rates: &[f64], rows: usize| -> Result<TimeSeries> {
        let take = |src: &[f64], from: usize| {
            let mut v = Vec::with_capacity(rows * n);
            for r in 0..rows {
                v.extend_from_slice(&src[r * dim + from..r * dim + from + n]);
            }
            Tensor::matrix(rows, n, v)
        };
        let x = take(states, 0)?;
        let (dx, ddx) = match spec.model_order {
            ModelOrder::First => (take(rates, 0)?, None),
            ModelOrder::Second => (take(states, n)?, Some(take(rates, n)?)),
        };
        TimeSeries::new(t[..rows].to_vec(), x, Some(dx), ddx)
    };
    for k in 0..m {
        let bad = cur.iter().any(|v| !v.is_finite() || v.abs() > 1e6);
        if bad {
            let partial = pack(&states, &rates, k).ok();
            return Err(Diverged {
                error: Error::Divergence { stage: "simulate".into(), step: k, detail: "latent state left |z| <= 1e6".into() },
                partial,
            });
        }
        rhs(&cur, &mut rate);
        states.extend_from_slice(&cur);
        rates.extend_from_slice(&rate);
        if k + 1 < m {
            crate::dynamics::rk4_step(&mut rhs, &cur, t[k + 1] - t[k], &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
    }
    pack(&states, &rates, m).map_err(fail)
}

/// Coordinate-wise affine map from learned to reference latent coordinates:
/// `reference[i] = scale[i] · learned[permutation[i]] + offset[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLatentTransform {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub permutation: Vec<usize>,
}

impl AffineLatentTransform {
    pub fn identity(n: usize) -> Self {
        Self { scale: vec![1.0; n], offset: vec![0.0; n], permutation: (0..n).collect() }
    }

    pub fn new(scale: Vec<f64>, offset: Vec<f64>, permutation: Vec<usize>) -> Result<Self> {
        let n = scale.len();
        if offset.len() != n || permutation.len() != n {
            bail!(Dimension, "transform parts have lengths {}, {}, {}", n, offset.len(), permutation.len());
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || seen[p] {
                bail!(Domain, "{:?} is not a permutation", permutation);
            }
            seen[p] = true;
        }
        if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) || offset.iter().any(|o| !o.is_finite()) {
            bail!(Domain, "scales must be finite and nonzero, offsets finite");
        }
        Ok(Self { scale, offset, permutation })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0)
            && self.offset.iter().all(|&o| o == 0.0)
            && self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Maps learned coordinates (one sample per row) to reference coordinates.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        let n = self.dim();
        if !z.is_matrix() || z.cols() != n {
            bail!(Dimension, "transform of {n} coordinates applied to {:?}", z.shape());
        }
        let mut out = vec![0.0; z.len()];
        for r in 0..z.rows() {
            for i in 0..n {
                out[r * n + i] = self.scale[i] * z.get(r, self.permutation[i]) + self.offset[i];
            }
        }
        Tensor::matrix(z.rows(), n, out)
    }

    /// The map from reference back to learned coordinates.
    pub fn inverse(&self) -> Self {
        let n = self.dim();
        let mut out = Self::identity(n);
        for i in 0..n {
            let j = self.permutation[i];
            out.permutation[j] = i;
            out.scale[j] = 1.0 / self.scale[i];
            out.offset[j] = -self.offset[i] / self.scale[i];
        }
        out
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Fitted transform and its total unexplained variance fraction
/// `Σᵢ (1 − R²ᵢ)`, which is zero for an exactly affine relation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub transform: AffineLatentTransform,
    pub residual: f64,
}

/// Least-squares fit of `reference ≈ scale · learned[perm] + offset`, searching
/// every coordinate matching. Signs are absorbed by the scales.
pub fn fit_affine_latent_transform(z_learned: &Tensor, z_reference: &Tensor) -> Result<AffineFit> {
    if !z_learned.is_matrix() || z_learned.shape() != z_reference.shape() {
        bail!(Dimension, "learned {:?} and reference {:?} must match", z_learned.shape(), z_reference.shape());
    }
    let (m, n) = (z_learned.rows(), z_learned.cols());
    if n > 6 {
        bail!(Domain, "coordinate matching is limited to 6 latent coordinates, got {n}");
    }
    if m < 2 {
        bail!(Domain, "need at least two samples to fit an affine map");
    }
    let stats = |t: &Tensor| -> Result<(Vec<f64>, Vec<f64>)> {
        let mean: Vec<f64> = (0..n).map(|c| (0..m).map(|r| t.get(r, c)).sum::<f64>() / m as f64).collect();
        let var: Vec<f64> = (0..n).map(|c| (0..m).map(|r| { let d = t.get(r, c) - mean[c]; d * d }).sum::<f64>()).collect();
        if let Some(c) = var.iter().position(|&v| !(v > 0.0)) {
            bail!(Domain, "coordinate {c} is constant; affine fit is degenerate");
        }
        Ok((mean, var))
    };
    let (lm, lv) = stats(z_learned)?;
    let (rm, rv) = stats(z_reference)?;
    // cov[i][j] between reference i and learned j
    let mut cov = vec![vec![0.0; n]; n];
    for r in 0..m {
        for i in 0..n {
            let a = z_reference.get(r, i) - rm[i];
            for j in 0..n {
                cov[i][j] += a * (z_learned.get(r, j) - lm[j]);
            }
        }
    }
    let unexplained = |i: usize, j: usize| 1.0 - cov[i][j] * cov[i][j] / (rv[i] * lv[j]);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(n) {
        let score: f64 = (0..n).map(|i| unexplained(i, p[i])).sum();
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, p));
        }
    }
    let (residual, perm) = best.expect("at least one permutation");
    let scale: Vec<f64> = (0..n).map(|i| cov[i][perm[i]] / lv[perm[i]]).collect();
    let offset: Vec<f64> = (0..n).map(|i| rm[i] - scale[i] * lm[perm[i]]).collect();
    Ok(AffineFit { transform: AffineLatentTransform::new(scale, offset, perm)?, residual: residual.max(0.0) })
}

type Poly = BTreeMap<Vec<usize>, f64>;

fn poly_mul_affine(p: &Poly, var: usize, a: f64, c: f64) -> Poly {
    let mut out = Poly::new();
    for (k, &v) in p {
        if a != 0.0 {
            let mut key = k.clone();
            let pos = key.partition_point(|&x| x <= var);
            key.insert(pos, var);
            *out.entry(key).or_insert(0.0) += v * a;
        }
        if c != 0.0 {
            *out.entry(k.clone()).or_insert(0.0) += v * c;
        }
    }
    out
}

/// Rewrites a model fitted in learned coordinates as a model in the reference
/// coordinates of `transform` by exact polynomial re-expansion.
///
/// An entry of the result is active when an active source term contributes
/// to it. Fails with [`Error::LibraryOverflow`] when the rewritten model needs
/// columns the library lacks (e.g. a constant when offsets are nonzero but
/// the constant column is disabled, or a sine of a rescaled variable).
pub fn transform_coefficients(
    coeffs: &SindyCoefficients,
    transform: &AffineLatentTransform,
    spec: &SindySpec,
) -> Result<SindyCoefficients> {
    let n = spec.latent_dim;
    if transform.dim() != n {
        bail!(Dimension, "transform has {} coordinates, model {}", transform.dim(), n);
    }
    let p = spec.library_dim()?;
    if coeffs.phi.shape() != [p, n] {
        bail!(Dimension, "coefficients {:?} do not fit the library", coeffs.phi.shape());
    }
    let dim = spec.effective_dim();
    // learned variable v = a[v] · new[target[v]] + c[v]
    let inv = transform.inverse();
    let mut a = vec![0.0; dim];
    let mut c = vec![0.0; dim];
    let mut target = vec![0usize; dim];
    for j in 0..n {
        a[j] = inv.scale[j];
        c[j] = inv.offset[j];
        target[j] = inv.permutation[j];
        if spec.model_order == ModelOrder::Second {
            a[n + j] = inv.scale[j];
            target[n + j] = n + inv.permutation[j];
        }
    }
    let columns = spec.columns();
    let mut row_of: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut sine_row: BTreeMap<usize, usize> = BTreeMap::new();
    for (r, col) in columns.iter().enumerate() {
        match col {
            LibraryColumn::Monomial(t) => {
                row_of.insert(t.clone(), r);
            }
            LibraryColumn::Sine(v) => {
                sine_row.insert(*v, r);
            }
        }
    }

    let mut phi = vec![0.0; p * n];
    let mut mask = vec![false; p * n];
    let mut overflow: Vec<String> = Vec::new();
    let names = spec.column_names();
    for (r, col) in columns.iter().enumerate() {
        let expansion: Poly = match col {
            LibraryColumn::Monomial(t) => {
                let mut poly = Poly::new();
                poly.insert(Vec::new(), 1.0);
                for &v in t {
                    poly = poly_mul_affine(&poly, target[v], a[v], c[v]);
                }
                poly
            }
            LibraryColumn::Sine(v) => {
                let identity = a[*v] == 1.0 && c[*v] == 0.0 && target[*v] == *v;
                let any_active = (0..n).any(|j| coeffs.is_active(r, j) && coeffs.phi.get(r, j) != 0.0);
                if !identity && any_active {
                    overflow.push(names[r].clone());
                }
                let mut poly = Poly::new();
                poly.insert(alloc::vec![usize::MAX, target[*v]], 1.0);
                poly
            }
        };
        for j in 0..n {
            if !coeffs.is_active(r, j) {
                continue;
            }
            let v = coeffs.phi.get(r, j);
            // equation for learned coordinate j feeds reference coordinate i with permutation[i] == j
            let i = inv.permutation[j];
            let out_scale = transform.scale[i];
            for (key, &coef) in &expansion {
                let row = if key.first() == Some(&usize::MAX) {
                    sine_row.get(&key[1]).copied()
                } else {
                    row_of.get(key).copied()
                };
                match row {
                    Some(row) => {
                        phi[row * n + i] += out_scale * v * coef;
                        mask[row * n + i] = true;
                    }
                    None if coef != 0.0 && v != 0.0 => overflow.push(format!("{:?} from {}", key, names[r])),
                    None => {}
                }
            }
        }
    }
    if !overflow.is_empty() {
        overflow.sort();
        overflow.dedup();
        return Err(Error::LibraryOverflow(overflow.join(", ")));
    }
    SindyCoefficients::with_mask(Tensor::matrix(p, n, phi)?, mask)
}

/// Solves `theta · phi ≈ target` by least squares, optionally followed by
/// sequentially thresholded refits of each column on its surviving terms.
pub fn least_squares_fit(theta: &Tensor, target: &Tensor, threshold: Option<f64>) -> Result<SindyCoefficients> {
    if !theta.is_matrix() || !target.is_matrix() || theta.rows() != target.rows() {
        bail!(Dimension, "library {:?} and targets {:?} do not align", theta.shape(), target.shape());
    }
    let (m, p) = (theta.rows(), theta.cols());
    let n = target.cols();
    if m < p {
        bail!(Domain, "{m} samples cannot determine {p} coefficients");
    }
    let col_norm: Vec<f64> = (0..p)
        .map(|c| libm::sqrt((0..m).map(|r| { let v = theta.get(r, c); v * v }).sum::<f64>()))
        .collect();
    if col_norm.iter().any(|&v| v == 0.0) {
        let rank = col_norm.iter().filter(|&&v| v > 0.0).count();
        return Err(Error::RankDeficient { rank, cols: p });
    }
    let scaled = |cols: &[usize]| DMatrix::from_fn(m, cols.len(), |r, k| theta.get(r, cols[k]) / col_norm[cols[k]]);
    let solve = |cols: &[usize], j: usize| -> Result<Vec<f64>> {
        let a = scaled(cols);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * (m.max(cols.len()) as f64) * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < cols.len() {
            return Err(Error::RankDeficient { rank, cols: cols.len() });
        }
        let b = DVector::from_fn(m, |r, _| target.get(r, j));
        let x = svd.solve(&b, tol).map_err(|e| Error::Domain(String::from(e)))?;
        Ok(cols.iter().zip(x.iter()).map(|(&c, &v)| v / col_norm[c]).collect())
    };

    let all: Vec<usize> = (0..p).collect();
    let mut phi = vec![0.0; p * n];
    let mut mask = vec![true; p * n];
    for j in 0..n {
        let mut active = all.clone();
        let mut coef = solve(&active, j)?;
        if let Some(thr) = threshold {
            for _ in 0..=p {
                let keep: Vec<usize> = (0..active.len()).filter(|&k| !(coef[k].abs() < thr)).collect();
                if keep.len() == active.len() {
                    break;
                }
                active = keep.iter().map(|&k| active[k]).collect();
                if active.is_empty() {
                    coef.clear();
                    break;
                }
                coef = solve(&active, j)?;
            }
        }
        for r in 0..p {
            mask[r * n + j] = false;
        }
        for (&r, &v) in active.iter().zip(&coef) {
            phi[r * n + j] = v;
            mask[r * n + j] = true;
        }
    }
    SindyCoefficients::with_mask(Tensor::matrix(p, n, phi)?, mask)
}

/// First-order regression of `dz` on `Θ(z)`.
pub fn least_squares_sindy(z: &Tensor, dz: &Tensor, spec: &SindySpec, threshold: Option<f64>) -> Result<SindyCoefficients> {
    let theta = build_library_order1(z, spec)?;
    z.check_same_shape(dz, "least_squares_sindy")?;
    least_squares_fit(&theta, dz, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateRecovery {
    pub correlation: f64,
    pub relative_l2: f64,
    pub estimated_std: f64,
    pub true_std: f64,
}

/// Agreement between estimated and injected noise over interior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecovery {
    pub correlation: f64,
    pub relative_l2: f64,
    pub per_coordinate: Vec<CoordinateRecovery>,
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        bail!(Domain, "correlation of a constant series is undefined");
    }
    Ok(sab / libm::sqrt(saa * sbb))
}

fn rel_l2(est: &[f64], truth: &[f64]) -> Result<f64> {
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        bail!(Domain, "true noise is identically zero");
    }
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(num / den))
}

/// Compares rows `skip..m − skip` of the two noise matrices.
pub fn noise_recovery_report(estimate: &Tensor, truth: &Tensor, skip: usize) -> Result<NoiseRecovery> {
    if !estimate.is_matrix() || estimate.shape() != truth.shape() {
        bail!(Dimension, "noise estimate {:?} and truth {:?} differ", estimate.shape(), truth.shape());
    }
    let m = estimate.rows();
    if m <= 2 * skip + 1 {
        bail!(Domain, "{m} samples leave too few interior rows after skipping {skip} at each end");
    }
    let est = estimate.slice_rows(skip, m - 2 * skip)?;
    let tru = truth.slice_rows(skip, m - 2 * skip)?;
    let per_coordinate = (0..est.cols())
        .map(|c| {
            let (a, b) = (est.column(c), tru.column(c));
            Ok(CoordinateRecovery {
                correlation: pearson(&a, &b)?,
                relative_l2: rel_l2(&a, &b)?,
                estimated_std: crate::dynamics::global_std(&a),
                true_std: crate::dynamics::global_std(&b),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseRecovery {
        correlation: pearson(est.data(), tru.data())?,
        relative_l2: rel_l2(est.data(), tru.data())?,
        per_coordinate,
    })
}

/// Root-mean-square difference of two equally shaped tensors.
pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "rmse")?;
    if a.is_empty() {
        bail!(Domain, "rmse of empty tensors");
    }
    Ok(libm::sqrt(sq_diff(a, b) / a.len() as f64))
}
