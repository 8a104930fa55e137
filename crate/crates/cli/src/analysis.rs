//! Comparison of a discovered model with the system that generated the data.

use rsae_core::dynamics::{lorenz_ground_truth_coefficients, LorenzParams};
use rsae_core::eval::{fit_affine_latent_transform, transform_coefficients, AffineFit, AffineLatentTransform};
use rsae_core::library::{apply_threshold, SindyCoefficients, SindySpec};
use rsae_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SystemKind};
use crate::error::{CliError, CliResult};

/// True coefficients of the generating system on `spec`'s library, in the
/// unnormalised state coordinates.
pub fn true_coefficients(cfg: &ExperimentConfig, spec: &SindySpec) -> CliResult<Tensor> {
    let names = spec.column_names();
    let n = spec.latent_dim;
    let mut xi = Tensor::zeros(&[names.len(), n]);
    let row_of = |name: &str| {
        names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Config(format!("library lacks the term {name} needed by the true model")))
    };
    match cfg.system {
        SystemKind::Lorenz => {
            let p = LorenzParams::new(cfg.sigma, cfg.rho, cfg.beta).map_err(|e| CliError::Config(e.to_string()))?;
            let order = spec.poly_order.max(2);
            let full = lorenz_ground_truth_coefficients(&[1.0; 3], order, &p).map_err(|e| CliError::Config(e.to_string()))?;
            let full_names = SindySpec::polynomial(3, order).expect("valid").column_names();
            for (r, name) in full_names.iter().enumerate() {
                for j in 0..3 {
                    let v = full.get(r, j);
                    if v != 0.0 {
                        xi.set(row_of(name)?, j, v);
                    }
                }
            }
        }
        SystemKind::Linear => {
            for (j, row) in cfg.linear_matrix.iter().enumerate() {
                for (k, &a) in row.iter().enumerate() {
                    if a != 0.0 {
                        xi.set(row_of(&format!("z{}", k + 1))?, j, a);
                    }
                }
            }
        }
    }
    Ok(xi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub equation: usize,
    pub term: String,
    pub truth: f64,
    pub learned: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub permutation: Vec<usize>,
    /// `Σ (1 − R²)` of the coordinate-wise affine fit.
    pub fit_residual: f64,
    pub true_terms: usize,
    pub true_terms_found: usize,
    pub spurious_terms: usize,
    /// Every entry of the true model, learned value in the aligned coordinates.
    pub terms: Vec<TermReport>,
    /// Active entries the true model does not have.
    pub spurious: Vec<TermReport>,
}

impl StructureReport {
    /// Learned value of `term` in equation `equation` (1-based).
    pub fn learned(&self, equation: usize, term: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.equation == equation && t.term == term).map(|t| t.learned)
    }
}

/// Refits the scales of `fit` through the origin, keeping its matching. A
/// library without a constant column cannot express a shifted model.
fn without_offset(fit: &AffineFit, z_learned: &Tensor, z_reference: &Tensor) -> CliResult<AffineFit> {
    let n = fit.transform.dim();
    let mut scale = vec![0.0; n];
    let mut residual = 0.0;
    for i in 0..n {
        let l = z_learned.column(fit.transform.permutation[i]);
        let r = z_reference.column(i);
        let lr: f64 = l.iter().zip(&r).map(|(a, b)| a * b).sum();
        let ll: f64 = l.iter().map(|a| a * a).sum();
        scale[i] = lr / ll;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sse: f64 = l.iter().zip(&r).map(|(a, b)| (b - scale[i] * a).powi(2)).sum();
        let sst: f64 = r.iter().map(|b| (b - mean).powi(2)).sum();
        residual += sse / sst;
    }
    let transform = AffineLatentTransform::new(scale, vec![0.0; n], fit.transform.permutation.clone())
        .map_err(CliError::numeric("eval"))?;
    Ok(AffineFit { transform, residual })
}

/// Aligns learned latent coordinates with the reference state, rewrites the
/// learned model in reference coordinates and compares its sparsity pattern
/// with `truth`. Entries below `threshold` in magnitude do not count as terms.
pub fn compare_structure(
    z_learned: &Tensor,
    z_reference: &Tensor,
    coeffs: &SindyCoefficients,
    spec: &SindySpec,
    truth: &Tensor,
    threshold: f64,
) -> CliResult<(AffineFit, SindyCoefficients, StructureReport)> {
    let mut fit = fit_affine_latent_transform(z_learned, z_reference).map_err(CliError::numeric("eval"))?;
    if !spec.include_constant {
        fit = without_offset(&fit, z_learned, z_reference)?;
    }
    let mapped = transform_coefficients(coeffs, &fit.transform, spec).map_err(CliError::numeric("eval"))?;
    let kept = apply_threshold(&mapped, threshold);
    let names = spec.column_names();
    let mut terms = Vec::new();
    let mut spurious = Vec::new();
    for j in 0..spec.latent_dim {
        for (r, name) in names.iter().enumerate() {
            let report = TermReport {
                equation: j + 1,
                term: name.clone(),
                truth: truth.get(r, j),
                learned: if kept.is_active(r, j) { kept.phi.get(r, j) } else { 0.0 },
                active: kept.is_active(r, j),
            };
            if report.truth != 0.0 {
                terms.push(report);
            } else if report.active {
                spurious.push(report);
            }
        }
    }
    let report = StructureReport {
        scale: fit.transform.scale.clone(),
        offset: fit.transform.offset.clone(),
        permutation: fit.transform.permutation.clone(),
        fit_residual: fit.residual,
        true_terms: terms.len(),
        true_terms_found: terms.iter().filter(|t| t.active).count(),
        spurious_terms: spurious.len(),
        terms,
        spurious,
    };
    Ok((fit, kept, report))
}
