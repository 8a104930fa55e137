//! Candidate-function libraries for sparse regression and the coefficient mask.
//!
//! Column order is fixed: the constant (when enabled), then monomials of
//! degree 1, 2, … up to the polynomial order, each degree enumerated with
//! non-decreasing variable indices in lexicographic order, then `sin` of each
//! variable (when enabled). For second-order models the variables are the
//! latent coordinates followed by their time derivatives.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::library_size;
use crate::error::{bail, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Whether the library models first or second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelOrder {
    First,
    Second,
}

impl ModelOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            ModelOrder::First => 1,
            ModelOrder::Second => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelOrder::First),
            2 => Ok(ModelOrder::Second),
            _ => Err(Error::Domain(format!("model order must be 1 or 2, got {v}"))),
        }
    }
}

/// Description of a candidate library.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SindySpec {
    pub latent_dim: usize,
    pub poly_order: usize,
    pub include_sine: bool,
    pub include_constant: bool,
    pub model_order: ModelOrder,
}

impl SindySpec {
    pub fn new(
        latent_dim: usize,
        poly_order: usize,
        include_sine: bool,
        include_constant: bool,
        model_order: ModelOrder,
    ) -> Result<Self> {
        let spec = Self { latent_dim, poly_order, include_sine, include_constant, model_order };
        spec.library_dim()?;
        Ok(spec)
    }

    /// First-order polynomial library with a constant column.
    pub fn polynomial(latent_dim: usize, poly_order: usize) -> Result<Self> {
        Self::new(latent_dim, poly_order, false, true, ModelOrder::First)
    }

    /// Number of variables the library is built from.
    pub fn effective_dim(&self) -> usize {
        match self.model_order {
            ModelOrder::First => self.latent_dim,
            ModelOrder::Second => 2 * self.latent_dim,
        }
    }

    pub fn library_dim(&self) -> Result<usize> {
        library_size(self.effective_dim(), self.poly_order, self.include_sine, self.include_constant)
    }

    /// Factor lists of the polynomial columns (constant = empty list), in column order.
    pub fn monomial_terms(&self) -> Vec<Vec<usize>> {
        let n = self.effective_dim();
        let mut terms = Vec::new();
        if self.include_constant {
            terms.push(Vec::new());
        }
        for degree in 1..=self.poly_order {
            let mut idx = vec![0usize; degree];
            loop {
                terms.push(idx.clone());
                // next non-decreasing index tuple
                let mut pos = degree;
                while pos > 0 && idx[pos - 1] == n - 1 {
                    pos -= 1;
                }
                if pos == 0 {
                    break;
                }
                idx[pos - 1] += 1;
                let v = idx[pos - 1];
                for slot in idx.iter_mut().skip(pos) {
                    *slot = v;
                }
            }
        }
        terms
    }

    /// Every library column as either a monomial or a sine.
    pub fn columns(&self) -> Vec<LibraryColumn> {
        let mut cols: Vec<LibraryColumn> =
            self.monomial_terms().into_iter().map(LibraryColumn::Monomial).collect();
        if self.include_sine {
            cols.extend((0..self.effective_dim()).map(LibraryColumn::Sine));
        }
        cols
    }

    pub fn variable_names(&self) -> Vec<String> {
        let n = self.latent_dim;
        let mut names: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
        if self.model_order == ModelOrder::Second {
            names.extend((1..=n).map(|i| format!("dz{i}")));
        }
        names
    }

    /// Header names such as `1`, `z1`, `z1*z3`, `sin(z2)`.
    pub fn column_names(&self) -> Vec<String> {
        let vars = self.variable_names();
        self.columns()
            .iter()
            .map(|c| match c {
                LibraryColumn::Monomial(t) if t.is_empty() => String::from("1"),
                LibraryColumn::Monomial(t) => {
                    let parts: Vec<&str> = t.iter().map(|&i| vars[i].as_str()).collect();
                    parts.join("*")
                }
                LibraryColumn::Sine(i) => format!("sin({})", vars[*i]),
            })
            .collect()
    }

    fn check_input(&self, z: &Tensor, dz: Option<&Tensor>) -> Result<()> {
        if !z.is_matrix() || z.cols() != self.latent_dim {
            bail!(Dimension, "library expects {} latent columns, got {:?}", self.latent_dim, z.shape());
        }
        match (self.model_order, dz) {
            (ModelOrder::First, None) => Ok(()),
            (ModelOrder::Second, Some(d)) if d.shape() == z.shape() => Ok(()),
            (ModelOrder::Second, Some(d)) => {
                bail!(Dimension, "dz shape {:?} differs from z {:?}", d.shape(), z.shape())
            }
            (ModelOrder::Second, None) => bail!(Contract, "second-order library needs dz"),
            (ModelOrder::First, Some(_)) => bail!(Contract, "first-order library takes no dz"),
        }
    }

    /// Evaluates the library at one point of the effective variables.
    pub fn evaluate_point(&self, vars: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for col in self.columns() {
            out.push(match col {
                LibraryColumn::Monomial(t) => t.iter().map(|&i| vars[i]).product(),
                LibraryColumn::Sine(i) => libm::sin(vars[i]),
            });
        }
    }
}

/// One candidate function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LibraryColumn {
    /// Product of the listed variables.
    Monomial(Vec<usize>),
    Sine(usize),
}

/// `Θ(Z)` for a first-order model.
pub fn build_library_order1(z: &Tensor, spec: &SindySpec) -> Result<Tensor> {
    if spec.model_order != ModelOrder::First {
        bail!(Contract, "build_library_order1 needs a first-order spec");
    }
    spec.check_input(z, None)?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let theta = library_on_tape(&mut tape, zv, None, spec)?;
    Ok(tape.value(theta).clone())
}

/// `Θ([Z, dZ])` for a second-order model.
pub fn build_library_order2(z: &Tensor, dz: &Tensor, spec: &SindySpec) -> Result<Tensor> {
    if spec.model_order != ModelOrder::Second {
        bail!(Contract, "build_library_order2 needs a second-order spec");
    }
    spec.check_input(z, Some(dz))?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let dzv = tape.constant(dz.clone());
    let theta = library_on_tape(&mut tape, zv, Some(dzv), spec)?;
    Ok(tape.value(theta).clone())
}

/// Records `Θ` on a tape so that gradients flow back into `z` (and `dz`).
pub fn library_on_tape(tape: &mut Tape, z: Var, dz: Option<Var>, spec: &SindySpec) -> Result<Var> {
    spec.check_input(tape.value(z), dz.map(|d| tape.value(d)))?;
    let vars = match dz {
        Some(d) => tape.concat_cols(&[z, d])?,
        None => z,
    };
    let terms = Arc::new(spec.monomial_terms());
    let poly = tape.monomials(vars, &terms)?;
    if spec.include_sine {
        let s = tape.sin(vars)?;
        tape.concat_cols(&[poly, s])
    } else {
        Ok(poly)
    }
}

/// Coefficient matrix `Φ` (library rows × latent columns) and its active mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SindyCoefficients {
    pub phi: Tensor,
    pub mask: Vec<bool>,
}

impl SindyCoefficients {
    /// All coefficients active.
    pub fn new(phi: Tensor) -> Result<Self> {
        let n = phi.len();
        Self::with_mask(phi, vec![true; n])
    }

    pub fn with_mask(phi: Tensor, mask: Vec<bool>) -> Result<Self> {
        if !phi.is_matrix() || mask.len() != phi.len() {
            bail!(Dimension, "mask of {} entries for coefficients {:?}", mask.len(), phi.shape());
        }
        Ok(Self { phi, mask })
    }

    pub fn rows(&self) -> usize {
        self.phi.rows()
    }

    pub fn cols(&self) -> usize {
        self.phi.cols()
    }

    /// The mask as a 0/1 matrix.
    pub fn mask_tensor(&self) -> Tensor {
        let data = self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.phi.shape().to_vec(), data).expect("mask matches phi")
    }

    /// `mask ∘ Φ`.
    pub fn masked(&self) -> Tensor {
        let data = self
            .phi
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Tensor::new(self.phi.shape().to_vec(), data).expect("mask matches phi")
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_active(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.cols() + c]
    }
}

/// `Θ · (mask ∘ Φ)`.
pub fn sindy_predict(theta: &Tensor, coeffs: &SindyCoefficients) -> Result<Tensor> {
    theta.matmul(&coeffs.masked())
}

/// Clears the mask wherever `|Φ| < threshold`; values are left untouched and
/// cleared entries never come back.
pub fn apply_threshold(coeffs: &SindyCoefficients, threshold: f64) -> SindyCoefficients {
    let mask = coeffs
        .phi
        .data()
        .iter()
        .zip(&coeffs.mask)
        .map(|(&v, &m)| m && !(v.abs() < threshold))
        .collect();
    SindyCoefficients { phi: coeffs.phi.clone(), mask }
}
