//! Explicit Runge–Kutta steps recorded on a tape, used for forward and
//! backward prediction of an autonomous neural vector field.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tape::{Tape, Var};

/// Butcher tableau of an explicit scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct RkScheme {
    /// Strictly lower-triangular stage coefficients; row `i` has `i` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl RkScheme {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.iter().enumerate().any(|(i, row)| row.len() != i) {
            bail!(Dimension, "tableau rows must have 0, 1, 2, … entries, one per stage weight");
        }
        let total: f64 = b.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            bail!(Domain, "stage weights sum to {total}, not 1");
        }
        Ok(Self { a, b })
    }

    /// Kutta's 3/8-rule, the four-stage scheme used by the denoiser.
    pub fn three_eighths() -> Self {
        Self {
            a: vec![vec![], vec![1.0 / 3.0], vec![-1.0 / 3.0, 1.0], vec![1.0, -1.0, 1.0]],
            b: vec![1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0],
        }
    }

    /// The classical fourth-order scheme.
    pub fn classic() -> Self {
        Self {
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Direction of a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Integrates `-f`, i.e. steps back in time.
    Backward,
}

/// One explicit step per row of `x`, with row `i` advanced by `h[i]`.
///
/// `f` records the vector field on the tape; the step never depends on time.
pub fn rk_timestep<F>(
    tape: &mut Tape,
    x: Var,
    f: &mut F,
    h: &Arc<Vec<f64>>,
    direction: Direction,
    scheme: &RkScheme,
) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if let Some(bad) = h.iter().find(|&&v| !(v > 0.0)) {
        bail!(Domain, "step sizes must be positive, found {bad}");
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut k: Vec<Var> = Vec::with_capacity(scheme.stages());
    for i in 0..scheme.stages() {
        let mut arg = x;
        for (j, &aij) in scheme.a[i].iter().enumerate() {
            if aij != 0.0 {
                let inc = tape.scale_rows(k[j], h, sign * aij)?;
                arg = tape.add(arg, inc)?;
            }
        }
        k.push(f(tape, arg)?);
    }
    let mut out = x;
    for (j, &bj) in scheme.b.iter().enumerate() {
        if bj != 0.0 {
            let inc = tape.scale_rows(k[j], h, sign * bj)?;
            out = tape.add(out, inc)?;
        }
    }
    Ok(out)
}
