//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The line search brackets a step satisfying the strong Wolfe conditions and
//! then zooms with safeguarded cubic interpolation. Objective evaluations that
//! overflow are treated as `+inf`, which makes the search back off instead of
//! aborting.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    pub max_evals: usize,
    /// Relative decrease `(f_prev − f) / max(|f_prev|, |f|, 1)` below which the run stops.
    pub ftol: f64,
    /// Stop once the largest gradient component is at or below this.
    pub gtol: f64,
    pub max_ls: usize,
    pub c1: f64,
    pub c2: f64,
    /// Minimum step/bracket size before the search gives up.
    pub tolerance_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 50_000,
            max_evals: 50_000,
            ftol: 1e-15,
            gtol: 1e-11,
            max_ls: 100,
            c1: 1e-4,
            c2: 0.9,
            tolerance_change: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    MaxEvaluations,
    GradientTolerance,
    FunctionTolerance,
    /// The step or bracket shrank below `tolerance_change`.
    NoProgress,
    /// The search direction stopped being a descent direction.
    NotDescent,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective after each accepted iteration (index 0 is the starting value).
    pub history: Vec<f64>,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Evaluates `obj`, mapping non-finite results to `+inf`.
fn eval<F>(obj: &mut F, x: &[f64], g: &mut [f64]) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    match obj(x, g) {
        Ok(f) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Ok(f),
        Ok(_) | Err(Error::NonFinite(_)) => {
            g.fill(0.0);
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// Minimiser of the cubic through two points with known slopes, clamped to `bounds`.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_square = d1 * d1 - g1 * g2;
    if d2_square >= 0.0 && d2_square.is_finite() {
        let d2 = libm::sqrt(d2_square);
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_finite() {
            return min_pos.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

struct LineSearchResult {
    f: f64,
    g: Vec<f64>,
    t: f64,
    evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    obj: &mut F,
    x: &[f64],
    mut t: f64,
    d: &[f64],
    f: f64,
    g: &[f64],
    gtd: f64,
    cfg: &LbfgsConfig,
) -> Result<LineSearchResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let d_norm = max_abs(d);
    let mut xt = vec![0.0; n];
    let probe = |t: f64, obj: &mut F, xt: &mut Vec<f64>| -> Result<(f64, Vec<f64>, f64)> {
        for i in 0..n {
            xt[i] = x[i] + t * d[i];
        }
        let mut gn = vec![0.0; n];
        let fnew = eval(obj, xt, &mut gn)?;
        let gtd_new = dot(&gn, d);
        Ok((fnew, gn, gtd_new))
    };

    let (mut f_new, mut g_new, mut gtd_new) = probe(t, obj, &mut xt)?;
    let mut evals = 1;
    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, f, g.to_vec(), gtd);
    let mut done = false;
    let mut ls_iter = 0;

    let mut bracket: Vec<f64>;
    let mut bf: Vec<f64>;
    let mut bg: Vec<Vec<f64>>;
    let mut bgtd: Vec<f64>;

    loop {
        if ls_iter >= cfg.max_ls {
            bracket = vec![0.0, t];
            bf = vec![f, f_new];
            bg = vec![g.to_vec(), g_new.clone()];
            bgtd = vec![gtd, gtd_new];
            break;
        }
        if f_new > f + cfg.c1 * t * gtd || (ls_iter > 1 && f_new >= f_prev) {
            bracket = vec![t_prev, t];
            bf = vec![f_prev, f_new];
            bg = vec![g_prev.clone(), g_new.clone()];
            bgtd = vec![gtd_prev, gtd_new];
            break;
        }
        if gtd_new.abs() <= -cfg.c2 * gtd {
            bracket = vec![t];
            bf = vec![f_new];
            bg = vec![g_new.clone()];
            bgtd = vec![gtd_new];
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = vec![t_prev, t];
            bf = vec![f_prev, f_new];
            bg = vec![g_prev.clone(), g_new.clone()];
            bgtd = vec![gtd_prev, gtd_new];
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let tmp = t;
        t = cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, Some((min_step, max_step)));
        t_prev = tmp;
        f_prev = f_new;
        g_prev = g_new.clone();
        gtd_prev = gtd_new;
        let r = probe(t, obj, &mut xt)?;
        f_new = r.0;
        g_new = r.1;
        gtd_new = r.2;
        evals += 1;
        ls_iter += 1;
    }

    // zoom
    let mut insuf_progress = false;
    let (mut low, mut high) = if bf.len() == 1 || bf[0] <= bf[1] { (0, 1) } else { (1, 0) };
    while !done && ls_iter < cfg.max_ls {
        let (bmin, bmax) = (bracket[0].min(bracket[1]), bracket[0].max(bracket[1]));
        if (bracket[1] - bracket[0]).abs() * d_norm < cfg.tolerance_change {
            break;
        }
        t = cubic_interpolate(bracket[0], bf[0], bgtd[0], bracket[1], bf[1], bgtd[1], None);
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insuf_progress || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insuf_progress = false;
            } else {
                insuf_progress = true;
            }
        } else {
            insuf_progress = false;
        }
        let (fn_, gn, gtdn) = probe(t, obj, &mut xt)?;
        evals += 1;
        ls_iter += 1;
        if fn_ > f + cfg.c1 * t * gtd || fn_ >= bf[low] {
            bracket[high] = t;
            bf[high] = fn_;
            bg[high] = gn;
            bgtd[high] = gtdn;
            (low, high) = if bf[0] <= bf[1] { (0, 1) } else { (1, 0) };
        } else {
            if gtdn.abs() <= -cfg.c2 * gtd {
                done = true;
            } else if gtdn * (bracket[high] - bracket[low]) >= 0.0 {
                bracket[high] = bracket[low];
                bf[high] = bf[low];
                bg[high] = bg[low].clone();
                bgtd[high] = bgtd[low];
            }
            bracket[low] = t;
            bf[low] = fn_;
            bg[low] = gn;
            bgtd[low] = gtdn;
        }
    }
    if bracket.len() == 1 {
        low = 0;
    }
    Ok(LineSearchResult { f: bf[low], g: bg.swap_remove(low), t: bracket[low], evals })
}

/// Minimises `obj` from `x0`. `obj(x, g)` returns the value and writes the gradient.
///
/// `on_iter(iteration, f)` is called after every accepted step.
pub fn minimize<F, C>(mut obj: F, x0: &[f64], cfg: &LbfgsConfig, mut on_iter: C) -> Result<LbfgsReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    C: FnMut(usize, f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = eval(&mut obj, &x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::Divergence {
            stage: "lbfgs".into(),
            step: 0,
            detail: "objective is not finite at the starting point".into(),
        });
    }
    let mut evals = 1;
    let mut history = vec![f];
    let report = |x: Vec<f64>, f, iterations, evaluations, history, termination| LbfgsReport {
        x,
        f,
        iterations,
        evaluations,
        history,
        termination,
    };
    if max_abs(&g) <= cfg.gtol {
        return Ok(report(x, f, 0, evals, history, Termination::GradientTolerance));
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut h_diag = 1.0;
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut g_prev = g.clone();
    let mut t = 0.0;
    let mut iter = 0;

    loop {
        if iter > 0 {
            let y: Vec<f64> = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
            let s: Vec<f64> = d.iter().map(|v| v * t).collect();
            let ys = dot(&y, &s);
            if ys > 1e-10 {
                if pairs.len() == cfg.memory {
                    pairs.pop_front();
                }
                h_diag = ys / dot(&y, &y);
                pairs.push_back((s, y, 1.0 / ys));
            }
            let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut alphas = vec![0.0; pairs.len()];
            for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
                let a = rho * dot(s, &q);
                alphas[k] = a;
                q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            }
            q.iter_mut().for_each(|v| *v *= h_diag);
            for (k, (s, y, rho)) in pairs.iter().enumerate() {
                let b = rho * dot(y, &q);
                let coef = alphas[k] - b;
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += coef * si);
            }
            d = q;
        }
        g_prev.copy_from_slice(&g);
        let f_prev = f;

        t = if iter == 0 {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            (1.0f64).min(1.0 / l1)
        } else {
            1.0
        };
        let mut gtd = dot(&g, &d);
        if !(gtd < 0.0) && !pairs.is_empty() {
            // stale curvature pairs; restart from steepest descent
            pairs.clear();
            h_diag = 1.0;
            d = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &d);
        }
        if !(gtd < 0.0) {
            return Ok(report(x, f, iter, evals, history, Termination::NotDescent));
        }
        let ls = strong_wolfe(&mut obj, &x, t, &d, f, &g, gtd, cfg)?;
        evals += ls.evals;
        t = ls.t;
        if ls.f <= f {
            x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += t * di);
            f = ls.f;
            g = ls.g;
        } else {
            t = 0.0;
        }
        iter += 1;
        history.push(f);
        on_iter(iter, f);

        if iter >= cfg.max_iter {
            return Ok(report(x, f, iter, evals, history, Termination::MaxIterations));
        }
        if evals >= cfg.max_evals {
            return Ok(report(x, f, iter, evals, history, Termination::MaxEvaluations));
        }
        if max_abs(&g) <= cfg.gtol {
            return Ok(report(x, f, iter, evals, history, Termination::GradientTolerance));
        }
        if max_abs(&d) * t.abs() <= cfg.tolerance_change {
            return Ok(report(x, f, iter, evals, history, Termination::NoProgress));
        }
        if (f_prev - f) / f_prev.abs().max(f.abs()).max(1.0) <= cfg.ftol {
            return Ok(report(x, f, iter, evals, history, Termination::FunctionTolerance));
        }
    }
}
