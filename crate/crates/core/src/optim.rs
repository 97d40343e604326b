//! Box-constrained limited-memory BFGS used for marginal-likelihood fitting.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when `‖projected gradient‖_∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when one iteration decreases `f` by less than `f_tol · max(1, |f|)`.
    pub f_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 10,
            grad_tol: 1e-5,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Zeroes gradient components that point out of the box at active bounds.
fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// `f` returns `None` where the objective is undefined (e.g. a failed
/// factorization); the line search treats such points as infinitely bad.
/// Returns `None` only if the starting point itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], config: &LbfgsConfig) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x).filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))?;
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = pg.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if pg_norm <= config.grad_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;

        // two-loop recursion on the free coordinates
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q
            .iter()
            .zip(&pg)
            .map(|(qi, pgi)| if *pgi == 0.0 { 0.0 } else { -qi })
            .collect();
        if dot(&dir, &pg) >= 0.0 {
            history.clear();
            dir = pg.iter().map(|v| -v).collect();
        }
        let mut step = if history.is_empty() {
            (1.0 / dir.iter().fold(0.0_f64, |a, v| a.max(v.abs()))).min(1.0)
        } else {
            1.0
        };

        // projected backtracking with quadratic interpolation
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lower, upper);
            let delta: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let slope = dot(&g, &delta);
            if slope >= 0.0 {
                step *= 0.5;
                continue;
            }
            evaluations += 1;
            match f(&trial) {
                Some((ft, gt)) if ft.is_finite() && gt.iter().all(|c| c.is_finite()) => {
                    if ft <= fx + 1e-4 * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                    let denom = 2.0 * (ft - fx - slope);
                    let shrink = if denom > 0.0 {
                        (-slope / denom).clamp(0.1, 0.5)
                    } else {
                        0.5
                    };
                    step *= shrink;
                }
                _ => step *= 0.2,
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // no descent at working precision
            converged = pg_norm <= 1e2 * config.grad_tol * fx.abs().max(1.0);
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= config.f_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    Some(Minimum {
        x,
        f: fx,
        grad: g,
        iterations,
        evaluations,
        converged,
    })
}
