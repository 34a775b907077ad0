//! Limited-memory quasi-Newton minimizer with Armijo backtracking.
//!
//! Used to fit the one-step velocity network. When the line search cannot
//! make progress along the quasi-Newton direction, the iteration falls back
//! to a plain gradient-descent step and drops its curvature memory.

/// Objective: value and gradient at a point.
pub trait Objective {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for F {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Maximum backtracking steps per line search.
    pub max_backtracks: usize,
    /// Step length for the gradient-descent fallback.
    pub fallback_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 7,
            max_iters: 200,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 30,
            fallback_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub final_value: f64,
    pub iters: usize,
    /// Iterations that had to fall back to a plain gradient step.
    pub fallback_steps: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `obj` starting from `x`, in place. Returns the final value and
/// iteration statistics.
pub fn minimize<O: Objective>(obj: &O, x: &mut Vec<f64>, opts: &LbfgsOptions) -> LbfgsReport {
    let n = x.len();
    let (mut f, mut g) = obj.eval(x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut fallback_steps = 0;
    let mut iters = 0;
    let mut stalled = 0;

    for _ in 0..opts.max_iters {
        iters += 1;
        let g_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_norm < opts.grad_tol {
            break;
        }

        // two-loop recursion
        let mut dir = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let a = rho * dot(&s_hist[i], &dir);
            alphas[i] = a;
            for j in 0..n {
                dir[j] -= a * y_hist[i][j];
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let b = rho * dot(&y_hist[i], &dir);
            for j in 0..n {
                dir[j] += s_hist[i][j] * (alphas[i] - b);
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }

        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // not a descent direction; discard memory and use steepest descent
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (f_trial, g_trial) = obj.eval(&trial);
            if f_trial.is_finite() && f_trial <= f + opts.c1 * step * slope {
                accepted = Some((trial, f_trial, g_trial));
                break;
            }
            step *= opts.shrink;
        }

        let (x_new, f_new, g_new) = match accepted {
            Some(t) => t,
            None => {
                // fallback: backtracking steepest descent accepting any
                // decrease, with the curvature memory dropped
                fallback_steps += 1;
                s_hist.clear();
                y_hist.clear();
                let g_scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
                let mut step = opts.fallback_step.max(1.0) / g_scale;
                let mut found = None;
                for _ in 0..60 {
                    let trial: Vec<f64> =
                        x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
                    let (f_trial, g_trial) = obj.eval(&trial);
                    if f_trial.is_finite() && f_trial < f {
                        found = Some((trial, f_trial, g_trial));
                        break;
                    }
                    step *= 0.5;
                }
                match found {
                    Some(t) => t,
                    None => break, // numerically stationary
                }
            }
        };

        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let s_norm = dot(&s, &s).sqrt();
        let y_norm = dot(&y, &y).sqrt();
        if dot(&s, &y) > 1e-10 * s_norm * y_norm {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        } else {
            // curvature condition failed (Armijo alone does not guarantee
            // it): restart rather than iterate on a stale history
            s_hist.clear();
            y_hist.clear();
        }

        let rel_drop = (f - f_new) / f.abs().max(1e-12);
        *x = x_new;
        g = g_new;
        f = f_new;
        // a single near-flat step is common inside curved valleys; stop only
        // after several in a row
        if rel_drop < opts.f_tol {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    LbfgsReport {
        final_value: f,
        iters,
        fallback_steps,
    }
}
