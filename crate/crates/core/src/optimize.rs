//! Quasi-Newton minimization (BFGS with Armijo backtracking).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Stop once `|f_k - f_{k+1}| ≤ reltol·(|f_k| + reltol)`.
    pub reltol: f64,
    /// Trial step length of the first line search; later iterations start
    /// from a unit step on the scaled inverse Hessian.
    pub initial_step: f64,
    /// Stop once the largest gradient component is below this.
    pub gtol: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            reltol: 1e-8,
            initial_step: 1e-3,
            gtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient at a point. Returns
/// `None` if the value at `x0` is not finite.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &BfgsConfig) -> Option<BfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if n == 0 {
        return Some(BfgsResult {
            x,
            f: fx,
            iterations: 0,
            converged: true,
        });
    }
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= config.gtol {
            converged = true;
            break;
        }
        let mut d = mat_vec(&h, &g, n);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            h = identity(n);
            scaled = false;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        // the short first step says nothing about convergence
        let quasi_newton_step = scaled;
        let mut t = if scaled { 1.0 } else { config.initial_step };
        let (x_new, f_new, g_new) = loop {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + ARMIJO * t * slope && gt.iter().all(|v| v.is_finite()) {
                break (trial, ft, gt);
            }
            t *= 0.5;
            if t < MIN_STEP {
                // no descent possible along d
                return Some(BfgsResult {
                    x,
                    f: fx,
                    iterations,
                    converged: true,
                });
            }
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }

        let done = quasi_newton_step
            && (fx - f_new).abs() <= config.reltol * (fx.abs() + config.reltol);
        x = x_new;
        fx = f_new;
        g = g_new;
        if done {
            converged = true;
            break;
        }
    }

    Some(BfgsResult {
        x,
        f: fx,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(h: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect()
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(sᵀy)`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, n);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
