//! Dense BFGS with Armijo backtracking.
//!
//! A stalled line search first resets the inverse-Hessian approximation; if
//! steepest descent also stalls and the fallback is enabled, the analytic
//! gradient is replaced by central differences for the remaining iterations.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_line_search: usize,
    pub armijo: f64,
    pub fd_fallback: bool,
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 200,
            max_line_search: 40,
            armijo: 1e-4,
            fd_fallback: true,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub used_finite_differences: bool,
}

/// Minimizes `f(x, need_gradient)`, which returns the value and, when asked,
/// the gradient (otherwise the vector may be empty). The returned value never
/// exceeds the value at `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x, true)?;
    if !fx.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    if n == 0 {
        return Ok(BfgsResult {
            x,
            value: fx,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
            used_finite_differences: false,
        });
    }
    let mut use_fd = false;
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = matvec_neg(&h, &g);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            h_is_identity = true;
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        // steepest-descent steps are capped at unit length
        let mut alpha = if h_is_identity { (1.0 / norm(&d)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..opts.max_line_search {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = f(&xt, false)?.0;
            if ft.is_finite() && ft <= fx + opts.armijo * alpha * slope {
                accepted = Some((xt, ft));
                break;
            }
            alpha *= 0.5;
        }

        let Some((xn, fnew)) = accepted else {
            if !h_is_identity {
                h = identity(n);
                h_is_identity = true;
                continue;
            }
            if opts.fd_fallback && !use_fd {
                use_fd = true;
                g = central_difference(&mut f, &x, opts.fd_step)?;
                continue;
            }
            break;
        };
        let gn = if use_fd {
            central_difference(&mut f, &xn, opts.fd_step)?
        } else {
            f(&xn, true)?.1
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if h_is_identity {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            h_is_identity = false;
        }
        x = xn;
        fx = fnew;
        g = gn;
    }

    let grad_norm = norm(&g);
    Ok(BfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: converged || grad_norm <= opts.grad_tol,
        used_finite_differences: use_fd,
    })
}

/// Central-difference gradient of the value part of `f`.
pub fn central_difference<F>(f: &mut F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        xt[i] = x[i] + h;
        let fp = f(&xt, false)?.0;
        xt[i] = x[i] - h;
        let fm = f(&xt, false)?.0;
        xt[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r
        })
        .collect()
}

fn matvec_neg(h: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    h.iter().map(|row| -dot(row, g)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], _: bool) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn minimizes_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &BfgsOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_converges_exactly() {
        let q = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
            let f = 0.5 * (3.0 * x[0] * x[0] + x[1] * x[1] + 10.0 * x[2] * x[2]) - x[0];
            Ok((f, vec![3.0 * x[0] - 1.0, x[1], 10.0 * x[2]]))
        };
        let opts = BfgsOptions {
            grad_tol: 1e-10,
            ..BfgsOptions::default()
        };
        let r = minimize(q, &[1.0, 1.0, 1.0], &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0 / 3.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_falls_back_to_finite_differences() {
        let f = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
            Ok(((x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2), vec![-(x[0] - 2.0), -(x[1] + 1.0)]))
        };
        let r = minimize(f, &[0.0, 0.0], &BfgsOptions::default()).unwrap();
        assert!(r.used_finite_differences);
        assert!((r.x[0] - 2.0).abs() < 1e-5 && (r.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn value_never_increases() {
        let f = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> { Ok((x[0].abs(), vec![x[0].signum()])) };
        let r = minimize(f, &[0.7], &BfgsOptions { max_iter: 30, ..Default::default() }).unwrap();
        assert!(r.value <= 0.7);
    }
}
