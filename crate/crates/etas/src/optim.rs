//! Small dense optimizers: BFGS with backtracking line search and a
//! Nelder-Mead simplex. Both minimize; callers negate log-likelihoods.

use crate::error::EtasError;
use crate::Result;

/// Options for [`minimize_bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Max-norm gradient threshold for convergence.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            grad_tol: 1e-6,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Quasi-Newton minimization with the inverse-Hessian BFGS update and an
/// Armijo backtracking line search.
///
/// `fg` returns `None` outside the feasible region, which the line search
/// treats as "too far" and backtracks; the start point must be feasible.
/// Each accepted step strictly decreases the objective, so the final value
/// never exceeds `fg(x0)`.
pub fn minimize_bfgs<F>(x0: &[f64], opts: BfgsOptions, mut fg: F) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut f, mut g) = fg(x0).ok_or_else(|| EtasError::invalid("infeasible start point"))?;
    let mut x = x0.to_vec();
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut iterations = 0;
    let mut converged = max_norm(&g) < opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let mut dir = neg_mat_vec(&h, &g);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) || !slope.is_finite() {
            // fall back to steepest descent and reset curvature
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
            if !(slope < 0.0) {
                break; // gradient is zero or non-finite
            }
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = fg(&xt) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            break; // no acceptable step: treat as converged-in-place
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * max_norm(&s).max(1e-300) * max_norm(&y).max(1e-300) {
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = xt;
        f = ft;
        g = gt;
        converged = max_norm(&g) < opts.grad_tol;
    }

    Ok(BfgsOutcome {
        grad_norm: max_norm(&g),
        x,
        value: f,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn neg_mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| -(0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>())
        .collect()
}

/// h <- (I - rho s y') h (I - rho y s') + rho s s'
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum::<f64>())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

/// Options for [`minimize_simplex`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Stop when the spread of vertex values drops below this.
    pub ftol: f64,
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            ftol: 1e-4,
            max_evals: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead downhill simplex. `init` supplies all n+1 starting vertices;
/// they are ranked by value before the first move, so the outcome does not
/// depend on their order. The objective may return `f64::INFINITY` for
/// infeasible points.
pub fn minimize_simplex<F>(
    init: &[Vec<f64>],
    opts: SimplexOptions,
    mut f: F,
) -> Result<SimplexOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = init
        .first()
        .ok_or_else(|| EtasError::invalid("empty simplex"))?
        .len();
    if init.len() != n + 1 {
        return Err(EtasError::invalid(format!(
            "simplex in dimension {n} needs {} vertices, got {}",
            n + 1,
            init.len()
        )));
    }
    let mut evals = 0;
    let mut verts: Vec<(Vec<f64>, f64)> = init
        .iter()
        .map(|v| {
            evals += 1;
            (v.clone(), f(v))
        })
        .collect();

    let sort = |verts: &mut Vec<(Vec<f64>, f64)>| {
        verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    sort(&mut verts);

    let mut converged = false;
    while evals < opts.max_evals {
        let spread = verts[n].1 - verts[0].1;
        if spread.is_finite() && spread.abs() <= opts.ftol {
            converged = true;
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (v, _) in verts.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = verts[n].clone();
        let at = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = at(1.0); // reflection
        let fr = {
            evals += 1;
            f(&xr)
        };
        if fr < verts[0].1 {
            let xe = at(2.0); // expansion
            let fe = {
                evals += 1;
                f(&xe)
            };
            verts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < verts[n - 1].1 {
            verts[n] = (xr, fr);
        } else {
            // contraction (outside if the reflection helped at all)
            let xc = if fr < worst.1 { at(0.5) } else { at(-0.5) };
            let fc = {
                evals += 1;
                f(&xc)
            };
            if fc < worst.1.min(fr) {
                verts[n] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let best = verts[0].0.clone();
                for (v, fv) in verts.iter_mut().skip(1) {
                    for (x, b) in v.iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    evals += 1;
                    *fv = f(v);
                }
            }
        }
        sort(&mut verts);
    }

    Ok(SimplexOutcome {
        x: verts[0].0.clone(),
        value: verts[0].1,
        evals,
        converged,
    })
}

/// Builds an axis-aligned simplex around `center` with per-coordinate
/// steps.
pub fn axis_simplex(center: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let mut verts = vec![center.to_vec()];
    for i in 0..center.len() {
        let mut v = center.to_vec();
        v[i] += steps[i];
        verts.push(v);
    }
    verts
}
