//! Empirical Bayes selection of the smoothing hyperparameters.
//!
//! The roughness penalty of [`crate::nonstationary`] is read as a Gaussian
//! prior. With interval weights `w_i` and gaps `d_i`, the penalty is the
//! quadratic form `Phi_w(q) = q' S_w q` with the tridiagonal structure
//! matrix
//!
//! ```text
//! S_w[i][i]   = w_{i-1}/d_{i-1} + w_i/d_i      (terms that exist)
//! S_w[i][i+1] = S_w[i+1][i] = -w_i/d_i
//! ```
//!
//! `S_w` annihilates constants, so the prior `exp(-Phi_w)` is proper only
//! conditioned on the boundary coefficient at T, which therefore joins the
//! weights as a hyperparameter. Deleting that row and column gives the
//! positive-definite `S_w^c`, and the conditional prior density is exactly
//!
//! ```text
//! prior(q | q_T) = sqrt(det S_w^c / pi^M) exp(-Phi_w(q)),   M free coeffs.
//! ```
//!
//! The marginal likelihood of the hyperparameters integrates the factors
//! out; a Laplace approximation at the penalized optimum `q^` gives, per
//! factor block,
//!
//! ```text
//! log Psi = Q(q^) + sum_blocks [ (log det S_w^c - log det H)/2 + M ln2/2 ]
//! ```
//!
//! where `H` is that block of the negative Hessian of Q (likelihood
//! curvature plus `2 S_w^c`). The approximation is exact whenever the
//! log-likelihood is at most quadratic in the coefficients, and tends to
//! the plain likelihood of the boundary-flat model as the weights grow.
//!
//! Hyperparameters are chosen by maximizing `log Psi` with a Nelder-Mead
//! search in log space, and models are ranked by
//! `ABIC = -2 log Psi + 2 (number of hyperparameters)`, reported against a
//! heavily smoothed baseline of the same restriction and domain.

use crate::error::EtasError;
use crate::nonstationary::{
    map_newton, AnomalyModel, MapOutcome, NsModelSpec, NsWorkspace, Restriction, SplineBasis,
    Weights,
};
use crate::optim::{axis_simplex, minimize_simplex, SimplexOptions};
use crate::{Catalog, EtasParams, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Full penalty structure matrix `S_w` on all coefficients (singular:
/// constants are free).
pub(crate) fn penalty_matrix(gaps: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let n = gaps.len() + 1;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..gaps.len() {
        let wg = weights[i] / gaps[i];
        m[(i, i)] += wg;
        m[(i + 1, i + 1)] += wg;
        m[(i, i + 1)] -= wg;
        m[(i + 1, i)] -= wg;
    }
    m
}

/// `S_w` for one factor of a basis, with the change-point interval
/// override applied.
pub fn prior_penalty_matrix(
    basis: &SplineBasis,
    w: f64,
    changepoint: Option<f64>,
    cp_weight: f64,
) -> DMatrix<f64> {
    let weights = crate::nonstationary::interval_weights(basis, w, changepoint, cp_weight);
    penalty_matrix(basis.penalty_gaps(), &weights)
}

/// Deletes the last row and column (the boundary coefficient at T),
/// leaving the positive-definite conditional structure matrix.
pub(crate) fn conditional_matrix(full: &DMatrix<f64>) -> DMatrix<f64> {
    let n = full.nrows() - 1;
    full.view((0, 0), (n, n)).into_owned()
}

fn log_det(matrix: &DMatrix<f64>, context: &str) -> Result<f64> {
    let chol = matrix.clone().cholesky().ok_or_else(|| EtasError::Factorization {
        context: context.to_string(),
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Laplace correction for one factor block.
fn block_correction(logdet_sigma_c: f64, logdet_h: f64, m: usize) -> f64 {
    0.5 * (logdet_sigma_c - logdet_h) + 0.5 * m as f64 * std::f64::consts::LN_2
}

struct MarginalEval {
    log_psi: f64,
    sol: crate::nonstationary::MapSolution,
}

fn marginal_at(
    ws: &NsWorkspace,
    weights: Weights,
    cp_weight: f64,
    boundary: (f64, f64),
    grad_tol: f64,
    max_iters: usize,
    warm: Option<&[f64]>,
) -> Result<MarginalEval> {
    let (w_mu, w_k) = ws.penalty_weights(weights, cp_weight);
    let sol = map_newton(ws, &w_mu, &w_k, boundary, grad_tol, max_iters, warm)?;
    let m = ws.m_free();
    let gaps = ws.basis.penalty_gaps();
    let mut log_psi = sol.value;
    match ws.restriction {
        Restriction::FixQk | Restriction::Tied => {
            let sigma_c = conditional_matrix(&penalty_matrix(gaps, &w_mu));
            log_psi += block_correction(
                log_det(&sigma_c, "prior structure matrix")?,
                log_det(&sol.neg_hess, "posterior curvature")?,
                m,
            );
        }
        Restriction::Free => {
            for (offset, wv) in [(0usize, &w_mu), (m, &w_k)] {
                let sigma_c = conditional_matrix(&penalty_matrix(gaps, wv));
                let h = sol.neg_hess.view((offset, offset), (m, m)).into_owned();
                log_psi += block_correction(
                    log_det(&sigma_c, "prior structure matrix")?,
                    log_det(&h, "posterior curvature")?,
                    m,
                );
            }
        }
    }
    if !log_psi.is_finite() {
        return Err(EtasError::non_finite("log marginal likelihood"));
    }
    Ok(MarginalEval { log_psi, sol })
}

/// Log marginal likelihood of fixed hyperparameters (weights and boundary
/// factors) for one model configuration.
pub fn log_marginal(
    catalog: &Catalog,
    reference: &EtasParams,
    spec: &NsModelSpec,
    weights: Weights,
    boundary: (f64, f64),
    options: &BayesOptions,
) -> Result<f64> {
    let ws = NsWorkspace::build(catalog, reference, spec)?;
    Ok(marginal_at(
        &ws,
        weights,
        options.changepoint_weight,
        boundary,
        options.grad_tol,
        options.max_map_iters,
        None,
    )?
    .log_psi)
}

/// Options for [`bayes_fit`].
#[derive(Debug, Clone, Copy)]
pub struct BayesOptions {
    pub changepoint_weight: f64,
    pub grad_tol: f64,
    pub max_map_iters: usize,
    /// Nelder-Mead value-spread tolerance on `log Psi`.
    pub ftol: f64,
    pub max_evals: usize,
    /// Additional perturbed Nelder-Mead runs.
    pub restarts: usize,
    /// Count every hyperparameter slot (weights and boundaries for both
    /// factors) instead of only the active ones.
    pub count_all_hyperparams: bool,
    /// Compute pointwise error bounds at the knots from the joint inverse
    /// Hessian.
    pub compute_bounds: bool,
}

impl Default for BayesOptions {
    fn default() -> Self {
        BayesOptions {
            changepoint_weight: 1e-5,
            grad_tol: 1e-6,
            max_map_iters: 1000,
            ftol: 1e-4,
            max_evals: 300,
            restarts: 1,
            count_all_hyperparams: false,
            compute_bounds: true,
        }
    }
}

/// Number of hyperparameters charged in the ABIC penalty.
pub fn hyperparam_count(restriction: Restriction, count_all: bool) -> usize {
    match (restriction, count_all) {
        (Restriction::Free, false) => 4,
        (_, false) => 2,
        (Restriction::Free, true) => 8,
        (_, true) => 4,
    }
}

/// An empirical-Bayes fit: selected hyperparameters, the factor estimate
/// under them, and ABIC bookkeeping against the heavy-smoothing baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesFit {
    pub spec: NsModelSpec,
    pub weights: Weights,
    pub boundary: (f64, f64),
    pub log_marginal: f64,
    pub n_hyperparams: usize,
    pub abic: f64,
    /// Same restriction and domain, no change point, weights pinned at
    /// 1e6 with only the boundary optimized.
    pub baseline_log_marginal: f64,
    pub baseline_abic: f64,
    /// `abic - baseline_abic`; negative favors the nonstationary model.
    pub delta_abic: f64,
    pub outcome: MapOutcome,
    /// Pointwise standard error of `q_mu` at each knot (zero at the fixed
    /// boundary knot).
    pub bounds_mu: Option<Vec<f64>>,
    pub bounds_k: Option<Vec<f64>>,
    pub evaluations: usize,
    pub converged: bool,
    pub notes: Vec<String>,
}

impl BayesFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<BayesFit> {
        Ok(serde_json::from_str(text)?)
    }
}

const BASELINE_WEIGHT: f64 = 1e6;

fn unpack_hyper(z: &[f64], restriction: Restriction) -> (Weights, (f64, f64)) {
    match restriction {
        Restriction::FixQk | Restriction::Tied => {
            let w = z[0].exp();
            let b = z[1].exp();
            (Weights { w_mu: w, w_k: w }, (b, b))
        }
        Restriction::Free => (
            Weights {
                w_mu: z[0].exp(),
                w_k: z[1].exp(),
            },
            (z[2].exp(), z[3].exp()),
        ),
    }
}

/// Runs one Nelder-Mead search (plus perturbed restarts) and returns the
/// best vertex.
fn search(
    center: &[f64],
    steps: &[f64],
    restarts: usize,
    opts: SimplexOptions,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let mut best = minimize_simplex(&axis_simplex(center, steps), opts, &mut *f)?;
    let mut evals = best.evals;
    for r in 0..restarts {
        let shift = 2.0 + r as f64;
        let center2: Vec<f64> = best
            .x
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { v + shift } else { v - 0.3 })
            .collect();
        let steps2: Vec<f64> = steps.iter().map(|s| 0.5 * s).collect();
        let run = minimize_simplex(&axis_simplex(&center2, &steps2), opts, &mut *f)?;
        evals += run.evals;
        if run.value < best.value {
            best = run;
        }
    }
    let converged = best.converged;
    Ok((best.x, best.value, evals, converged))
}

/// Empirical-Bayes fit of one model configuration: optimizes the smoothing
/// weights and boundary factors by maximum marginal likelihood, then
/// reports the factor estimate, ABIC, and error bounds.
pub fn bayes_fit(
    catalog: &Catalog,
    reference: &EtasParams,
    spec: &NsModelSpec,
    options: &BayesOptions,
) -> Result<BayesFit> {
    let ws = NsWorkspace::build(catalog, reference, spec)?;
    let mut notes = Vec::new();

    let mut warm: Option<Vec<f64>> = None;
    let mut objective = |z: &[f64]| -> f64 {
        if z.iter().any(|v| !v.is_finite() || v.abs() > 34.0) {
            return f64::INFINITY;
        }
        let (weights, boundary) = unpack_hyper(z, spec.restriction);
        match marginal_at(
            &ws,
            weights,
            options.changepoint_weight,
            boundary,
            options.grad_tol,
            options.max_map_iters,
            warm.as_deref(),
        ) {
            Ok(ev) => {
                warm = Some(ev.sol.x);
                -ev.log_psi
            }
            Err(_) => f64::INFINITY,
        }
    };

    let (center, steps): (Vec<f64>, Vec<f64>) = match spec.restriction {
        Restriction::FixQk | Restriction::Tied => (vec![0.0, 0.0], vec![5.0, 0.8]),
        Restriction::Free => (vec![0.0, 0.0, 0.0, 0.0], vec![5.0, 5.0, 0.8, 0.8]),
    };
    let nm_opts = SimplexOptions {
        ftol: options.ftol,
        max_evals: options.max_evals,
    };
    let (z_best, neg_best, evaluations, nm_converged) =
        search(&center, &steps, options.restarts, nm_opts, &mut objective)?;
    if !neg_best.is_finite() {
        return Err(EtasError::non_finite(
            "marginal likelihood was infeasible everywhere the search looked",
        ));
    }
    if !nm_converged {
        notes.push("hyperparameter search hit its evaluation budget".to_string());
    }

    let (weights, boundary) = unpack_hyper(&z_best, spec.restriction);
    let selected = marginal_at(
        &ws,
        weights,
        options.changepoint_weight,
        boundary,
        options.grad_tol,
        options.max_map_iters,
        warm.as_deref(),
    )?;
    if !selected.sol.converged {
        notes.push("factor estimation stopped before reaching its gradient tolerance".to_string());
    }
    if selected.sol.n_clamped > 0 {
        notes.push(format!(
            "{} coefficients sit on the nonnegativity boundary",
            selected.sol.n_clamped
        ));
    }

    // heavy-smoothing baseline: same restriction and domain, no change
    // point, only the boundary level is optimized
    let baseline_spec = NsModelSpec {
        changepoint: None,
        ..*spec
    };
    let base_ws = NsWorkspace::build(catalog, reference, &baseline_spec)?;
    let mut base_warm: Option<Vec<f64>> = None;
    let mut base_objective = |z: &[f64]| -> f64 {
        if z.iter().any(|v| !v.is_finite() || v.abs() > 34.0) {
            return f64::INFINITY;
        }
        let boundary = match spec.restriction {
            Restriction::Free => (z[0].exp(), z[1].exp()),
            _ => (z[0].exp(), z[0].exp()),
        };
        let weights = Weights {
            w_mu: BASELINE_WEIGHT,
            w_k: BASELINE_WEIGHT,
        };
        match marginal_at(
            &base_ws,
            weights,
            options.changepoint_weight,
            boundary,
            options.grad_tol,
            options.max_map_iters,
            base_warm.as_deref(),
        ) {
            Ok(ev) => {
                base_warm = Some(ev.sol.x);
                -ev.log_psi
            }
            Err(_) => f64::INFINITY,
        }
    };
    let (base_center, base_steps): (Vec<f64>, Vec<f64>) = match spec.restriction {
        Restriction::Free => (vec![0.0, 0.0], vec![0.8, 0.8]),
        _ => (vec![0.0], vec![0.8]),
    };
    let (_, base_neg, base_evals, _) = search(
        &base_center,
        &base_steps,
        options.restarts.min(1),
        nm_opts,
        &mut base_objective,
    )?;
    let baseline_log_marginal = -base_neg;

    let n_hyperparams = hyperparam_count(spec.restriction, options.count_all_hyperparams);
    let abic = -2.0 * selected.log_psi + 2.0 * n_hyperparams as f64;
    let baseline_abic = -2.0 * baseline_log_marginal + 2.0 * n_hyperparams as f64;

    let (bounds_mu, bounds_k) = if options.compute_bounds {
        factor_bounds(&ws, &selected.sol.neg_hess)?
    } else {
        (None, None)
    };

    let (q_mu, q_k) = ws.unpack(&selected.sol.x, boundary);
    let outcome = MapOutcome {
        model: AnomalyModel {
            basis: ws.basis.clone(),
            q_mu,
            q_k,
            restriction: spec.restriction,
            changepoint: spec.changepoint,
            reference: *reference,
        },
        penalized: selected.sol.value,
        loglik: selected.sol.loglik,
        iterations: selected.sol.iterations,
        converged: selected.sol.converged,
        n_clamped: selected.sol.n_clamped,
    };

    Ok(BayesFit {
        spec: *spec,
        weights,
        boundary,
        log_marginal: selected.log_psi,
        n_hyperparams,
        abic,
        baseline_log_marginal,
        baseline_abic,
        delta_abic: abic - baseline_abic,
        outcome,
        bounds_mu,
        bounds_k,
        evaluations: evaluations + base_evals,
        converged: nm_converged && selected.sol.converged,
        notes,
    })
}

/// Pointwise standard error of a factor at time `t` from the inverse joint
/// curvature: `sqrt(F' H^{-1} F)` with F the tent values at `t`. The fixed
/// boundary coefficient carries no uncertainty.
pub(crate) fn bound_at(basis: &SplineBasis, inv: &DMatrix<f64>, offset: usize, t: f64) -> f64 {
    let m = basis.n_coeffs() - 1;
    let i = basis.interval_of(t);
    let mut pairs: [(usize, f64); 2] = [(0, 0.0); 2];
    let mut n_pairs = 0;
    for idx in [i, i + 1] {
        if idx < m {
            let v = basis.tent(idx, t);
            if v != 0.0 {
                pairs[n_pairs] = (offset + idx, v);
                n_pairs += 1;
            }
        }
    }
    let mut c = 0.0;
    for &(a, va) in &pairs[..n_pairs] {
        for &(b, vb) in &pairs[..n_pairs] {
            c += va * vb * inv[(a, b)];
        }
    }
    c.max(0.0).sqrt()
}

fn factor_bounds(
    ws: &NsWorkspace,
    neg_hess: &DMatrix<f64>,
) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
    let inv = neg_hess
        .clone()
        .cholesky()
        .ok_or_else(|| EtasError::Factorization {
            context: "posterior curvature for error bounds".into(),
        })?
        .inverse();
    let m = ws.m_free();
    let knots = ws.basis.knots();
    let at = |offset: usize| -> Vec<f64> {
        knots
            .iter()
            .map(|&t| bound_at(&ws.basis, &inv, offset, t))
            .collect()
    };
    Ok(match ws.restriction {
        Restriction::FixQk => (Some(at(0)), None),
        Restriction::Tied => {
            let b = at(0);
            (Some(b.clone()), Some(b))
        }
        Restriction::Free => (Some(at(0)), Some(at(m))),
    })
}
