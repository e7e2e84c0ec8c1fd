//! Maximum-likelihood fitting of the stationary model.
//!
//! The optimizer is BFGS on the negative log-likelihood with analytic
//! gradients, run in log-space for the scale parameters (mu, K0, c) and raw
//! space for (alpha, p) with positivity barriers. Standard errors come from
//! the inverse observed information, with the Hessian obtained by central
//! finite differences of the analytic gradient.

use crate::catalog::Catalog;
use crate::error::EtasError;
use crate::intensity::{log_likelihood, log_likelihood_gradient, EtasParams, PARAM_NAMES};
use crate::optim::{minimize_bfgs, BfgsOptions};
use crate::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which of `[mu, k0, c, alpha, p]` are held fixed at their initial value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixMask {
    #[serde(default)]
    pub mu: bool,
    #[serde(default)]
    pub k0: bool,
    #[serde(default)]
    pub c: bool,
    #[serde(default)]
    pub alpha: bool,
    #[serde(default)]
    pub p: bool,
}

impl FixMask {
    pub fn none() -> FixMask {
        FixMask::default()
    }

    pub fn all() -> FixMask {
        FixMask {
            mu: true,
            k0: true,
            c: true,
            alpha: true,
            p: true,
        }
    }

    /// Fixes the shape parameters (c, alpha, p), leaving the rates
    /// (mu, K0) free — the reference-constrained refit protocol.
    pub fn shape_fixed() -> FixMask {
        FixMask {
            mu: false,
            k0: false,
            c: true,
            alpha: true,
            p: true,
        }
    }

    pub fn as_array(&self) -> [bool; 5] {
        [self.mu, self.k0, self.c, self.alpha, self.p]
    }

    pub fn set(&mut self, name: &str, fixed: bool) -> Result<()> {
        match name {
            "mu" => self.mu = fixed,
            "k0" => self.k0 = fixed,
            "c" => self.c = fixed,
            "alpha" => self.alpha = fixed,
            "p" => self.p = fixed,
            other => {
                return Err(EtasError::invalid(format!("unknown parameter {other:?}")));
            }
        }
        Ok(())
    }

    pub fn n_free(&self) -> usize {
        self.as_array().iter().filter(|&&b| !b).count()
    }
}

/// Options for [`fit_mle`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub fix: FixMask,
    /// Starting point; defaults to mu = N/(2(T-S)), K0 = 0.05, c = 0.01,
    /// alpha = 1, p = 1.1.
    pub init: Option<EtasParams>,
    /// Max-norm gradient tolerance in the scaled (optimizer) coordinates.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fix: FixMask::none(),
            init: None,
            grad_tol: 1e-6,
            max_iters: 500,
        }
    }
}

/// A fitted stationary model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: EtasParams,
    /// Standard errors in `[mu, k0, c, alpha, p]` order; `None` for fixed
    /// parameters or when the observed information is not invertible.
    pub se: [Option<f64>; 5],
    pub loglik: f64,
    pub aic: f64,
    pub n_events: usize,
    pub n_free: usize,
    /// Names of the parameters that were held fixed.
    pub fixed: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Diagnostics: divergence warnings, identifiability trade-off flags.
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<FitResult> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Akaike information criterion.
pub fn aic_of(loglik: f64, n_free: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_free as f64
}

/// `exp(-delta/2)`: relative probability of the model whose AIC (or ABIC)
/// is `delta` larger than the best one.
pub fn relative_probability(delta: f64) -> f64 {
    (-delta / 2.0).exp()
}

pub fn default_init(catalog: &Catalog) -> EtasParams {
    let span = catalog.window_length().max(f64::MIN_POSITIVE);
    EtasParams {
        mu: (catalog.n_in_window() as f64 / (2.0 * span)).max(1e-8),
        k0: 0.05,
        c: 0.01,
        alpha: 1.0,
        p: 1.1,
    }
}

// scale parameters are optimized as logs, shape parameters raw
const LOG_SCALED: [bool; 5] = [true, true, true, false, false];

fn to_internal(raw: &[f64], free: &[usize]) -> Vec<f64> {
    free.iter()
        .map(|&i| if LOG_SCALED[i] { raw[i].ln() } else { raw[i] })
        .collect()
}

fn to_raw(base: &[f64; 5], internal: &[f64], free: &[usize]) -> [f64; 5] {
    let mut out = *base;
    for (k, &i) in free.iter().enumerate() {
        out[i] = if LOG_SCALED[i] {
            internal[k].exp()
        } else {
            internal[k]
        };
    }
    out
}

fn feasible(x: &[f64; 5]) -> bool {
    // log-space coordinates are positive by construction; guard the raw
    // ones plus overflow
    x.iter().all(|v| v.is_finite()) && x[3] >= 0.0 && x[4] > 0.0 && x[0] > 0.0 && x[1] >= 0.0 && x[2] > 0.0
}

/// Fits the free parameters by maximum likelihood.
///
/// The returned log-likelihood is never below the one at the starting
/// point. Non-convergence within the iteration cap is reported through
/// `converged`, not as an error.
pub fn fit_mle(catalog: &Catalog, options: &FitOptions) -> Result<FitResult> {
    if catalog.n_in_window() == 0 {
        return Err(EtasError::invalid("cannot fit an empty catalog"));
    }
    let init = options.init.unwrap_or_else(|| default_init(catalog));
    init.validate()?;
    let mask = options.fix.as_array();
    let free: Vec<usize> = (0..5).filter(|&i| !mask[i]).collect();
    if !options.fix.k0 && init.k0 <= 0.0 {
        return Err(EtasError::InvalidParams(
            "a free K0 needs a positive starting value".into(),
        ));
    }

    let base = init.as_array();
    let mut notes = Vec::new();

    let (params, converged, iterations, grad_norm, loglik) = if free.is_empty() {
        let ll = log_likelihood(&init, catalog)?;
        (init, true, 0, 0.0, ll)
    } else {
        let x0 = to_internal(&base, &free);
        let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
            let raw = to_raw(&base, x, &free);
            if !feasible(&raw) {
                return None;
            }
            let params = EtasParams::from_array(raw);
            let (ll, grad) = log_likelihood_gradient(&params, catalog).ok()?;
            if !ll.is_finite() {
                return None;
            }
            let g = free
                .iter()
                .map(|&i| {
                    let gi = grad[i];
                    -(if LOG_SCALED[i] { gi * raw[i] } else { gi })
                })
                .collect();
            Some((-ll, g))
        };
        let out = minimize_bfgs(
            &x0,
            BfgsOptions {
                grad_tol: options.grad_tol,
                max_iters: options.max_iters,
            },
            objective,
        )?;
        let raw = to_raw(&base, &out.x, &free);
        (
            EtasParams::from_array(raw),
            out.converged,
            out.iterations,
            out.grad_norm,
            -out.value,
        )
    };

    if !converged {
        notes.push(format!(
            "optimizer hit the iteration cap ({} iterations, grad max-norm {:.2e})",
            iterations, grad_norm
        ));
    }
    divergence_notes(&params, &free, &mut notes);

    let se = standard_errors(catalog, &params, &free, &mut notes)?;
    if let (false, Some(se_a)) = (options.fix.alpha, se[3]) {
        if se_a > params.alpha {
            notes.push(format!(
                "alpha SE ({se_a:.3e}) exceeds the estimate ({:.3e}); \
                 narrow magnitude range trades alpha off against K0",
                params.alpha
            ));
        }
    }

    let n_free = free.len();
    Ok(FitResult {
        params,
        se,
        loglik,
        aic: aic_of(loglik, n_free),
        n_events: catalog.n_in_window(),
        n_free,
        fixed: (0..5)
            .filter(|&i| mask[i])
            .map(|i| PARAM_NAMES[i].to_string())
            .collect(),
        converged,
        iterations,
        grad_norm,
        notes,
    })
}

fn divergence_notes(params: &EtasParams, free: &[usize], notes: &mut Vec<String>) {
    let raw = params.as_array();
    let limits = [1e6, 1e6, 1e3, 50.0, 20.0];
    for &i in free {
        if raw[i].abs() > limits[i] {
            notes.push(format!(
                "{} ran away to {:.3e}; the fit is reported verbatim but is \
                 likely degenerate for this period",
                PARAM_NAMES[i], raw[i]
            ));
        }
    }
}

/// Observed-information standard errors for the free parameters.
///
/// Central finite differences of the analytic gradient give the Hessian;
/// the matrix is symmetrized before inversion. Fixed parameters get `None`,
/// as do all entries when the information matrix is not positive definite
/// (a note records why).
pub fn standard_errors(
    catalog: &Catalog,
    params: &EtasParams,
    free: &[usize],
    notes: &mut Vec<String>,
) -> Result<[Option<f64>; 5]> {
    let mut se = [None; 5];
    if free.is_empty() {
        return Ok(se);
    }
    let raw = params.as_array();
    let k = free.len();
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for (col, &j) in free.iter().enumerate() {
        // keep positive-domain parameters positive when stepping
        let mut h = 1e-4 * raw[j].abs().max(1e-2);
        if LOG_SCALED[j] {
            h = h.min(0.45 * raw[j]);
        }
        let mut plus = raw;
        plus[j] += h;
        let mut minus = raw;
        minus[j] -= h;
        let (_, gp) = log_likelihood_gradient(&EtasParams::from_array(plus), catalog)?;
        let (_, gm) = log_likelihood_gradient(&EtasParams::from_array(minus), catalog)?;
        for (row, &i) in free.iter().enumerate() {
            hess[(row, col)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // observed information = -Hessian of the log-likelihood, symmetrized
    let info = DMatrix::from_fn(k, k, |i, j| -0.5 * (hess[(i, j)] + hess[(j, i)]));
    match info.clone().cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            for (idx, &i) in free.iter().enumerate() {
                let v = cov[(idx, idx)];
                se[i] = (v > 0.0).then(|| v.sqrt());
            }
        }
        None => {
            notes.push(
                "observed information is not positive definite; standard errors unavailable"
                    .into(),
            );
        }
    }
    Ok(se)
}

/// [`fit_mle`] restarted from `restarts` deterministic multiplicative
/// perturbations of the starting point, keeping the best log-likelihood.
pub fn fit_mle_multistart(
    catalog: &Catalog,
    options: &FitOptions,
    restarts: usize,
    seed: u64,
) -> Result<FitResult> {
    let mut best = fit_mle(catalog, options)?;
    let init = options.init.unwrap_or_else(|| default_init(catalog));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut raw = init.as_array();
        let mask = options.fix.as_array();
        for (i, v) in raw.iter_mut().enumerate() {
            if !mask[i] {
                let factor = (rng.random::<f64>() * 2.0 - 1.0).exp(); // in [1/e, e]
                *v = if LOG_SCALED[i] {
                    *v * factor
                } else {
                    (*v * factor).max(1e-6)
                };
            }
        }
        let perturbed = FitOptions {
            init: Some(EtasParams::from_array(raw)),
            ..*options
        };
        match fit_mle(catalog, &perturbed) {
            Ok(fit) if fit.loglik > best.loglik => best = fit,
            _ => {}
        }
    }
    Ok(best)
}
