//! Stationary ETAS conditional intensity, likelihood, analytic gradient,
//! and the residual time transformation.
//!
//! ```text
//! lambda(t | H_t) = mu + sum_{t_i < t} K0 * e_i / (t - t_i + c)^p,
//! e_i = exp(alpha * (M_i - Mz))
//! ```
//!
//! The log-likelihood over the study window [S, T] is
//!
//! ```text
//! log L = sum_{S <= t_k <= T} log lambda(t_k) - integral_S^T lambda(t) dt
//! ```
//!
//! where history events (t_i < S) enter the triggering sums and contribute
//! their integral over [S, T] but are not counted in the event sum. The
//! integral has a closed form through the Omori-Utsu primitive
//! `I(d) = ((d+c)^(1-p) - c^(1-p)) / (1-p)` (log form at p = 1), which we
//! evaluate as `c^s * expm1(s * log1p(d/c)) / s` with `s = 1 - p` so the
//! p -> 1 limit is smooth to machine precision.

use crate::catalog::Catalog;
use crate::error::EtasError;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Parameters of the stationary model. Rates are per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    /// Background rate (events/day), > 0.
    pub mu: f64,
    /// Aftershock productivity, >= 0.
    pub k0: f64,
    /// Omori-Utsu time offset (days), > 0.
    pub c: f64,
    /// Magnitude sensitivity, >= 0.
    pub alpha: f64,
    /// Omori-Utsu decay exponent, > 0.
    pub p: f64,
}

impl EtasParams {
    pub fn new(mu: f64, k0: f64, c: f64, alpha: f64, p: f64) -> Result<EtasParams> {
        let params = EtasParams { mu, k0, c, alpha, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.k0 >= 0.0
            && self.c > 0.0
            && self.alpha >= 0.0
            && self.p > 0.0
            && [self.mu, self.k0, self.c, self.alpha, self.p]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(EtasError::InvalidParams(format!(
                "require mu > 0, k0 >= 0, c > 0, alpha >= 0, p > 0, all finite; got {self:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.mu, self.k0, self.c, self.alpha, self.p]
    }

    pub fn from_array(x: [f64; 5]) -> EtasParams {
        EtasParams {
            mu: x[0],
            k0: x[1],
            c: x[2],
            alpha: x[3],
            p: x[4],
        }
    }
}

/// Parameter names in the fixed `[mu, k0, c, alpha, p]` order used by
/// gradient arrays and fix masks.
pub const PARAM_NAMES: [&str; 5] = ["mu", "k0", "c", "alpha", "p"];

/// The modified Omori-Utsu aftershock rate `K / (t + c)^p` at lag `t`.
pub fn omori_utsu(k: f64, c: f64, p: f64, t: f64) -> f64 {
    k * (t + c).powf(-p)
}

/// Compensated (Kahan) accumulator. The triggering sums add terms of very
/// different sizes; we always compensate and, where it matters, add in
/// descending-contribution order so large catalogs stay accurate.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// `integral_0^d (u + c)^(-p) du`, smooth in p across p = 1.
pub(crate) fn omori_primitive(c: f64, p: f64, d: f64) -> f64 {
    debug_assert!(d >= 0.0 && c > 0.0);
    let s = 1.0 - p;
    let r = (d / c).ln_1p(); // log((d + c) / c), stable for d << c
    if s.abs() < 1e-8 {
        r
    } else {
        c.powf(s) * f64::exp_m1(s * r) / s
    }
}

/// phi(x) = (x e^x - expm1(x)) / x^2 = 1/2 + x/3 + x^2/8 + ..., the
/// cancellation-free core of d/ds [expm1(s r) / s].
fn phi(x: f64) -> f64 {
    if x.abs() > 1e-3 {
        (x * x.exp() - f64::exp_m1(x)) / (x * x)
    } else {
        0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0)))
    }
}

/// Partial derivatives (d/dc, d/dp) of [`omori_primitive`].
pub(crate) fn omori_primitive_grad(c: f64, p: f64, d: f64) -> (f64, f64) {
    let s = 1.0 - p;
    let r = (d / c).ln_1p();
    let dc = (-p * (d + c).ln()).exp() - (-p * c.ln()).exp(); // (d+c)^-p - c^-p
    // dI/dp = -dI/ds with I = c^s expm1(s r)/s:
    // dI/ds = ln(c) I + c^s r^2 phi(s r)
    let i = omori_primitive(c, p, d);
    let dp = -(c.ln() * i + c.powf(s) * r * r * phi(s * r));
    (dc, dp)
}

/// exp(alpha * (M_i - Mz)) for every event.
fn magnitude_factors(catalog: &Catalog, alpha: f64) -> Vec<f64> {
    let mz = catalog.threshold();
    catalog
        .all_events()
        .iter()
        .map(|e| (alpha * (e.magnitude - mz)).exp())
        .collect()
}

/// Conditional intensity at `t` given the catalog's events strictly before
/// `t` (history events included).
pub fn conditional_intensity(params: &EtasParams, catalog: &Catalog, t: f64) -> f64 {
    let mz = catalog.threshold();
    let mut trig = KahanSum::default();
    // reverse order: most recent events contribute most
    for e in catalog.all_events().iter().rev() {
        if e.time < t {
            let w = (params.alpha * (e.magnitude - mz)).exp();
            trig.add(w * (t - e.time + params.c).powf(-params.p));
        }
    }
    params.mu + params.k0 * trig.value()
}

/// Integrated intensity `Lambda(t) = integral_S^t lambda(u) du` for
/// `t` inside the study window.
pub fn cumulative_intensity(params: &EtasParams, catalog: &Catalog, t: f64) -> Result<f64> {
    let s = catalog.window_start();
    if !(s..=catalog.window_end()).contains(&t) {
        return Err(EtasError::invalid(format!(
            "cumulative intensity requested at t = {t} outside window [{s}, {}]",
            catalog.window_end()
        )));
    }
    let factors = magnitude_factors(catalog, params.alpha);
    Ok(cumulative_inner(params, catalog, &factors, t))
}

fn cumulative_inner(params: &EtasParams, catalog: &Catalog, factors: &[f64], t: f64) -> f64 {
    let s = catalog.window_start();
    let mut trig = KahanSum::default();
    for (e, &w) in catalog.all_events().iter().zip(factors) {
        if e.time >= t {
            break; // sorted; later events contribute nothing
        }
        let upper = omori_primitive(params.c, params.p, t - e.time);
        let lower = if e.time < s {
            omori_primitive(params.c, params.p, s - e.time)
        } else {
            0.0
        };
        trig.add(w * (upper - lower));
    }
    params.mu * (t - s) + params.k0 * trig.value()
}

/// Log-likelihood of the in-window events under `params`.
pub fn log_likelihood(params: &EtasParams, catalog: &Catalog) -> Result<f64> {
    let (ll, _) = log_likelihood_impl(params, catalog, false)?;
    Ok(ll)
}

/// Log-likelihood and its gradient with respect to
/// `[mu, k0, c, alpha, p]`, computed analytically in one pass.
pub fn log_likelihood_gradient(params: &EtasParams, catalog: &Catalog) -> Result<(f64, [f64; 5])> {
    let (ll, grad) = log_likelihood_impl(params, catalog, true)?;
    Ok((ll, grad.unwrap()))
}

fn log_likelihood_impl(
    params: &EtasParams,
    catalog: &Catalog,
    want_grad: bool,
) -> Result<(f64, Option<[f64; 5]>)> {
    let &EtasParams { mu, k0, c, alpha, p } = params;
    let mz = catalog.threshold();
    let s = catalog.window_start();
    let t_end = catalog.window_end();
    let events = catalog.all_events();
    let n_hist = catalog.history().len();

    let factors = magnitude_factors(catalog, alpha);

    let mut log_sum = KahanSum::default();
    // gradient accumulators for the log term
    let mut g_log = [KahanSum::default(); 5];

    for k in n_hist..events.len() {
        let tk = events[k].time;
        // triggering sums at t_k (strictly earlier events), nearest first
        let mut a = KahanSum::default(); // sum e_j psi
        let mut dc = KahanSum::default(); // sum e_j dpsi/dc
        let mut dp = KahanSum::default(); // sum e_j dpsi/dp
        let mut dm = KahanSum::default(); // sum (M_j - Mz) e_j psi
        for j in (0..k).rev() {
            let dt = tk - events[j].time;
            if dt <= 0.0 {
                continue; // tied occurrence times do not see each other
            }
            let lndc = (dt + c).ln();
            let psi = (-p * lndc).exp();
            let w = factors[j];
            a.add(w * psi);
            if want_grad {
                dc.add(w * (-p) * psi / (dt + c));
                dp.add(w * (-lndc) * psi);
                dm.add((events[j].magnitude - mz) * w * psi);
            }
        }
        let lambda = mu + k0 * a.value();
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(EtasError::non_finite(format!(
                "conditional intensity at event {k} (lambda = {lambda})"
            )));
        }
        log_sum.add(lambda.ln());
        if want_grad {
            g_log[0].add(1.0 / lambda);
            g_log[1].add(a.value() / lambda);
            g_log[2].add(k0 * dc.value() / lambda);
            g_log[3].add(k0 * dm.value() / lambda);
            g_log[4].add(k0 * dp.value() / lambda);
        }
    }

    // integral term: mu (T - S) + K0 sum e_i G_i with
    // G_i = I(T - t_i) - I(max(t_i, S) - t_i)
    let mut gi = KahanSum::default();
    let mut gi_m = KahanSum::default();
    let mut gi_c = KahanSum::default();
    let mut gi_p = KahanSum::default();
    for (e, &w) in events.iter().zip(&factors) {
        let upper = omori_primitive(c, p, t_end - e.time);
        let lower = if e.time < s {
            omori_primitive(c, p, s - e.time)
        } else {
            0.0
        };
        gi.add(w * (upper - lower));
        if want_grad {
            let (uc, up) = omori_primitive_grad(c, p, t_end - e.time);
            let (lc, lp) = if e.time < s {
                omori_primitive_grad(c, p, s - e.time)
            } else {
                (0.0, 0.0)
            };
            gi_c.add(w * (uc - lc));
            gi_p.add(w * (up - lp));
            gi_m.add((e.magnitude - mz) * w * (upper - lower));
        }
    }
    let integral = mu * (t_end - s) + k0 * gi.value();
    let ll = log_sum.value() - integral;
    if !ll.is_finite() {
        return Err(EtasError::non_finite("log-likelihood"));
    }

    let grad = want_grad.then(|| {
        [
            g_log[0].value() - (t_end - s),
            g_log[1].value() - gi.value(),
            g_log[2].value() - k0 * gi_c.value(),
            g_log[3].value() - k0 * gi_m.value(),
            g_log[4].value() - k0 * gi_p.value(),
        ]
    });
    Ok((ll, grad))
}

/// Transformed occurrence times `tau_k = Lambda(t_k)` of the in-window
/// events, plus `Lambda(T)`. Under the true model the transformed sequence
/// is a unit-rate Poisson process on `[0, Lambda(T)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualSequence {
    pub tau: Vec<f64>,
    pub total: f64,
}

impl ResidualSequence {
    /// Inter-arrival gaps of the transformed sequence, Exp(1) under the
    /// true model (the first gap is measured from tau = 0).
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.tau
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    }
}

/// Residual time transformation under the stationary model.
pub fn transform_times(params: &EtasParams, catalog: &Catalog) -> Result<ResidualSequence> {
    params.validate()?;
    let factors = magnitude_factors(catalog, params.alpha);
    let tau: Vec<f64> = catalog
        .in_window()
        .iter()
        .map(|e| cumulative_inner(params, catalog, &factors, e.time))
        .collect();
    let total = cumulative_inner(params, catalog, &factors, catalog.window_end());
    for w in tau.windows(2) {
        debug_assert!(w[1] >= w[0] - 1e-12);
    }
    Ok(ResidualSequence { tau, total })
}
