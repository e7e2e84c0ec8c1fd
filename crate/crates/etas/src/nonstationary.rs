//! Nonstationary model: time-varying background rate and aftershock
//! productivity.
//!
//! Around a stationary reference fit (mu, K0, c, alpha, p), the intensity
//! is modulated by two nonnegative anomaly factors,
//!
//! ```text
//! lambda_q(t) = mu q_mu(t) + sum_{t_i < t} K0 q_K(t_i) e_i / (t - t_i + c)^p
//! ```
//!
//! where `q_mu` and `q_K` are piecewise-linear on the knot set
//! {S, event times, T}. The productivity factor is evaluated at the parent
//! time `t_i`, so every triggering integral keeps its closed form. Events
//! before the window (history) keep factor 1 on both channels.
//!
//! Estimation maximizes the penalized log-likelihood
//!
//! ```text
//! Q(q) = log L(q) - w_mu Phi(q_mu) - w_K Phi(q_K),
//! Phi(q) = sum_i ((q_{i+1} - q_i) / d_i)^2 d_i
//! ```
//!
//! with gaps `d_i` measured in ordinary time or in transformed time
//! `tau = Lambda_ref(t)`. For fixed reference parameters the likelihood is
//! a sum of logs of linear functions of the coefficients minus a linear
//! function, so Q is strictly concave and a projected Newton iteration
//! (coefficients clamped at zero) finds the unique maximum. A declared
//! change point frees the factors across one interval by dropping that
//! interval's penalty weight to almost nothing.
//!
//! The boundary coefficient at T is a hyperparameter (see [`crate::bayes`])
//! and stays fixed during the Newton iteration; the coefficient at S is
//! estimated like any interior one.

use crate::catalog::Catalog;
use crate::error::EtasError;
use crate::intensity::{
    cumulative_intensity, omori_primitive, EtasParams, KahanSum, ResidualSequence,
};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which anomaly factors are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// `q_K` pinned at 1; only the background factor varies (model 1).
    FixQk,
    /// One shared factor: `q_mu = q_K` (model 2).
    Tied,
    /// Independent background and productivity factors (model 3).
    Free,
}

/// Time scale on which roughness is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingDomain {
    /// Calendar days (domain "a").
    Ordinary,
    /// Transformed time `tau = Lambda_ref(t)` (domain "b").
    Transformed,
}

/// One of the twelve model configurations: restriction x domain x optional
/// change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsModelSpec {
    pub restriction: Restriction,
    pub domain: SmoothingDomain,
    pub changepoint: Option<f64>,
}

/// Penalty weights for the two factors (`w_k` is ignored under `FixQk`
/// and `Tied`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_mu: f64,
    pub w_k: f64,
}

/// Piecewise-linear basis on strictly increasing knots spanning the study
/// window. Interior knots sit at the in-window event times (coincident
/// times nudged apart by one ulp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: Vec<f64>,
    /// Per-interval gaps entering the roughness penalty: knot differences
    /// in the ordinary domain, differences of `Lambda_ref(knot)` in the
    /// transformed domain.
    penalty_gaps: Vec<f64>,
    domain: SmoothingDomain,
}

/// Builds the basis for a catalog. `reference` is required for the
/// transformed domain, where penalty gaps are measured on the
/// `Lambda_ref` clock.
pub fn build_basis(
    catalog: &Catalog,
    domain: SmoothingDomain,
    reference: Option<&EtasParams>,
) -> Result<SplineBasis> {
    let s = catalog.window_start();
    let t_end = catalog.window_end();
    if !(t_end > s) {
        return Err(EtasError::invalid(
            "nonstationary basis needs a window of positive length",
        ));
    }
    let mut knots = Vec::with_capacity(catalog.n_in_window() + 2);
    knots.push(s);
    knots.extend(catalog.in_window().iter().map(|e| e.time));
    knots.push(t_end);
    // enforce strict increase: nudge ties upward, then repair any collision
    // with the final knot downward
    for i in 1..knots.len() {
        if knots[i] <= knots[i - 1] {
            knots[i] = knots[i - 1].next_up();
        }
    }
    let last = knots.len() - 1;
    knots[last] = t_end;
    for i in (1..=last).rev() {
        if knots[i - 1] >= knots[i] {
            knots[i - 1] = knots[i].next_down();
        }
    }
    if knots[0] != s || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EtasError::invalid(
            "could not separate coincident event times into strictly increasing knots",
        ));
    }

    let penalty_gaps: Vec<f64> = match domain {
        SmoothingDomain::Ordinary => knots.windows(2).map(|w| w[1] - w[0]).collect(),
        SmoothingDomain::Transformed => {
            let reference = reference.ok_or_else(|| {
                EtasError::invalid("transformed-domain smoothing needs reference parameters")
            })?;
            reference.validate()?;
            let tau: Vec<f64> = knots
                .iter()
                .map(|&k| cumulative_intensity(reference, catalog, k))
                .collect::<Result<_>>()?;
            tau.windows(2).map(|w| w[1] - w[0]).collect()
        }
    };
    // a gap can underflow when two nudged knots map to nearly equal
    // transformed times; floor it so penalty terms stay finite
    let scale: f64 = penalty_gaps.iter().sum::<f64>() / penalty_gaps.len() as f64;
    let floor = (scale * 1e-12).max(1e-300);
    Ok(SplineBasis {
        knots,
        penalty_gaps: penalty_gaps.into_iter().map(|g| g.max(floor)).collect(),
        domain,
    })
}

impl SplineBasis {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> SmoothingDomain {
        self.domain
    }

    pub fn n_coeffs(&self) -> usize {
        self.knots.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn penalty_gaps(&self) -> &[f64] {
        &self.penalty_gaps
    }

    /// Index of the interval containing `t` (clamped to the window).
    pub fn interval_of(&self, t: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(self.knots.len() - 2)
    }

    /// Piecewise-linear interpolation of `coeffs` at `t`, clamped to the
    /// boundary values outside the window.
    pub fn value(&self, coeffs: &[f64], t: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.n_coeffs());
        if t <= self.knots[0] {
            return coeffs[0];
        }
        if t >= *self.knots.last().unwrap() {
            return *coeffs.last().unwrap();
        }
        let i = self.interval_of(t);
        let w = (t - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        coeffs[i] * (1.0 - w) + coeffs[i + 1] * w
    }

    /// The i-th tent function; `tent(i, knot_j)` is the Kronecker delta.
    pub fn tent(&self, i: usize, t: f64) -> f64 {
        let k = &self.knots;
        if i > 0 && t >= k[i - 1] && t <= k[i] {
            if k[i] == t {
                1.0
            } else {
                (t - k[i - 1]) / (k[i] - k[i - 1])
            }
        } else if i + 1 < k.len() && t >= k[i] && t <= k[i + 1] {
            1.0 - (t - k[i]) / (k[i + 1] - k[i])
        } else if i == 0 && t <= k[0] {
            1.0 // boundary extension
        } else if i + 1 == k.len() && t >= k[i] {
            1.0
        } else {
            0.0
        }
    }

    /// `integral_S^T F_i(t) dt` for every tent: the exact trapezoid
    /// weights, in ordinary time.
    pub fn integral_weights(&self) -> Vec<f64> {
        let n = self.n_coeffs();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.knots[i] - self.knots[i - 1] } else { 0.0 };
                let right = if i + 1 < n { self.knots[i + 1] - self.knots[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }
}

/// Roughness `sum_i ((q_{i+1} - q_i)/d_i)^2 d_i` of a coefficient vector
/// on the basis' penalty gaps.
pub fn roughness(coeffs: &[f64], basis: &SplineBasis) -> f64 {
    assert_eq!(coeffs.len(), basis.n_coeffs());
    coeffs
        .windows(2)
        .zip(basis.penalty_gaps())
        .map(|(w, &g)| (w[1] - w[0]).powi(2) / g)
        .sum()
}

/// Per-interval penalty weights: `w` everywhere except the interval
/// containing the change point, which gets `cp_weight`.
pub(crate) fn interval_weights(
    basis: &SplineBasis,
    w: f64,
    changepoint: Option<f64>,
    cp_weight: f64,
) -> Vec<f64> {
    let mut v = vec![w; basis.n_intervals()];
    if let Some(t0) = changepoint {
        v[basis.interval_of(t0)] = cp_weight;
    }
    v
}

fn weighted_roughness(coeffs: &[f64], gaps: &[f64], weights: &[f64]) -> f64 {
    coeffs
        .windows(2)
        .zip(gaps.iter().zip(weights))
        .map(|(w, (&g, &wt))| wt * (w[1] - w[0]).powi(2) / g)
        .sum()
}

/// A fitted (or planted) nonstationary model: the basis, both factor
/// coefficient vectors, and the stationary reference they modulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyModel {
    pub basis: SplineBasis,
    pub q_mu: Vec<f64>,
    pub q_k: Vec<f64>,
    pub restriction: Restriction,
    pub changepoint: Option<f64>,
    pub reference: EtasParams,
}

impl AnomalyModel {
    /// All-ones factors: the stationary reference itself.
    pub fn flat(basis: SplineBasis, spec: &NsModelSpec, reference: EtasParams) -> AnomalyModel {
        let n = basis.n_coeffs();
        AnomalyModel {
            basis,
            q_mu: vec![1.0; n],
            q_k: vec![1.0; n],
            restriction: spec.restriction,
            changepoint: spec.changepoint,
            reference,
        }
    }

    /// Background anomaly factor `q_mu(t)`.
    pub fn mu_factor(&self, t: f64) -> f64 {
        self.basis.value(&self.q_mu, t)
    }

    /// Productivity anomaly factor `q_K(t)`.
    pub fn k_factor(&self, t: f64) -> f64 {
        self.basis.value(&self.q_k, t)
    }

    /// Time-varying background rate `mu(t) = mu_ref * q_mu(t)`.
    pub fn mu_rate(&self, t: f64) -> f64 {
        self.reference.mu * self.mu_factor(t)
    }

    /// Time-varying productivity `K0(t) = K0_ref * q_K(t)`.
    pub fn k0_rate(&self, t: f64) -> f64 {
        self.reference.k0 * self.k_factor(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<AnomalyModel> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Nonstationary conditional intensity under `model` given the catalog's
/// events strictly before `t`. Parents outside the basis window keep
/// factor 1.
pub fn ns_conditional_intensity(model: &AnomalyModel, catalog: &Catalog, t: f64) -> f64 {
    let r = &model.reference;
    let mz = catalog.threshold();
    let s = catalog.window_start();
    let mut trig = KahanSum::default();
    for e in catalog.all_events().iter().rev() {
        if e.time < t {
            let factor = if e.time < s { 1.0 } else { model.k_factor(e.time) };
            let w = (r.alpha * (e.magnitude - mz)).exp();
            trig.add(factor * w * (t - e.time + r.c).powf(-r.p));
        }
    }
    model.mu_rate(t) + r.k0 * trig.value()
}

/// `integral_S^t lambda_q(u) du` under the nonstationary model.
pub fn ns_cumulative_intensity(model: &AnomalyModel, catalog: &Catalog, t: f64) -> Result<f64> {
    let s = catalog.window_start();
    if !(s..=catalog.window_end()).contains(&t) {
        return Err(EtasError::invalid(format!(
            "cumulative intensity requested at t = {t} outside window [{s}, {}]",
            catalog.window_end()
        )));
    }
    let r = &model.reference;
    let mz = catalog.threshold();
    // background: exact integral of the piecewise-linear mu(t)
    let mut bg = KahanSum::default();
    let knots = model.basis.knots();
    for i in 0..model.basis.n_intervals() {
        let (a, b) = (knots[i], knots[i + 1]);
        if a >= t {
            break;
        }
        let hi = b.min(t);
        let qa = model.mu_factor(a);
        let qb = model.mu_factor(hi);
        bg.add(0.5 * (qa + qb) * (hi - a));
    }
    // triggering: scaled closed-form Omori integrals
    let mut trig = KahanSum::default();
    for e in catalog.all_events() {
        if e.time >= t {
            break;
        }
        let factor = if e.time < s { 1.0 } else { model.k_factor(e.time) };
        let w = (r.alpha * (e.magnitude - mz)).exp();
        let upper = omori_primitive(r.c, r.p, t - e.time);
        let lower = if e.time < s {
            omori_primitive(r.c, r.p, s - e.time)
        } else {
            0.0
        };
        trig.add(factor * w * (upper - lower));
    }
    Ok(r.mu * bg.value() + r.k0 * trig.value())
}

/// Residual time transformation under a nonstationary model.
pub fn ns_transform_times(model: &AnomalyModel, catalog: &Catalog) -> Result<ResidualSequence> {
    let tau = catalog
        .in_window()
        .iter()
        .map(|e| ns_cumulative_intensity(model, catalog, e.time))
        .collect::<Result<Vec<f64>>>()?;
    let total = ns_cumulative_intensity(model, catalog, catalog.window_end())?;
    Ok(ResidualSequence { tau, total })
}

// ---------------------------------------------------------------------------
// Penalized estimation machinery
// ---------------------------------------------------------------------------

/// Precomputed per-(catalog, reference, basis) quantities for the penalized
/// likelihood: the triggering kernel between in-window events, history
/// contributions, per-event closed-form integrals, and trapezoid weights.
///
/// The effective event times are the interior knots (identical to the event
/// times unless ties were nudged).
pub(crate) struct NsWorkspace {
    pub basis: SplineBasis,
    pub reference: EtasParams,
    pub restriction: Restriction,
    pub changepoint: Option<f64>,
    n: usize,
    /// kernel[row_start[k] + j] = K0 e_j psi(t_k - t_j), j < k
    kernel: Vec<f64>,
    row_start: Vec<usize>,
    /// K0 * sum over history parents of e_h psi(t_k - t_h)
    hist_trig: Vec<f64>,
    /// K0 e_j I(T - t_j) for in-window event j
    event_integral: Vec<f64>,
    hist_integral: f64,
    trapz: Vec<f64>,
}

impl NsWorkspace {
    pub(crate) fn build(
        catalog: &Catalog,
        reference: &EtasParams,
        spec: &NsModelSpec,
    ) -> Result<NsWorkspace> {
        reference.validate()?;
        if let Some(t0) = spec.changepoint {
            if !(catalog.window_start() < t0 && t0 < catalog.window_end()) {
                return Err(EtasError::invalid(format!(
                    "change point {t0} must lie strictly inside the window"
                )));
            }
        }
        let n = catalog.n_in_window();
        if n > 5000 {
            return Err(EtasError::invalid(
                "nonstationary fitting stores an N x N kernel; catalogs beyond 5000 in-window \
                 events are not supported",
            ));
        }
        let basis = build_basis(catalog, spec.domain, Some(reference))?;
        let times = &basis.knots()[1..=n];
        let mags: Vec<f64> = catalog.in_window().iter().map(|e| e.magnitude).collect();
        let mz = catalog.threshold();
        let s = catalog.window_start();
        let t_end = catalog.window_end();
        let &EtasParams { k0, c, alpha, p, .. } = reference;

        let factors: Vec<f64> = mags.iter().map(|&m| (alpha * (m - mz)).exp()).collect();
        let mut kernel = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        let mut row_start = Vec::with_capacity(n + 1);
        for k in 0..n {
            row_start.push(kernel.len());
            for j in 0..k {
                kernel.push(k0 * factors[j] * (times[k] - times[j] + c).powf(-p));
            }
        }
        row_start.push(kernel.len());

        let mut hist_trig = vec![0.0; n];
        let mut hist_integral = KahanSum::default();
        for e in catalog.history() {
            let w = k0 * (alpha * (e.magnitude - mz)).exp();
            for (k, &tk) in times.iter().enumerate() {
                hist_trig[k] += w * (tk - e.time + c).powf(-p);
            }
            hist_integral.add(
                w * (omori_primitive(c, p, t_end - e.time) - omori_primitive(c, p, s - e.time)),
            );
        }

        let event_integral: Vec<f64> = times
            .iter()
            .zip(&factors)
            .map(|(&tj, &w)| k0 * w * omori_primitive(c, p, t_end - tj))
            .collect();
        let trapz = basis.integral_weights();

        Ok(NsWorkspace {
            basis,
            reference: *reference,
            restriction: spec.restriction,
            changepoint: spec.changepoint,
            n,
            kernel,
            row_start,
            hist_trig,
            event_integral,
            hist_integral: hist_integral.value(),
            trapz,
        })
    }

    fn kernel_row(&self, k: usize) -> &[f64] {
        &self.kernel[self.row_start[k]..self.row_start[k + 1]]
    }

    /// Free coefficients per factor: everything except the boundary value
    /// at T.
    pub(crate) fn m_free(&self) -> usize {
        self.basis.n_coeffs() - 1
    }

    /// Total free dimension of the stacked coefficient vector.
    pub(crate) fn dim(&self) -> usize {
        match self.restriction {
            Restriction::FixQk | Restriction::Tied => self.m_free(),
            Restriction::Free => 2 * self.m_free(),
        }
    }

    /// Expands the stacked free vector into full (q_mu, q_k) vectors with
    /// the fixed boundary values appended.
    pub(crate) fn unpack(&self, x: &[f64], boundary: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
        let m = self.m_free();
        let n_coeffs = self.basis.n_coeffs();
        let mut q_mu = Vec::with_capacity(n_coeffs);
        let mut q_k = Vec::with_capacity(n_coeffs);
        match self.restriction {
            Restriction::FixQk => {
                q_mu.extend_from_slice(&x[..m]);
                q_mu.push(boundary.0);
                q_k = vec![1.0; n_coeffs];
            }
            Restriction::Tied => {
                q_mu.extend_from_slice(&x[..m]);
                q_mu.push(boundary.0);
                q_k = q_mu.clone();
            }
            Restriction::Free => {
                q_mu.extend_from_slice(&x[..m]);
                q_mu.push(boundary.0);
                q_k.extend_from_slice(&x[m..]);
                q_k.push(boundary.1);
            }
        }
        (q_mu, q_k)
    }

    /// Plain log-likelihood for arbitrary full coefficient vectors.
    pub(crate) fn loglik_full(&self, q_mu: &[f64], q_k: &[f64]) -> Result<f64> {
        let mu = self.reference.mu;
        let mut logsum = KahanSum::default();
        for k in 0..self.n {
            let mut lambda = mu * q_mu[k + 1] + self.hist_trig[k];
            let row = self.kernel_row(k);
            let mut trig = KahanSum::default();
            for (j, &kv) in row.iter().enumerate().rev() {
                trig.add(kv * q_k[j + 1]);
            }
            lambda += trig.value();
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(EtasError::non_finite(format!(
                    "nonstationary intensity at event {k} (lambda = {lambda})"
                )));
            }
            logsum.add(lambda.ln());
        }
        let mut integral = KahanSum::default();
        for (w, q) in self.trapz.iter().zip(q_mu) {
            integral.add(mu * w * q);
        }
        for (b, q) in self.event_integral.iter().zip(&q_k[1..]) {
            integral.add(b * q);
        }
        integral.add(self.hist_integral);
        Ok(logsum.value() - integral.value())
    }

    /// Support of `d lambda_k / d x` as (stacked index, multiplier) pairs,
    /// plus the constant part of `lambda_k`.
    fn event_support(&self, k: usize, out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        let mu = self.reference.mu;
        let m = self.m_free();
        let row = self.kernel_row(k);
        match self.restriction {
            Restriction::FixQk => {
                out.push((k + 1, mu));
                self.hist_trig[k] + row.iter().sum::<f64>()
            }
            Restriction::Tied => {
                for (j, &kv) in row.iter().enumerate() {
                    out.push((j + 1, kv));
                }
                out.push((k + 1, mu));
                self.hist_trig[k]
            }
            Restriction::Free => {
                out.push((k + 1, mu));
                for (j, &kv) in row.iter().enumerate() {
                    out.push((m + j + 1, kv));
                }
                self.hist_trig[k]
            }
        }
    }

    /// Gradient of the integral term with respect to the stacked vector
    /// (a constant vector), and the constant integral offset from the fixed
    /// boundary coefficients and history.
    fn integral_gradient(&self, boundary: (f64, f64)) -> (DVector<f64>, f64) {
        let mu = self.reference.mu;
        let m = self.m_free();
        let mut g = DVector::zeros(self.dim());
        let mut offset = self.hist_integral;
        match self.restriction {
            Restriction::FixQk => {
                for i in 0..m {
                    g[i] = mu * self.trapz[i];
                }
                offset += mu * self.trapz[m] * boundary.0;
                offset += self.event_integral.iter().sum::<f64>();
            }
            Restriction::Tied => {
                for i in 0..m {
                    g[i] = mu * self.trapz[i];
                }
                for (j, &b) in self.event_integral.iter().enumerate() {
                    g[j + 1] += b;
                }
                offset += mu * self.trapz[m] * boundary.0;
            }
            Restriction::Free => {
                for i in 0..m {
                    g[i] = mu * self.trapz[i];
                }
                for (j, &b) in self.event_integral.iter().enumerate() {
                    g[m + j + 1] = b;
                }
                offset += mu * self.trapz[m] * boundary.0;
            }
        }
        (g, offset)
    }

    /// Stacked per-interval penalty weights for the two factor blocks.
    pub(crate) fn penalty_weights(&self, weights: Weights, cp_weight: f64) -> (Vec<f64>, Vec<f64>) {
        let w_mu = interval_weights(&self.basis, weights.w_mu, self.changepoint, cp_weight);
        let w_k = interval_weights(&self.basis, weights.w_k, self.changepoint, cp_weight);
        (w_mu, w_k)
    }
}

/// Value, gradient and negative Hessian of the penalized objective at a
/// stacked coefficient vector.
pub(crate) struct QEval {
    pub value: f64,
    pub loglik: f64,
    pub grad: Option<DVector<f64>>,
    pub neg_hess: Option<DMatrix<f64>>,
}

/// Evaluates Q (and optionally derivatives) at `x`. Returns `None` when
/// some event intensity is nonpositive, which the MAP line search treats
/// as an overshoot.
pub(crate) fn eval_penalized(
    ws: &NsWorkspace,
    x: &[f64],
    w_mu: &[f64],
    w_k: &[f64],
    boundary: (f64, f64),
    need_grad: bool,
    need_hess: bool,
) -> Option<QEval> {
    let dim = ws.dim();
    debug_assert_eq!(x.len(), dim);
    let m = ws.m_free();
    let gaps = ws.basis.penalty_gaps();

    // log-likelihood part
    let mut logsum = KahanSum::default();
    let mut grad = need_grad.then(|| DVector::<f64>::zeros(dim));
    let mut hess = need_hess.then(|| vec![0.0f64; dim * dim]);
    let mut support: Vec<(usize, f64)> = Vec::with_capacity(ws.n + 1);
    for k in 0..ws.n {
        let constant = ws.event_support(k, &mut support);
        let mut lambda = constant;
        for &(idx, mult) in &support {
            lambda += mult * x[idx];
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return None;
        }
        logsum.add(lambda.ln());
        if let Some(g) = grad.as_mut() {
            for &(idx, mult) in &support {
                g[idx] += mult / lambda;
            }
        }
        if let Some(h) = hess.as_mut() {
            // neg Hessian of sum log lambda_k: outer products v v' / lambda^2
            let inv2 = 1.0 / (lambda * lambda);
            for a in 0..support.len() {
                let (ia, va) = support[a];
                let va = va * inv2;
                for &(ib, vb) in &support[a..] {
                    h[ia * dim + ib] += va * vb;
                }
            }
        }
    }

    let (int_grad, int_offset) = ws.integral_gradient(boundary);
    let mut integral = int_offset;
    for i in 0..dim {
        integral += int_grad[i] * x[i];
    }
    let loglik = logsum.value() - integral;

    // penalty part over full vectors
    let (q_mu, q_k) = ws.unpack(x, boundary);
    let mut penalty = weighted_roughness(&q_mu, gaps, w_mu);
    if ws.restriction == Restriction::Free {
        penalty += weighted_roughness(&q_k, gaps, w_k);
    }
    let value = loglik - penalty;
    if !value.is_finite() {
        return None;
    }

    if let Some(g) = grad.as_mut() {
        *g -= &int_grad;
        // penalty gradient: factor blocks are tridiagonal chains
        let mut add_chain = |offset: usize, q: &[f64], w: &[f64]| {
            for i in 0..m {
                let mut gp = 0.0;
                if i > 0 {
                    gp += 2.0 * w[i - 1] * (q[i] - q[i - 1]) / gaps[i - 1];
                }
                gp += 2.0 * w[i] * (q[i] - q[i + 1]) / gaps[i];
                g[offset + i] -= gp;
            }
        };
        match ws.restriction {
            Restriction::FixQk | Restriction::Tied => add_chain(0, &q_mu, w_mu),
            Restriction::Free => {
                add_chain(0, &q_mu, w_mu);
                add_chain(m, &q_k, w_k);
            }
        }
    }

    let neg_hess = hess.map(|mut h| {
        // mirror the upper triangle accumulated above
        for a in 0..dim {
            for b in (a + 1)..dim {
                h[b * dim + a] = h[a * dim + b];
            }
        }
        let add_chain = |h: &mut [f64], offset: usize, w: &[f64]| {
            for i in 0..m {
                let mut d = 2.0 * w[i] / gaps[i];
                if i > 0 {
                    d += 2.0 * w[i - 1] / gaps[i - 1];
                }
                h[(offset + i) * dim + offset + i] += d;
                if i + 1 < m {
                    h[(offset + i) * dim + offset + i + 1] -= 2.0 * w[i] / gaps[i];
                    h[(offset + i + 1) * dim + offset + i] -= 2.0 * w[i] / gaps[i];
                }
            }
        };
        match ws.restriction {
            Restriction::FixQk | Restriction::Tied => add_chain(&mut h, 0, w_mu),
            Restriction::Free => {
                add_chain(&mut h, 0, w_mu);
                add_chain(&mut h, m, w_k);
            }
        }
        DMatrix::from_row_slice(dim, dim, &h)
    });

    Some(QEval {
        value,
        loglik,
        grad,
        neg_hess,
    })
}

/// Options for [`map_estimate`].
#[derive(Debug, Clone, Copy)]
pub struct MapOptions {
    pub weights: Weights,
    /// Penalty weight used on the interval containing the change point.
    pub changepoint_weight: f64,
    /// Fixed boundary coefficients (q_mu, q_K) at the final knot.
    pub boundary: (f64, f64),
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            weights: Weights { w_mu: 1.0, w_k: 1.0 },
            changepoint_weight: 1e-5,
            boundary: (1.0, 1.0),
            grad_tol: 1e-6,
            max_iters: 1000,
        }
    }
}

/// A maximum-penalized-likelihood solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapOutcome {
    pub model: AnomalyModel,
    /// Penalized objective Q at the optimum.
    pub penalized: f64,
    /// Unpenalized log-likelihood at the optimum.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficients pinned at zero by the nonnegativity constraint.
    pub n_clamped: usize,
}

pub(crate) struct MapSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub loglik: f64,
    pub neg_hess: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n_clamped: usize,
}

/// Projected Newton maximization of the penalized objective over the
/// stacked free coefficients, clamped at zero.
pub(crate) fn map_newton(
    ws: &NsWorkspace,
    w_mu: &[f64],
    w_k: &[f64],
    boundary: (f64, f64),
    grad_tol: f64,
    max_iters: usize,
    warm_start: Option<&[f64]>,
) -> Result<MapSolution> {
    let dim = ws.dim();
    let mut x: Vec<f64> = match warm_start {
        Some(x0) if x0.len() == dim => x0.iter().map(|&v| v.max(0.0)).collect(),
        _ => vec![1.0; dim],
    };
    let mut eval = eval_penalized(ws, &x, w_mu, w_k, boundary, true, true)
        .ok_or_else(|| EtasError::non_finite("penalized likelihood at the starting point"))?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        let grad = eval.grad.as_ref().unwrap();
        let free: Vec<usize> = (0..dim)
            .filter(|&i| x[i] > 0.0 || grad[i] > 0.0)
            .collect();
        let g_inf = free.iter().fold(0.0f64, |m, &i| m.max(grad[i].abs()));
        if g_inf < grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Newton direction on the free coordinates
        let nf = free.len();
        let a_full = eval.neg_hess.as_ref().unwrap();
        let mut a = DMatrix::<f64>::zeros(nf, nf);
        let mut gf = DVector::<f64>::zeros(nf);
        for (r, &i) in free.iter().enumerate() {
            gf[r] = grad[i];
            for (cidx, &j) in free.iter().enumerate() {
                a[(r, cidx)] = a_full[(i, j)];
            }
        }
        let mut ridge = 0.0;
        let dir = loop {
            let a_try = if ridge > 0.0 {
                let mut m = a.clone();
                for i in 0..nf {
                    m[(i, i)] += ridge;
                }
                m
            } else {
                a.clone()
            };
            match a_try.cholesky() {
                Some(chol) => break chol.solve(&gf),
                None => {
                    let scale = (0..nf).map(|i| a[(i, i)]).fold(1e-12f64, f64::max);
                    ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
                    if ridge > scale * 1e3 {
                        return Err(EtasError::Factorization {
                            context: "penalized-likelihood Newton step".into(),
                        });
                    }
                }
            }
        };

        // Newton decrement: first-order estimate of the attainable gain.
        // Heavy penalty weights scale gradients (and curvatures) almost
        // arbitrarily, so the absolute gradient test above can be
        // unreachable in f64 even at the optimum; once the predicted gain
        // drops below the objective's own floating-point resolution the
        // point is converged for every practical purpose.
        let decrement = 0.5 * gf.dot(&dir);
        if decrement.abs() <= 1e-11 * (1.0 + eval.value.abs()) {
            converged = true;
            break;
        }

        // projected backtracking line search: sufficient increase against
        // the inner product with the step actually taken after projection
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xt = x.clone();
            let mut step_dot = 0.0;
            for (r, &i) in free.iter().enumerate() {
                xt[i] = (x[i] + alpha * dir[r]).max(0.0);
                step_dot += gf[r] * (xt[i] - x[i]);
            }
            if step_dot > 0.0 {
                if let Some(ev) = eval_penalized(ws, &xt, w_mu, w_k, boundary, true, true) {
                    if ev.value >= eval.value + 1e-4 * step_dot {
                        accepted = Some((xt, ev));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xt, ev)) => {
                x = xt;
                eval = ev;
            }
            None => break, // no progress possible; report as-is
        }
    }

    let n_clamped = x.iter().filter(|&&v| v == 0.0).count();
    Ok(MapSolution {
        value: eval.value,
        loglik: eval.loglik,
        neg_hess: eval.neg_hess.take().unwrap(),
        x,
        iterations,
        converged,
        n_clamped,
    })
}

/// Penalized maximum-likelihood estimate of the anomaly factors for one
/// model configuration.
pub fn map_estimate(
    catalog: &Catalog,
    reference: &EtasParams,
    spec: &NsModelSpec,
    options: &MapOptions,
) -> Result<MapOutcome> {
    if !(options.weights.w_mu >= 0.0 && options.weights.w_k >= 0.0) {
        return Err(EtasError::invalid("penalty weights must be nonnegative"));
    }
    if !(options.boundary.0 >= 0.0 && options.boundary.1 >= 0.0) {
        return Err(EtasError::invalid("boundary factors must be nonnegative"));
    }
    let ws = NsWorkspace::build(catalog, reference, spec)?;
    let (w_mu, w_k) = ws.penalty_weights(options.weights, options.changepoint_weight);
    let sol = map_newton(
        &ws,
        &w_mu,
        &w_k,
        options.boundary,
        options.grad_tol,
        options.max_iters,
        None,
    )?;
    let (q_mu, q_k) = ws.unpack(&sol.x, options.boundary);
    Ok(MapOutcome {
        model: AnomalyModel {
            basis: ws.basis.clone(),
            q_mu,
            q_k,
            restriction: spec.restriction,
            changepoint: spec.changepoint,
            reference: *reference,
        },
        penalized: sol.value,
        loglik: sol.loglik,
        iterations: sol.iterations,
        converged: sol.converged,
        n_clamped: sol.n_clamped,
    })
}

fn model_spec_of(model: &AnomalyModel) -> NsModelSpec {
    NsModelSpec {
        restriction: model.restriction,
        domain: model.basis.domain(),
        changepoint: model.changepoint,
    }
}

fn check_model_dims(model: &AnomalyModel, ws: &NsWorkspace) -> Result<()> {
    if model.q_mu.len() != ws.basis.n_coeffs() || model.q_k.len() != ws.basis.n_coeffs() {
        return Err(EtasError::invalid(format!(
            "model has {} / {} coefficients but the catalog needs {}",
            model.q_mu.len(),
            model.q_k.len(),
            ws.basis.n_coeffs()
        )));
    }
    Ok(())
}

/// Nonstationary log-likelihood of `catalog` under `model` (whose basis
/// must match the catalog's event-time knots).
pub fn ns_log_likelihood(model: &AnomalyModel, catalog: &Catalog) -> Result<f64> {
    let ws = NsWorkspace::build(catalog, &model.reference, &model_spec_of(model))?;
    check_model_dims(model, &ws)?;
    ws.loglik_full(&model.q_mu, &model.q_k)
}

/// Penalized objective `Q = log L - w_mu Phi_mu - w_K Phi_K` with the
/// change-point interval override.
pub fn penalized_loglik(
    model: &AnomalyModel,
    catalog: &Catalog,
    weights: Weights,
    changepoint_weight: f64,
) -> Result<f64> {
    let ws = NsWorkspace::build(catalog, &model.reference, &model_spec_of(model))?;
    check_model_dims(model, &ws)?;
    let loglik = ws.loglik_full(&model.q_mu, &model.q_k)?;
    let (w_mu, w_k) = ws.penalty_weights(weights, changepoint_weight);
    let mut penalty = weighted_roughness(&model.q_mu, ws.basis.penalty_gaps(), &w_mu);
    if model.restriction == Restriction::Free {
        penalty += weighted_roughness(&model.q_k, ws.basis.penalty_gaps(), &w_k);
    }
    Ok(loglik - penalty)
}

/// Value and analytic gradient of the penalized objective with respect to
/// the stacked free coefficients (boundary values fixed). The stacking is
/// `q_mu[0..=N]` then, under `Free`, `q_k[0..=N]`.
pub fn penalized_loglik_grad(
    model: &AnomalyModel,
    catalog: &Catalog,
    weights: Weights,
    changepoint_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let ws = NsWorkspace::build(catalog, &model.reference, &model_spec_of(model))?;
    check_model_dims(model, &ws)?;
    let m = ws.m_free();
    let mut x = Vec::with_capacity(ws.dim());
    x.extend_from_slice(&model.q_mu[..m]);
    if model.restriction == Restriction::Free {
        x.extend_from_slice(&model.q_k[..m]);
    }
    let boundary = (model.q_mu[m], model.q_k[m]);
    let (w_mu, w_k) = ws.penalty_weights(weights, changepoint_weight);
    let eval = eval_penalized(&ws, &x, &w_mu, &w_k, boundary, true, false)
        .ok_or_else(|| EtasError::non_finite("penalized likelihood"))?;
    Ok((eval.value, eval.grad.unwrap().iter().copied().collect()))
}
