//! Catalog simulation by thinning.
//!
//! Events are generated by rejection from a dominating rate: between events the
//! triggering part of the intensity only decays, so on any segment that
//! contains no new event and no knot of the background factor,
//!
//! ```text
//! lambda(t) <= mu_max + lambda_trig(s),    t in [s, segment end],
//! ```
//!
//! where `mu_max` is the larger endpoint value of the piecewise-linear
//! background rate. Candidate times are drawn from the homogeneous process
//! at that bound and accepted with probability `lambda(t) / bound`.
//!
//! Magnitudes are Gutenberg-Richter draws above the threshold, taken from
//! an RNG stream separate from the timing stream so that timing and size
//! randomness cannot leak into each other when parameters change.

use crate::catalog::{Catalog, Event};
use crate::error::EtasError;
use crate::intensity::{EtasParams, KahanSum};
use crate::nonstationary::AnomalyModel;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exponential (Gutenberg-Richter) magnitude law above a threshold:
/// `P(M > m) = 10^(-b (m - threshold))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GutenbergRichter {
    pub threshold: f64,
    pub b_value: f64,
}

impl GutenbergRichter {
    pub fn new(threshold: f64, b_value: f64) -> Result<GutenbergRichter> {
        if !(b_value > 0.0 && b_value.is_finite() && threshold.is_finite()) {
            return Err(EtasError::invalid("b-value must be positive and finite"));
        }
        Ok(GutenbergRichter { threshold, b_value })
    }

    /// Rate parameter of the equivalent exponential law, `b ln 10`.
    pub fn beta(&self) -> f64 {
        self.b_value * std::f64::consts::LN_10
    }

    /// Mean magnitude, `threshold + 1 / beta`.
    pub fn mean(&self) -> f64 {
        self.threshold + 1.0 / self.beta()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        // -ln(1 - u) / beta, evaluated without cancellation
        self.threshold - (-u).ln_1p() / self.beta()
    }
}

/// Options for the thinning simulators.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub window: (f64, f64),
    pub magnitudes: GutenbergRichter,
    pub seed: u64,
    /// Hard cap on generated events (supercritical parameter sets can
    /// otherwise run away).
    pub max_events: usize,
}

impl SimOptions {
    pub fn new(window: (f64, f64), magnitudes: GutenbergRichter, seed: u64) -> SimOptions {
        SimOptions {
            window,
            magnitudes,
            seed,
            max_events: 200_000,
        }
    }
}

/// A simulated catalog plus bookkeeping.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub catalog: Catalog,
    /// True when `max_events` stopped the run early.
    pub truncated: bool,
    pub notes: Vec<String>,
}

/// Expected direct offspring per event: `K0 * beta/(beta - alpha) *
/// integral of the decay kernel`, or infinity when either factor diverges.
pub fn branching_ratio(params: &EtasParams, magnitudes: &GutenbergRichter) -> f64 {
    let beta = magnitudes.beta();
    if params.alpha >= beta || params.p <= 1.0 {
        return f64::INFINITY;
    }
    let mag_factor = beta / (beta - params.alpha);
    let kernel_mass = params.c.powf(1.0 - params.p) / (params.p - 1.0);
    params.k0 * mag_factor * kernel_mass
}

/// Simulates a stationary catalog on `options.window`.
pub fn simulate_stationary(params: &EtasParams, options: &SimOptions) -> Result<SimOutcome> {
    run_thinning(params, None, options)
}

/// Simulates from a nonstationary model (time-varying background and
/// productivity factors). The model's reference parameters drive the
/// kernel; its window need not match `options.window`, since factors are
/// boundary-extended.
pub fn simulate_anomaly(model: &AnomalyModel, options: &SimOptions) -> Result<SimOutcome> {
    run_thinning(&model.reference, Some(model), options)
}

fn run_thinning(
    params: &EtasParams,
    factors: Option<&AnomalyModel>,
    options: &SimOptions,
) -> Result<SimOutcome> {
    params.validate()?;
    let (start, end) = options.window;
    if !(start.is_finite() && end.is_finite() && end >= start) {
        return Err(EtasError::invalid("simulation window must be finite with end >= start"));
    }
    let gr = options.magnitudes;
    if !(gr.b_value > 0.0) {
        return Err(EtasError::invalid("b-value must be positive"));
    }

    let mut notes = Vec::new();
    let mut rho = branching_ratio(params, &gr);
    if let Some(model) = factors {
        let q_max = model.q_k.iter().fold(0.0f64, |m, &q| m.max(q));
        rho *= q_max;
    }
    if rho >= 1.0 {
        notes.push(format!(
            "branching ratio {rho:.3} >= 1: the cascade is supercritical and the run may hit \
             max_events = {}",
            options.max_events
        ));
    }

    let mut timing = ChaCha8Rng::seed_from_u64(options.seed);
    timing.set_stream(0);
    let mut mags = ChaCha8Rng::seed_from_u64(options.seed);
    mags.set_stream(1);

    // a piecewise-linear factor attains its maximum at a knot, so one
    // global background bound dominates mu(t) on the whole window (a flat
    // model then consumes the same stream as a stationary run)
    let mu_max = match factors {
        None => params.mu,
        Some(model) => {
            let q_max = model.q_mu.iter().fold(0.0f64, |m, &q| m.max(q));
            params.mu * q_max
        }
    };
    let mu_at = |t: f64| -> f64 {
        match factors {
            None => params.mu,
            Some(model) => model.mu_rate(t),
        }
    };

    // accepted events as (time, productivity weight K0 q_K(t) e(M))
    let mut events: Vec<Event> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let trig = |s: f64, events: &[Event], weights: &[f64]| -> f64 {
        let mut acc = KahanSum::default();
        for (e, &w) in events.iter().zip(weights).rev() {
            acc.add(w * (s - e.time + params.c).powf(-params.p));
        }
        acc.value()
    };

    let mut s = start;
    let mut truncated = false;
    while s < end {
        let bound = mu_max + trig(s, &events, &weights);
        if bound <= 0.0 {
            break;
        }
        let u1: f64 = timing.random();
        let dt = -(1.0 - u1).ln() / bound;
        if s + dt >= end {
            break;
        }
        s += dt;
        let lambda = mu_at(s) + trig(s, &events, &weights);
        debug_assert!(
            lambda <= bound * (1.0 + 1e-9) + 1e-12,
            "intensity {lambda} exceeded its dominating rate {bound} at t = {s}"
        );
        let u2: f64 = timing.random();
        if u2 * bound <= lambda {
            let magnitude = gr.sample(&mut mags);
            let k_factor = factors.map_or(1.0, |m| m.k_factor(s));
            weights.push(
                params.k0 * k_factor * (params.alpha * (magnitude - gr.threshold)).exp(),
            );
            events.push(Event { time: s, magnitude });
            if events.len() >= options.max_events {
                truncated = true;
                notes.push(format!(
                    "stopped after {} events at t = {s} (window end {end})",
                    events.len()
                ));
                break;
            }
        }
    }

    let catalog = Catalog::new(events, start, end, gr.threshold)?;
    Ok(SimOutcome {
        catalog,
        truncated,
        notes,
    })
}

/// Fraction of probe points where a fitted curve lies within `widen` times
/// the pointwise error bound of the true curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_points: usize,
    pub n_within: usize,
}

impl CoverageReport {
    pub fn fraction(&self) -> f64 {
        if self.n_points == 0 {
            0.0
        } else {
            self.n_within as f64 / self.n_points as f64
        }
    }
}

/// Compares a fitted curve (values + error bounds at probe points) with
/// the truth. Empty inputs yield an empty report rather than an error so
/// degenerate round trips stay harmless.
pub fn coverage(
    truth: impl Fn(f64) -> f64,
    points: &[f64],
    fitted: &[f64],
    bounds: &[f64],
    widen: f64,
) -> CoverageReport {
    let n = points.len().min(fitted.len()).min(bounds.len());
    let mut n_within = 0;
    for i in 0..n {
        if (fitted[i] - truth(points[i])).abs() <= widen * bounds[i] {
            n_within += 1;
        }
    }
    CoverageReport {
        n_points: n,
        n_within,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{log_likelihood, transform_times};
    use crate::nonstationary::{build_basis, AnomalyModel, NsModelSpec, Restriction, SmoothingDomain};
    use crate::stats::ks_exp1;

    fn gr() -> GutenbergRichter {
        GutenbergRichter {
            threshold: 3.5,
            b_value: 1.0,
        }
    }

    #[test]
    fn gr_sample_mean_matches_closed_form() {
        let law = GutenbergRichter {
            threshold: 3.5,
            b_value: 1.273,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        // beta = 1.273 ln 10, so the mean is 3.5 + 1/beta = 3.841157...
        assert!((law.mean() - 3.841_157_3).abs() < 1e-6);
        // 3 sigma of the sample mean is about 0.0032
        assert!((mean - law.mean()).abs() < 0.004, "sample mean {mean}");
        // all draws at or above the threshold
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!((0..1000).all(|_| law.sample(&mut rng) >= 3.5));
    }

    #[test]
    fn poisson_limit_count_is_unbiased() {
        // k0 = 0: a homogeneous Poisson process with rate mu
        let params = EtasParams {
            mu: 5.0,
            k0: 0.0,
            c: 0.01,
            alpha: 1.0,
            p: 1.1,
        };
        let out = simulate_stationary(&params, &SimOptions::new((0.0, 100.0), gr(), 11)).unwrap();
        let n = out.catalog.n_in_window() as f64;
        // N ~ Poisson(500); 3 sigma ~ 67
        assert!((n - 500.0).abs() < 67.0, "count {n}");
        assert!(!out.truncated);
        assert!(out.notes.is_empty());
    }

    #[test]
    fn same_seed_reproduces_the_catalog_exactly() {
        let params = EtasParams {
            mu: 0.5,
            k0: 0.02,
            c: 0.02,
            alpha: 1.2,
            p: 1.3,
        };
        let opts = SimOptions::new((0.0, 300.0), gr(), 42);
        let a = simulate_stationary(&params, &opts).unwrap();
        let b = simulate_stationary(&params, &opts).unwrap();
        assert_eq!(a.catalog.to_csv(), b.catalog.to_csv());
        assert!(a.catalog.n_in_window() > 50, "want a nontrivial catalog");
        let c = simulate_stationary(&params, &SimOptions::new((0.0, 300.0), gr(), 43)).unwrap();
        assert_ne!(a.catalog.to_csv(), c.catalog.to_csv());
    }

    #[test]
    fn residuals_of_simulated_catalog_pass_ks() {
        let params = EtasParams {
            mu: 0.6,
            k0: 0.02,
            c: 0.02,
            alpha: 1.0,
            p: 1.2,
        };
        let out = simulate_stationary(&params, &SimOptions::new((0.0, 500.0), gr(), 5)).unwrap();
        let res = transform_times(&params, &out.catalog).unwrap();
        let ks = ks_exp1(&res.gaps());
        assert!(
            ks.p_value > 0.01,
            "simulated catalog rejected its own model: D = {}, p = {}",
            ks.statistic,
            ks.p_value
        );
    }

    #[test]
    fn simulated_likelihood_prefers_true_parameters() {
        let truth = EtasParams {
            mu: 0.5,
            k0: 0.02,
            c: 0.02,
            alpha: 1.2,
            p: 1.3,
        };
        let out = simulate_stationary(&truth, &SimOptions::new((0.0, 600.0), gr(), 3)).unwrap();
        let l_true = log_likelihood(&truth, &out.catalog).unwrap();
        for wrong in [
            EtasParams { mu: 1.5, ..truth },
            EtasParams { k0: 0.005, ..truth },
            EtasParams { p: 2.2, ..truth },
        ] {
            let l_wrong = log_likelihood(&wrong, &out.catalog).unwrap();
            assert!(l_true > l_wrong, "{wrong:?} beat the truth");
        }
    }

    #[test]
    fn zero_length_window_is_an_empty_catalog() {
        let params = EtasParams {
            mu: 2.0,
            k0: 0.1,
            c: 0.01,
            alpha: 1.0,
            p: 1.2,
        };
        let out = simulate_stationary(&params, &SimOptions::new((5.0, 5.0), gr(), 1)).unwrap();
        assert_eq!(out.catalog.n_in_window(), 0);
        assert!(!out.truncated);
    }

    #[test]
    fn supercritical_parameters_are_flagged_and_capped() {
        let params = EtasParams {
            mu: 1.0,
            k0: 5.0,
            c: 0.01,
            alpha: 1.0,
            p: 1.05,
        };
        let mut opts = SimOptions::new((0.0, 50.0), gr(), 9);
        opts.max_events = 500;
        let out = simulate_stationary(&params, &opts).unwrap();
        assert!(out.notes.iter().any(|n| n.contains("supercritical")));
        assert!(out.truncated);
        assert_eq!(out.catalog.n_in_window(), 500);
    }

    #[test]
    fn branching_ratio_known_value() {
        // beta = ln 10, alpha = 1, p = 1.5, c = 0.04, k0 = 0.3:
        // rho = 0.3 * beta/(beta-1) * 0.04^{-0.5} / 0.5
        let params = EtasParams {
            mu: 1.0,
            k0: 0.3,
            c: 0.04,
            alpha: 1.0,
            p: 1.5,
        };
        let beta = std::f64::consts::LN_10;
        let want = 0.3 * (beta / (beta - 1.0)) * 0.04f64.powf(-0.5) / 0.5;
        let got = branching_ratio(&params, &gr());
        assert!((got - want).abs() < 1e-12 * want);
        // diverging kernels
        assert!(branching_ratio(&EtasParams { p: 1.0, ..params }, &gr()).is_infinite());
        assert!(branching_ratio(&EtasParams { alpha: 2.4, ..params }, &gr()).is_infinite());
    }

    #[test]
    fn anomaly_background_step_shows_up_in_counts() {
        // piecewise background factor: 1 on [0, 100), 3 on (150, 300]
        let basis_cat = Catalog::new(
            vec![
                Event { time: 100.0, magnitude: 4.0 },
                Event { time: 150.0, magnitude: 4.0 },
            ],
            0.0,
            300.0,
            3.5,
        )
        .unwrap();
        let reference = EtasParams {
            mu: 1.0,
            k0: 0.0,
            c: 0.01,
            alpha: 1.0,
            p: 1.2,
        };
        let spec = NsModelSpec {
            restriction: Restriction::Free,
            domain: SmoothingDomain::Ordinary,
            changepoint: None,
        };
        let basis = build_basis(&basis_cat, spec.domain, Some(&reference)).unwrap();
        let model = AnomalyModel {
            basis,
            q_mu: vec![1.0, 1.0, 3.0, 3.0],
            q_k: vec![1.0; 4],
            restriction: Restriction::Free,
            changepoint: None,
            reference,
        };
        let out = simulate_anomaly(&model, &SimOptions::new((0.0, 300.0), gr(), 17)).unwrap();
        let first: usize = out
            .catalog
            .in_window()
            .iter()
            .filter(|e| e.time < 100.0)
            .count();
        let last: usize = out
            .catalog
            .in_window()
            .iter()
            .filter(|e| e.time > 150.0)
            .count();
        // expected 100 vs 450; allow generous Poisson noise
        assert!((first as f64 - 100.0).abs() < 40.0, "first block {first}");
        assert!((last as f64 - 450.0).abs() < 80.0, "last block {last}");
    }

    #[test]
    fn anomaly_flat_model_matches_stationary_run() {
        let reference = EtasParams {
            mu: 0.8,
            k0: 0.02,
            c: 0.02,
            alpha: 1.0,
            p: 1.3,
        };
        let basis_cat = Catalog::new(
            vec![Event { time: 50.0, magnitude: 4.0 }],
            0.0,
            200.0,
            3.5,
        )
        .unwrap();
        let spec = NsModelSpec {
            restriction: Restriction::Free,
            domain: SmoothingDomain::Ordinary,
            changepoint: None,
        };
        let basis = build_basis(&basis_cat, spec.domain, Some(&reference)).unwrap();
        let model = AnomalyModel::flat(basis, &spec, reference);
        let opts = SimOptions::new((0.0, 200.0), gr(), 23);
        let a = simulate_anomaly(&model, &opts).unwrap();
        let b = simulate_stationary(&reference, &opts).unwrap();
        // flat factors change the segment structure but not the law; with
        // identical streams the accepted times must agree exactly
        assert_eq!(a.catalog.to_csv(), b.catalog.to_csv());
    }

    #[test]
    fn coverage_counts_points_inside_bounds() {
        let truth = |t: f64| t;
        let points = [0.0, 1.0, 2.0, 3.0];
        let fitted = [0.1, 1.5, 2.05, 2.2];
        let bounds = [0.1, 0.2, 0.1, 0.1];
        let report = coverage(truth, &points, &fitted, &bounds, 2.0);
        assert_eq!(report.n_points, 4);
        // misses: |1.5 - 1| = 0.5 > 0.4 and |2.2 - 3| = 0.8 > 0.2
        assert_eq!(report.n_within, 2);
        assert!((report.fraction() - 0.5).abs() < 1e-15);
        let empty = coverage(truth, &[], &[], &[], 2.0);
        assert_eq!(empty.n_points, 0);
        assert_eq!(empty.fraction(), 0.0);
    }
}
