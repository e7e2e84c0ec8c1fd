//! Two-stage AIC change-point analysis.
//!
//! A candidate change point t0 splits the window [S, T] into [S, t0) and
//! [t0, T]. The whole window and each period get their own stationary fit;
//! the split is preferred when
//!
//! ```text
//! AIC12 = AIC1 + AIC2 + 2q  <  AIC0
//! ```
//!
//! where `q` counts the degrees of freedom spent searching for t0 (q = 0
//! for a predetermined change point). By default the second period keeps
//! all pre-t0 events as triggering history, so the two period likelihoods
//! partition the whole-window likelihood; `hard_reset` drops that history
//! instead.

use crate::catalog::{Catalog, Event};
use crate::error::EtasError;
use crate::fit::{fit_mle, relative_probability, FitOptions, FitResult, FixMask};
use crate::intensity::EtasParams;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Options for [`two_stage_fit`] and [`search_changepoint`].
#[derive(Debug, Clone, Copy)]
pub struct ChangePointOptions {
    /// Search-penalty degrees of freedom; AIC12 carries a `+2q` term.
    pub q_penalty: f64,
    /// Base fit options (fix mask, tolerances) for all three fits.
    pub fit: FitOptions,
    /// Reference-constrained mode: fix (c, alpha, p) at these values and
    /// refit only (mu, K0) everywhere, starting from the reference.
    pub reference: Option<EtasParams>,
    /// Start the second period with no pre-t0 triggering history.
    pub hard_reset: bool,
}

impl Default for ChangePointOptions {
    fn default() -> Self {
        ChangePointOptions {
            q_penalty: 0.0,
            fit: FitOptions::default(),
            reference: None,
            hard_reset: false,
        }
    }
}

/// Result of a two-stage comparison at one change point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangePointReport {
    pub t0: f64,
    pub q_penalty: f64,
    pub aic0: f64,
    pub aic1: f64,
    pub aic2: f64,
    pub aic12: f64,
    pub delta_aic: f64,
    /// `delta_aic < 0`: the split model is preferred.
    pub significant: bool,
    /// `exp(-delta_aic / 2)`, the relative probability of the split model
    /// against the single-model fit.
    pub relative_probability: f64,
    pub whole: FitResult,
    pub before: FitResult,
    pub after: FitResult,
}

impl ChangePointReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The AIC arithmetic of the two-stage comparison, separated out so the
/// bookkeeping is checkable on published values: returns
/// `(aic12, delta_aic)` with `aic12 = aic1 + aic2 + 2q`.
pub fn assemble_split_aic(aic0: f64, aic1: f64, aic2: f64, q: f64) -> (f64, f64) {
    let aic12 = aic1 + aic2 + 2.0 * q;
    (aic12, aic12 - aic0)
}

fn effective_fit_options(options: &ChangePointOptions) -> FitOptions {
    match options.reference {
        Some(reference) => FitOptions {
            fix: FixMask::shape_fixed(),
            init: Some(reference),
            ..options.fit
        },
        None => options.fit,
    }
}

/// Splits the catalog at t0: period 1 is [S, t0) and period 2 is [t0, T],
/// an event exactly at t0 opening the second period. Unless `hard_reset`,
/// everything before t0 stays available to period 2 as history.
fn split_catalog(catalog: &Catalog, t0: f64, hard_reset: bool) -> Result<(Catalog, Catalog)> {
    let threshold = catalog.threshold();
    let hs = catalog.history_start();
    let p1_events: Vec<Event> = catalog
        .all_events()
        .iter()
        .copied()
        .filter(|e| e.time < t0)
        .collect();
    let p1 = Catalog::with_history(p1_events, hs, catalog.window_start(), t0, threshold)?;
    let p2 = if hard_reset {
        let events: Vec<Event> = catalog
            .all_events()
            .iter()
            .copied()
            .filter(|e| e.time >= t0)
            .collect();
        Catalog::new(events, t0, catalog.window_end(), threshold)?
    } else {
        Catalog::with_history(
            catalog.all_events().to_vec(),
            hs.min(t0),
            t0,
            catalog.window_end(),
            threshold,
        )?
    };
    if p1.n_in_window() == 0 {
        return Err(EtasError::EmptyPeriod {
            start: catalog.window_start(),
            end: t0,
        });
    }
    if p2.n_in_window() == 0 {
        return Err(EtasError::EmptyPeriod {
            start: t0,
            end: catalog.window_end(),
        });
    }
    Ok((p1, p2))
}

fn fit_periods(
    catalog: &Catalog,
    t0: f64,
    options: &ChangePointOptions,
    whole: &FitResult,
) -> Result<(FitResult, FitResult)> {
    let (p1, p2) = split_catalog(catalog, t0, options.hard_reset)?;
    // periods start from the whole-window optimum, so the ascent property
    // of the fitter guarantees loglik1 + loglik2 >= loglik0
    let opts = FitOptions {
        init: Some(whole.params),
        ..effective_fit_options(options)
    };
    Ok((fit_mle(&p1, &opts)?, fit_mle(&p2, &opts)?))
}

fn assemble_report(
    t0: f64,
    options: &ChangePointOptions,
    whole: FitResult,
    before: FitResult,
    after: FitResult,
) -> ChangePointReport {
    let (aic12, delta_aic) = assemble_split_aic(whole.aic, before.aic, after.aic, options.q_penalty);
    ChangePointReport {
        t0,
        q_penalty: options.q_penalty,
        aic0: whole.aic,
        aic1: before.aic,
        aic2: after.aic,
        aic12,
        delta_aic,
        significant: delta_aic < 0.0,
        // clamp the exponent so extreme splits stay finite in reports
        relative_probability: relative_probability(delta_aic.clamp(-1400.0, 1400.0)),
        whole,
        before,
        after,
    }
}

/// Two-stage comparison at a predetermined change point.
pub fn two_stage_fit(
    catalog: &Catalog,
    t0: f64,
    options: &ChangePointOptions,
) -> Result<ChangePointReport> {
    if !(catalog.window_start() < t0 && t0 < catalog.window_end()) {
        return Err(EtasError::invalid(format!(
            "change point {t0} must lie strictly inside ({}, {})",
            catalog.window_start(),
            catalog.window_end()
        )));
    }
    let whole = fit_mle(catalog, &effective_fit_options(options))?;
    let (before, after) = fit_periods(catalog, t0, options, &whole)?;
    Ok(assemble_report(t0, options, whole, before, after))
}

/// One evaluated candidate in a change-point search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateResult {
    pub t0: f64,
    pub aic1: f64,
    pub aic2: f64,
    pub aic12: f64,
    pub delta_aic: f64,
}

/// Result of [`search_changepoint`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangePointSearch {
    /// Candidates in ascending t0 order (failed fits skipped).
    pub evaluated: Vec<CandidateResult>,
    pub n_skipped: usize,
    /// Full report at the arg-min of AIC1 + AIC2.
    pub best: ChangePointReport,
}

impl ChangePointSearch {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Minimizes AIC1 + AIC2 over candidate change points (default: the
/// in-window event times strictly inside the window). Candidates whose
/// period fits fail (for instance an empty first period) are skipped.
/// Candidate fits run in parallel.
pub fn search_changepoint(
    catalog: &Catalog,
    candidates: Option<&[f64]>,
    options: &ChangePointOptions,
) -> Result<ChangePointSearch> {
    let mut grid: Vec<f64> = match candidates {
        Some(c) => c.to_vec(),
        None => catalog.in_window().iter().map(|e| e.time).collect(),
    };
    grid.retain(|&t| catalog.window_start() < t && t < catalog.window_end());
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid.is_empty() {
        return Err(EtasError::invalid("no candidate change points inside the window"));
    }

    let whole = fit_mle(catalog, &effective_fit_options(options))?;

    let n_threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
        .min(grid.len());
    let chunk = grid.len().div_ceil(n_threads);
    let mut outcomes: Vec<Option<(FitResult, FitResult)>> = Vec::with_capacity(grid.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .chunks(chunk)
            .map(|ts| {
                let whole = &whole;
                scope.spawn(move || {
                    ts.iter()
                        .map(|&t0| fit_periods(catalog, t0, options, whole).ok())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            outcomes.extend(h.join().expect("candidate fit thread panicked"));
        }
    });

    let mut evaluated = Vec::new();
    let mut n_skipped = 0;
    let mut best: Option<(f64, f64, FitResult, FitResult)> = None;
    for (&t0, outcome) in grid.iter().zip(outcomes) {
        match outcome {
            Some((before, after)) => {
                let (aic12, delta_aic) =
                    assemble_split_aic(whole.aic, before.aic, after.aic, options.q_penalty);
                evaluated.push(CandidateResult {
                    t0,
                    aic1: before.aic,
                    aic2: after.aic,
                    aic12,
                    delta_aic,
                });
                let better = best.as_ref().map_or(true, |(b, ..)| aic12 < *b);
                if better {
                    best = Some((aic12, t0, before, after));
                }
            }
            None => n_skipped += 1,
        }
    }
    let (_, t0, before, after) =
        best.ok_or_else(|| EtasError::invalid("every candidate change point failed to fit"))?;
    Ok(ChangePointSearch {
        evaluated,
        n_skipped,
        best: assemble_report(t0, options, whole, before, after),
    })
}
