//! `etas residual`: transformed-time residual analysis.
//!
//! Under the fitted model the event times mapped through `tau = Lambda(t)`
//! form a standard Poisson process; the command writes the transformed
//! sequence, a one-sample Kolmogorov-Smirnov test of the Exp(1) gaps, and a
//! plot of the transformed counting process against its expectation line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use etas::bayes::BayesFit;
use etas::intensity::{transform_times, ResidualSequence};
use etas::nonstationary::ns_transform_times;
use etas::stats::ks_exp1;

use crate::common::{
    fmt_f64, load_catalog, resolve_params, CatalogArgs, CliError, CliResult, ParamArgs,
};
use crate::output::RunDir;
use crate::plot::{Plot, PALETTE};

#[derive(Args, Debug)]
pub struct ResidualCmd {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Fit report (fit.json) supplying the model parameters
    #[arg(long, value_name = "FILE", conflicts_with = "bayesfit")]
    pub reference: Option<PathBuf>,

    /// Explicit model parameters (override --reference values)
    #[command(flatten)]
    pub params: ParamArgs,

    /// Nonstationary fit report (bayesfit.json): transform with the
    /// time-varying model instead of a stationary one
    #[arg(long, value_name = "FILE")]
    pub bayesfit: Option<PathBuf>,

    /// Output directory (defaults to a content-addressed path under etas-out/)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn run(cmd: ResidualCmd) -> CliResult<PathBuf> {
    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }

    let mut params = BTreeMap::new();
    params.insert("window_start".into(), fmt_f64(catalog.window_start()));
    params.insert("window_end".into(), fmt_f64(catalog.window_end()));
    params.insert("threshold".into(), fmt_f64(catalog.threshold()));
    params.insert("history_start".into(), fmt_f64(catalog.history_start()));

    let (residuals, model_label): (ResidualSequence, String) = match &cmd.bayesfit {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read {}: {e}", path.display()))
            })?;
            let fit = BayesFit::from_json(&text).map_err(|e| {
                CliError::usage(format!("{} is not a nonstationary fit: {e}", path.display()))
            })?;
            let model = &fit.outcome.model;
            params.insert("model".into(), "nonstationary".into());
            // The factor estimates in the model file shape the output, so
            // fold its content hash into the run identity.
            params.insert(
                "bayesfit_fnv64".into(),
                format!("{:016x}", crate::output::fnv1a64(text.as_bytes())),
            );
            params.insert(
                "reference".into(),
                model.reference.as_array().map(fmt_f64).join(","),
            );
            (
                ns_transform_times(model, catalog)?,
                "time-varying model".to_string(),
            )
        }
        None => {
            let model = resolve_params(cmd.reference.as_deref(), &cmd.params)?.ok_or_else(|| {
                CliError::usage(
                    "model parameters required: pass --reference FILE, explicit \
                     --mu..--p flags, or --bayesfit FILE"
                        .to_string(),
                )
            })?;
            params.insert("model".into(), "stationary".into());
            params.insert("params".into(), model.as_array().map(fmt_f64).join(","));
            (transform_times(&model, catalog)?, "stationary model".to_string())
        }
    };

    let gaps = residuals.gaps();
    let ks = ks_exp1(&gaps);

    let mut run = RunDir::create(
        "residual",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;

    let mut csv = String::from("index,time,tau\n");
    for (k, (event, tau)) in catalog.in_window().iter().zip(&residuals.tau).enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            k + 1,
            fmt_f64(event.time),
            fmt_f64(*tau)
        ));
    }
    run.write_text("residual.csv", &csv)?;

    let report = serde_json::json!({
        "model": model_label,
        "n_events": residuals.tau.len(),
        "total_transformed_time": residuals.total,
        "ks_statistic": ks.statistic,
        "ks_p_value": ks.p_value,
        "ks_n": ks.n,
    });
    run.write_text(
        "ks.json",
        &serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?,
    )?;

    let mut steps = Vec::with_capacity(residuals.tau.len() + 2);
    steps.push((0.0, 0.0));
    for (k, tau) in residuals.tau.iter().enumerate() {
        steps.push((*tau, (k + 1) as f64));
    }
    steps.push((residuals.total, residuals.tau.len() as f64));
    let diag = vec![(0.0, 0.0), (residuals.total, residuals.total)];
    let plot = Plot::new(
        &format!("Transformed-time residuals ({model_label})"),
        "transformed time \u{03c4}",
        "events",
    )
    .step("observed N(\u{03c4})", PALETTE[0], steps)
    .line("expectation", PALETTE[2], diag);
    run.write_text("residual.svg", &plot.render())?;

    let dir = run.finish()?;
    println!(
        "residual: n = {}, total transformed time = {:.4}",
        residuals.tau.len(),
        residuals.total
    );
    println!(
        "KS vs Exp(1) gaps: D = {:.4}, p = {:.4} ({})",
        ks.statistic,
        ks.p_value,
        if ks.p_value >= 0.05 {
            "consistent with a standard Poisson process"
        } else {
            "departs from a standard Poisson process"
        }
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}
