//! `etas simulate`: catalog synthesis by thinning, from a stationary
//! parameter set or a fitted time-varying model.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use etas::simulate::{
    branching_ratio, simulate_anomaly, simulate_stationary, GutenbergRichter, SimOptions,
};

use crate::common::{fmt_f64, parse_window, resolve_params, CliError, CliResult, ParamArgs};
use crate::config::Config;
use crate::output::RunDir;
use crate::plot::{Plot, PALETTE};

const CONFIG_KEYS: &[&str] = &[
    "window",
    "threshold",
    "b_value",
    "seed",
    "max_events",
    "mu",
    "k0",
    "c",
    "alpha",
    "p",
];

#[derive(Args, Debug)]
pub struct SimulateCmd {
    /// Config file with key=value lines mirroring the long options
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Simulation window as "START,END" (days). Defaults to the model
    /// window when --bayesfit is given.
    #[arg(long, value_name = "S,T")]
    pub window: Option<String>,

    /// Magnitude threshold (completeness cutoff) of the synthetic catalog
    #[arg(long, value_name = "MAG")]
    pub threshold: Option<f64>,

    /// Gutenberg-Richter b-value for the magnitude draws
    #[arg(long, value_name = "B")]
    pub b_value: Option<f64>,

    /// Fit report (fit.json) supplying the parameters
    #[arg(long, value_name = "FILE", conflicts_with = "bayesfit")]
    pub reference: Option<PathBuf>,

    /// Explicit parameters (override --reference values)
    #[command(flatten)]
    pub params: ParamArgs,

    /// Nonstationary fit report (bayesfit.json): simulate its time-varying
    /// model instead of a stationary one
    #[arg(long, value_name = "FILE")]
    pub bayesfit: Option<PathBuf>,

    /// RNG seed
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Hard cap on generated events
    #[arg(long, value_name = "N")]
    pub max_events: Option<usize>,

    /// Output directory (defaults to a content-addressed path under etas-out/)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn merge_config(cmd: &mut SimulateCmd) -> CliResult<()> {
    let Some(path) = &cmd.config else {
        return Ok(());
    };
    let cfg = Config::load(path, CONFIG_KEYS)?;
    cmd.window = cmd.window.take().or_else(|| cfg.get("window").map(String::from));
    if cmd.threshold.is_none() {
        cmd.threshold = cfg.get_f64("threshold")?;
    }
    if cmd.b_value.is_none() {
        cmd.b_value = cfg.get_f64("b_value")?;
    }
    if cmd.seed.is_none() {
        cmd.seed = cfg.get_u64("seed")?;
    }
    if cmd.max_events.is_none() {
        cmd.max_events = cfg.get_u64("max_events")?.map(|v| v as usize);
    }
    for (slot, key) in [
        (&mut cmd.params.mu, "mu"),
        (&mut cmd.params.k0, "k0"),
        (&mut cmd.params.c, "c"),
        (&mut cmd.params.alpha, "alpha"),
        (&mut cmd.params.p, "p"),
    ] {
        if slot.is_none() {
            *slot = cfg.get_f64(key)?;
        }
    }
    Ok(())
}

pub fn run(mut cmd: SimulateCmd) -> CliResult<PathBuf> {
    merge_config(&mut cmd)?;

    let model = match &cmd.bayesfit {
        Some(path) => Some(crate::cmd_nsfit::load_model(path)?),
        None => None,
    };

    let window = match (&cmd.window, &model) {
        (Some(text), _) => parse_window(text)?,
        (None, Some((_, m))) => {
            let knots = m.basis.knots();
            (knots[0], knots[knots.len() - 1])
        }
        (None, None) => {
            return Err(CliError::usage(
                "--window START,END is required without --bayesfit".to_string(),
            ))
        }
    };

    let threshold = cmd.threshold.unwrap_or(3.0);
    let b_value = cmd.b_value.unwrap_or(1.0);
    let seed = cmd.seed.unwrap_or(0);

    let magnitudes = GutenbergRichter::new(threshold, b_value)?;
    let mut options = SimOptions::new(window, magnitudes, seed);
    if let Some(cap) = cmd.max_events {
        options.max_events = cap;
    }

    let mut params = BTreeMap::new();
    params.insert("window_start".into(), fmt_f64(window.0));
    params.insert("window_end".into(), fmt_f64(window.1));
    params.insert("threshold".into(), fmt_f64(threshold));
    params.insert("b_value".into(), fmt_f64(b_value));
    params.insert("seed".into(), seed.to_string());
    params.insert("max_events".into(), options.max_events.to_string());

    let (outcome, rho, model_label) = match &model {
        Some((stored, m)) => {
            params.insert("model".into(), "nonstationary".into());
            params.insert(
                "bayesfit_fnv64".into(),
                format!(
                    "{:016x}",
                    crate::output::fnv1a64(stored.to_json()?.as_bytes())
                ),
            );
            params.insert(
                "reference".into(),
                m.reference.as_array().map(fmt_f64).join(","),
            );
            let rho = branching_ratio(&m.reference, &magnitudes);
            (simulate_anomaly(m, &options)?, rho, "time-varying model")
        }
        None => {
            let p = resolve_params(cmd.reference.as_deref(), &cmd.params)?.ok_or_else(|| {
                CliError::usage(
                    "model parameters required: pass --reference FILE, explicit \
                     --mu..--p flags, or --bayesfit FILE"
                        .to_string(),
                )
            })?;
            params.insert("model".into(), "stationary".into());
            params.insert("params".into(), p.as_array().map(fmt_f64).join(","));
            let rho = branching_ratio(&p, &magnitudes);
            (simulate_stationary(&p, &options)?, rho, "stationary model")
        }
    };

    let catalog = &outcome.catalog;
    for note in &outcome.notes {
        eprintln!("note: {note}");
    }

    let mut run = RunDir::create("simulate", params, None, cmd.out.as_deref())?;
    run.write_text("catalog.csv", &catalog.to_csv())?;

    let summary = serde_json::json!({
        "model": model_label,
        "n_events": catalog.n_in_window(),
        "window": [window.0, window.1],
        "threshold": threshold,
        "b_value": b_value,
        "seed": seed,
        "branching_ratio": if rho.is_finite() { Some(rho) } else { None },
        "supercritical": rho >= 1.0,
        "truncated": outcome.truncated,
        "notes": outcome.notes,
    });
    run.write_text(
        "summary.json",
        &serde_json::to_string_pretty(&summary).map_err(|e| CliError::runtime(e.to_string()))?,
    )?;

    let mut counts = Vec::with_capacity(catalog.n_in_window() + 2);
    counts.push((window.0, 0.0));
    for (k, event) in catalog.in_window().iter().enumerate() {
        counts.push((event.time, (k + 1) as f64));
    }
    counts.push((window.1, catalog.n_in_window() as f64));
    let plot = Plot::new(
        &format!("Simulated catalog ({model_label})"),
        "time (days)",
        "events",
    )
    .step("N(t)", PALETTE[0], counts);
    run.write_text("counts.svg", &plot.render())?;

    let dir = run.finish()?;
    println!(
        "simulate: {} events in [{}, {}], branching ratio = {}",
        catalog.n_in_window(),
        fmt_f64(window.0),
        fmt_f64(window.1),
        if rho.is_finite() {
            format!("{rho:.4}")
        } else {
            "divergent".to_string()
        }
    );
    if outcome.truncated {
        println!("run stopped early at the {} event cap", options.max_events);
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}
