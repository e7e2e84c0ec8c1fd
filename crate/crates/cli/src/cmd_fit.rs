//! `etas fit`: maximum-likelihood estimation of the stationary model.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use etas::fit::{fit_mle_multistart, FitOptions, FixMask};
use etas::intensity::cumulative_intensity;

use crate::common::{fmt_f64, load_catalog, CatalogArgs, CliError, CliResult, ParamArgs};
use crate::config::Config;
use crate::output::RunDir;
use crate::plot::{Plot, PALETTE};

const CONFIG_KEYS: &[&str] = &[
    "window",
    "threshold",
    "history_start",
    "fix",
    "mu",
    "k0",
    "c",
    "alpha",
    "p",
    "restarts",
    "seed",
];

#[derive(Args, Debug)]
pub struct FitCmd {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Config file with key=value lines mirroring the long options
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Comma-separated parameters to hold fixed (subset of mu,k0,c,alpha,p);
    /// each fixed parameter needs an explicit value flag
    #[arg(long, value_name = "LIST")]
    pub fix: Option<String>,

    /// Initial values (and pinned values for fixed parameters)
    #[command(flatten)]
    pub init: ParamArgs,

    /// Extra randomized optimizer starts beyond the default one
    #[arg(long, value_name = "N")]
    pub restarts: Option<usize>,

    /// Seed for the randomized restarts
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Output directory (defaults to a content-addressed path under etas-out/)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Fill unset command-line options from a config file.
fn merge_config(cmd: &mut FitCmd) -> CliResult<()> {
    let Some(path) = &cmd.config else {
        return Ok(());
    };
    let cfg = Config::load(path, CONFIG_KEYS)?;
    let cat = &mut cmd.catalog;
    cat.window = cat.window.take().or_else(|| cfg.get("window").map(String::from));
    cat.threshold = match cat.threshold {
        Some(v) => Some(v),
        None => cfg.get_f64("threshold")?,
    };
    cat.history_start = match cat.history_start {
        Some(v) => Some(v),
        None => cfg.get_f64("history_start")?,
    };
    cmd.fix = cmd.fix.take().or_else(|| cfg.get("fix").map(String::from));
    for (slot, key) in [
        (&mut cmd.init.mu, "mu"),
        (&mut cmd.init.k0, "k0"),
        (&mut cmd.init.c, "c"),
        (&mut cmd.init.alpha, "alpha"),
        (&mut cmd.init.p, "p"),
    ] {
        if slot.is_none() {
            *slot = cfg.get_f64(key)?;
        }
    }
    if cmd.restarts.is_none() {
        cmd.restarts = cfg.get_u64("restarts")?.map(|v| v as usize);
    }
    if cmd.seed.is_none() {
        cmd.seed = cfg.get_u64("seed")?;
    }
    Ok(())
}

pub fn parse_fix_mask(spec: &str, init: &ParamArgs) -> CliResult<FixMask> {
    let mut mask = FixMask::none();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        mask.set(name, true)
            .map_err(|e| CliError::usage(e.to_string()))?;
        let has_value = match name {
            "mu" => init.mu.is_some(),
            "k0" => init.k0.is_some(),
            "c" => init.c.is_some(),
            "alpha" => init.alpha.is_some(),
            "p" => init.p.is_some(),
            _ => unreachable!("mask.set validated the name"),
        };
        if !has_value {
            return Err(CliError::usage(format!(
                "--fix {name} requires an explicit --{name} value"
            )));
        }
    }
    Ok(mask)
}

pub fn run(mut cmd: FitCmd) -> CliResult<PathBuf> {
    merge_config(&mut cmd)?;
    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }

    let fix = match &cmd.fix {
        Some(spec) => parse_fix_mask(spec, &cmd.init)?,
        None => FixMask::none(),
    };
    let init = if cmd.init.any_set() {
        Some(cmd.init.apply(etas::fit::default_init(catalog)))
    } else {
        None
    };
    let restarts = cmd.restarts.unwrap_or(2);
    let seed = cmd.seed.unwrap_or(0);

    let options = FitOptions {
        fix,
        init,
        ..FitOptions::default()
    };
    let fit = fit_mle_multistart(catalog, &options, restarts, seed)?;

    let mut params = BTreeMap::new();
    params.insert("window_start".into(), fmt_f64(catalog.window_start()));
    params.insert("window_end".into(), fmt_f64(catalog.window_end()));
    params.insert("threshold".into(), fmt_f64(catalog.threshold()));
    params.insert("history_start".into(), fmt_f64(catalog.history_start()));
    params.insert("fix".into(), cmd.fix.clone().unwrap_or_default());
    params.insert("restarts".into(), restarts.to_string());
    params.insert("seed".into(), seed.to_string());
    if let Some(init) = &options.init {
        params.insert("init".into(), init.as_array().map(fmt_f64).join(","));
    }

    let mut run = RunDir::create(
        "fit",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;

    run.write_text("fit.json", &fit.to_json()?)?;

    // Observed vs fitted counting process at the event times.
    let mut csv = String::from("time,observed,fitted\n");
    let mut observed = Vec::with_capacity(catalog.n_in_window() + 2);
    let mut fitted = Vec::with_capacity(catalog.n_in_window() + 2);
    observed.push((catalog.window_start(), 0.0));
    fitted.push((catalog.window_start(), 0.0));
    for (k, event) in catalog.in_window().iter().enumerate() {
        let lambda = cumulative_intensity(&fit.params, catalog, event.time)?;
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(event.time),
            k + 1,
            fmt_f64(lambda)
        ));
        observed.push((event.time, (k + 1) as f64));
        fitted.push((event.time, lambda));
    }
    let total = cumulative_intensity(&fit.params, catalog, catalog.window_end())?;
    observed.push((catalog.window_end(), catalog.n_in_window() as f64));
    fitted.push((catalog.window_end(), total));
    run.write_text("cumulative.csv", &csv)?;

    let plot = Plot::new(
        "Observed vs fitted cumulative counts",
        "time (days)",
        "events",
    )
    .step("observed N(t)", PALETTE[0], observed)
    .line("fitted \u{039b}(t)", PALETTE[1], fitted);
    run.write_text("cumulative.svg", &plot.render())?;

    let dir = run.finish()?;
    println!(
        "fit: n = {}, logL = {:.4}, AIC = {:.4}, converged = {}",
        fit.n_events, fit.loglik, fit.aic, fit.converged
    );
    for (name, value, se) in [
        ("mu", fit.params.mu, fit.se[0]),
        ("K0", fit.params.k0, fit.se[1]),
        ("c", fit.params.c, fit.se[2]),
        ("alpha", fit.params.alpha, fit.se[3]),
        ("p", fit.params.p, fit.se[4]),
    ] {
        match se {
            Some(se) => println!("  {name:<5} = {value:.6} +/- {se:.6}"),
            None => println!("  {name:<5} = {value:.6} (fixed)"),
        }
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}
