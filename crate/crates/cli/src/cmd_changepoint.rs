//! `etas changepoint`: two-stage AIC comparison of a single fit against a
//! split fit around a change point, either at a prespecified time (`--t0`)
//! or searched over the in-window event times.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use etas::changepoint::{search_changepoint, two_stage_fit, ChangePointOptions};
use etas::fit::FitOptions;

use crate::common::{
    fmt_f64, load_catalog, resolve_params, CatalogArgs, CliError, CliResult, ParamArgs,
};
use crate::config::Config;
use crate::output::RunDir;
use crate::plot::{Plot, PALETTE};

const CONFIG_KEYS: &[&str] = &[
    "window",
    "threshold",
    "history_start",
    "t0",
    "q",
    "hard_reset",
    "reference_constrained",
];

#[derive(Args, Debug)]
pub struct ChangepointCmd {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Config file with key=value lines mirroring the long options
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Evaluate this single candidate change point instead of searching
    #[arg(long, value_name = "TIME")]
    pub t0: Option<f64>,

    /// Search-penalty degrees of freedom q; the split model pays +2q.
    /// Defaults to 0 with --t0 (hypothesis fixed in advance) and to the
    /// number of free parameters per period when searching.
    #[arg(long, value_name = "Q")]
    pub q: Option<f64>,

    /// Refit only (mu, K0) in the subperiods, holding (c, alpha, p) at the
    /// reference values (from --reference or the whole-window fit)
    #[arg(long)]
    pub reference_constrained: bool,

    /// Fit report or explicit parameters used as the reference shape
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,

    /// Explicit reference parameters (override --reference values)
    #[command(flatten)]
    pub params: ParamArgs,

    /// Drop the pre-t0 triggering history when fitting the second period
    #[arg(long)]
    pub hard_reset: bool,

    /// Output directory (defaults to a content-addressed path under etas-out/)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn merge_config(cmd: &mut ChangepointCmd) -> CliResult<()> {
    let Some(path) = &cmd.config else {
        return Ok(());
    };
    let cfg = Config::load(path, CONFIG_KEYS)?;
    let cat = &mut cmd.catalog;
    cat.window = cat.window.take().or_else(|| cfg.get("window").map(String::from));
    if cat.threshold.is_none() {
        cat.threshold = cfg.get_f64("threshold")?;
    }
    if cat.history_start.is_none() {
        cat.history_start = cfg.get_f64("history_start")?;
    }
    if cmd.t0.is_none() {
        cmd.t0 = cfg.get_f64("t0")?;
    }
    if cmd.q.is_none() {
        cmd.q = cfg.get_f64("q")?;
    }
    for (flag, key) in [
        (&mut cmd.hard_reset, "hard_reset"),
        (&mut cmd.reference_constrained, "reference_constrained"),
    ] {
        if !*flag {
            if let Some(raw) = cfg.get(key) {
                *flag = match raw {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    other => {
                        return Err(CliError::usage(format!(
                            "config key {key}: {other:?} is not a boolean"
                        )))
                    }
                };
            }
        }
    }
    Ok(())
}

pub fn run(mut cmd: ChangepointCmd) -> CliResult<PathBuf> {
    merge_config(&mut cmd)?;
    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }

    if let Some(t0) = cmd.t0 {
        if !(catalog.window_start() < t0 && t0 < catalog.window_end()) {
            return Err(CliError::usage(format!(
                "--t0 {t0} must lie strictly inside the window ({}, {})",
                catalog.window_start(),
                catalog.window_end()
            )));
        }
    }

    let explicit_reference = resolve_params(cmd.reference.as_deref(), &cmd.params)?;
    let reference = if cmd.reference_constrained {
        match explicit_reference {
            Some(params) => Some(params),
            // No reference given: use the whole-window fit as the shape.
            None => {
                let whole = etas::fit::fit_mle_multistart(
                    catalog,
                    &FitOptions::default(),
                    2,
                    0,
                )?;
                eprintln!(
                    "reference fit: mu = {:.6}, K0 = {:.6}, c = {:.6}, alpha = {:.6}, p = {:.6}",
                    whole.params.mu,
                    whole.params.k0,
                    whole.params.c,
                    whole.params.alpha,
                    whole.params.p
                );
                Some(whole.params)
            }
        }
    } else {
        if explicit_reference.is_some() {
            return Err(CliError::usage(
                "reference parameters only apply with --reference-constrained".to_string(),
            ));
        }
        None
    };

    let n_free_per_period = if reference.is_some() { 2.0 } else { 5.0 };
    let searching = cmd.t0.is_none();
    let q = cmd
        .q
        .unwrap_or(if searching { n_free_per_period } else { 0.0 });
    if q < 0.0 {
        return Err(CliError::usage(format!("penalty q must be >= 0, got {q}")));
    }

    let options = ChangePointOptions {
        q_penalty: q,
        reference,
        hard_reset: cmd.hard_reset,
        ..ChangePointOptions::default()
    };

    let mut params = BTreeMap::new();
    params.insert("window_start".into(), fmt_f64(catalog.window_start()));
    params.insert("window_end".into(), fmt_f64(catalog.window_end()));
    params.insert("threshold".into(), fmt_f64(catalog.threshold()));
    params.insert("history_start".into(), fmt_f64(catalog.history_start()));
    params.insert("q".into(), fmt_f64(q));
    params.insert("hard_reset".into(), cmd.hard_reset.to_string());
    if let Some(r) = &options.reference {
        params.insert("reference".into(), r.as_array().map(fmt_f64).join(","));
    }
    if let Some(t0) = cmd.t0 {
        params.insert("t0".into(), fmt_f64(t0));
    } else {
        params.insert("t0".into(), "search".into());
    }

    let mut run = RunDir::create(
        "changepoint",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;

    let report = match cmd.t0 {
        Some(t0) => {
            let report = two_stage_fit(catalog, t0, &options)?;
            run.write_text("report.json", &report.to_json()?)?;
            report
        }
        None => {
            let search = search_changepoint(catalog, None, &options)?;
            let mut csv = String::from("t0,aic1,aic2,aic12,delta_aic\n");
            let mut profile = Vec::with_capacity(search.evaluated.len());
            for c in &search.evaluated {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(c.t0),
                    fmt_f64(c.aic1),
                    fmt_f64(c.aic2),
                    fmt_f64(c.aic12),
                    fmt_f64(c.delta_aic)
                ));
                profile.push((c.t0, c.delta_aic));
            }
            run.write_text("profile.csv", &csv)?;
            let plot = Plot::new(
                "Change-point profile",
                "candidate t0 (days)",
                "\u{0394}AIC (split - single)",
            )
            .line("\u{0394}AIC", PALETTE[0], profile)
            .line(
                "",
                PALETTE[2],
                vec![
                    (catalog.window_start(), 0.0),
                    (catalog.window_end(), 0.0),
                ],
            )
            .vline(search.best.t0);
            run.write_text("profile.svg", &plot.render())?;
            run.write_text("report.json", &search.best.to_json()?)?;
            if search.n_skipped > 0 {
                eprintln!(
                    "note: {} candidate(s) skipped because a period fit failed",
                    search.n_skipped
                );
            }
            search.best
        }
    };

    let dir = run.finish()?;
    println!(
        "changepoint: t0 = {:.4}, AIC0 = {:.4}, AIC1+AIC2+2q = {:.4}, dAIC = {:.4}",
        report.t0, report.aic0, report.aic12, report.delta_aic
    );
    println!(
        "split model {} (relative probability {:.4})",
        if report.significant {
            "preferred"
        } else {
            "not preferred"
        },
        report.relative_probability
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}
