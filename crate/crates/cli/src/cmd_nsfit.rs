//! `etas nsfit`: penalized estimation of time-varying background and
//! productivity factors with empirical-Bayes smoothness selection.
//!
//! The default mode fits one model configuration (restriction x smoothing
//! domain x optional change point) and reports its ABIC against the
//! stationary baseline. `--models all` fits the full twelve-configuration
//! scoreboard in parallel and keeps the best by ABIC.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use etas::bayes::{bayes_fit, log_marginal, BayesFit, BayesOptions};
use etas::fit::{fit_mle_multistart, FitOptions};
use etas::nonstationary::{
    map_estimate, AnomalyModel, MapOptions, NsModelSpec, Restriction, SmoothingDomain,
};
use etas::EtasParams;

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
    "restriction",
    "domain",
    "changepoint",
    "models",
    "threads",
    "restarts",
    "count_all_hyperparams",
];

#[derive(Args, Debug)]
pub struct NsfitCmd {
    #[command(flatten)]
    pub catalog: CatalogArgs,

    /// Config file with key=value lines mirroring the long options
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Factor restriction: fix-qk (background only), tied (one shared
    /// factor), or free (independent factors) [default: free]
    #[arg(long, value_name = "NAME")]
    pub restriction: Option<String>,

    /// Roughness domain: ordinary (calendar time) or transformed
    /// (reference-model transformed time) [default: ordinary]
    #[arg(long, value_name = "NAME")]
    pub domain: Option<String>,

    /// Allow an abrupt change at this time (relaxes the smoothness penalty
    /// across it); with --models all it is required and drives the
    /// change-point variants
    #[arg(long, value_name = "TIME")]
    pub changepoint: Option<f64>,

    /// "all": fit every restriction x domain x change-point combination
    #[arg(long, value_name = "WHICH")]
    pub models: Option<String>,

    /// Worker threads for --models all (default: available parallelism)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,

    /// Fit report (fit.json) with the stationary reference parameters;
    /// fitted from the data when absent
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,

    /// Explicit reference parameters (override --reference values)
    #[command(flatten)]
    pub params: ParamArgs,

    /// Reuse the hyperparameters stored in an earlier bayesfit.json instead
    /// of searching (the model spec and reference come from the file)
    #[arg(long, value_name = "FILE")]
    pub from_bayesfit: Option<PathBuf>,

    /// Count boundary values as selected hyperparameters in the ABIC
    /// penalty (4/4/8 instead of 2/2/4 per restriction)
    #[arg(long)]
    pub count_all_hyperparams: bool,

    /// Extra hyperparameter-search restarts
    #[arg(long, value_name = "N")]
    pub restarts: Option<usize>,

    /// Output directory (defaults to a content-addressed path under etas-out/)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn merge_config(cmd: &mut NsfitCmd) -> CliResult<()> {
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
    cmd.restriction = cmd
        .restriction
        .take()
        .or_else(|| cfg.get("restriction").map(String::from));
    cmd.domain = cmd.domain.take().or_else(|| cfg.get("domain").map(String::from));
    if cmd.changepoint.is_none() {
        cmd.changepoint = cfg.get_f64("changepoint")?;
    }
    cmd.models = cmd.models.take().or_else(|| cfg.get("models").map(String::from));
    if cmd.threads.is_none() {
        cmd.threads = cfg.get_u64("threads")?.map(|v| v as usize);
    }
    if cmd.restarts.is_none() {
        cmd.restarts = cfg.get_u64("restarts")?.map(|v| v as usize);
    }
    if !cmd.count_all_hyperparams {
        if let Some(raw) = cfg.get("count_all_hyperparams") {
            cmd.count_all_hyperparams = matches!(raw, "true" | "1" | "yes");
        }
    }
    Ok(())
}

fn parse_restriction(name: &str) -> CliResult<Restriction> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "fix-qk" | "fixqk" | "background" => Ok(Restriction::FixQk),
        "tied" | "common" => Ok(Restriction::Tied),
        "free" => Ok(Restriction::Free),
        other => Err(CliError::usage(format!(
            "unknown restriction {other:?} (expected fix-qk, tied, or free)"
        ))),
    }
}

fn parse_domain(name: &str) -> CliResult<SmoothingDomain> {
    match name.to_ascii_lowercase().as_str() {
        "ordinary" => Ok(SmoothingDomain::Ordinary),
        "transformed" => Ok(SmoothingDomain::Transformed),
        other => Err(CliError::usage(format!(
            "unknown domain {other:?} (expected ordinary or transformed)"
        ))),
    }
}

fn restriction_tag(r: Restriction) -> &'static str {
    match r {
        Restriction::FixQk => "fixqk",
        Restriction::Tied => "tied",
        Restriction::Free => "free",
    }
}

fn domain_tag(d: SmoothingDomain) -> &'static str {
    match d {
        SmoothingDomain::Ordinary => "ordinary",
        SmoothingDomain::Transformed => "transformed",
    }
}

fn spec_tag(spec: &NsModelSpec) -> String {
    let mut tag = format!(
        "{}-{}",
        restriction_tag(spec.restriction),
        domain_tag(spec.domain)
    );
    if spec.changepoint.is_some() {
        tag.push_str("-cp");
    }
    tag
}

/// Factor curves at the knots with error half-widths (zero when absent).
fn factor_rows(fit: &BayesFit) -> Vec<(f64, f64, f64, f64, f64)> {
    let model = &fit.outcome.model;
    let knots = model.basis.knots();
    let zero = vec![0.0; knots.len()];
    let bm = fit.bounds_mu.as_deref().unwrap_or(&zero);
    let bk = fit.bounds_k.as_deref().unwrap_or(&zero);
    knots
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, model.q_mu[i], bm[i], model.q_k[i], bk[i]))
        .collect()
}

fn write_factor_outputs(run: &mut RunDir, fit: &BayesFit, prefix: &str) -> CliResult<()> {
    let rows = factor_rows(fit);
    let mut csv = String::from("time,q_mu,q_mu_err,q_k,q_k_err\n");
    for (t, qm, em, qk, ek) in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(*t),
            fmt_f64(*qm),
            fmt_f64(*em),
            fmt_f64(*qk),
            fmt_f64(*ek)
        ));
    }
    run.write_text(&format!("{prefix}.csv"), &csv)?;

    let mu_curve: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let mu_band: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.0, (r.1 - r.2).max(0.0), r.1 + r.2))
        .collect();
    let mut plot = Plot::new(
        &format!("Estimated factors ({})", spec_tag(&fit.spec)),
        "time (days)",
        "factor",
    )
    .band(PALETTE[0], mu_band)
    .line("q_mu(t)", PALETTE[0], mu_curve);
    if fit.spec.restriction == Restriction::Free {
        let k_curve: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.3)).collect();
        let k_band: Vec<(f64, f64, f64)> = rows
            .iter()
            .map(|r| (r.0, (r.3 - r.4).max(0.0), r.3 + r.4))
            .collect();
        plot = plot.band(PALETTE[1], k_band).line("q_K(t)", PALETTE[1], k_curve);
    }
    let span = {
        let knots = fit.outcome.model.basis.knots();
        (knots[0], knots[knots.len() - 1])
    };
    plot = plot.line("", PALETTE[2], vec![(span.0, 1.0), (span.1, 1.0)]);
    if let Some(cp) = fit.spec.changepoint {
        plot = plot.vline(cp);
    }
    run.write_text(&format!("{prefix}.svg"), &plot.render())?;
    Ok(())
}

/// The scoreboard enumeration: three restrictions x two domains x
/// {smooth, change-point}, in a fixed presentation order.
fn all_specs(changepoint: f64) -> Vec<NsModelSpec> {
    let mut specs = Vec::with_capacity(12);
    for cp in [None, Some(changepoint)] {
        for domain in [SmoothingDomain::Ordinary, SmoothingDomain::Transformed] {
            for restriction in [Restriction::FixQk, Restriction::Tied, Restriction::Free] {
                specs.push(NsModelSpec {
                    restriction,
                    domain,
                    changepoint: cp,
                });
            }
        }
    }
    specs
}

fn resolve_reference(
    cmd: &NsfitCmd,
    catalog: &etas::Catalog,
) -> CliResult<(EtasParams, Option<etas::FitResult>)> {
    if let Some(params) = resolve_params(cmd.reference.as_deref(), &cmd.params)? {
        return Ok((params, None));
    }
    let fit = fit_mle_multistart(catalog, &FitOptions::default(), 2, 0)?;
    eprintln!(
        "reference fit: mu = {:.6}, K0 = {:.6}, c = {:.6}, alpha = {:.6}, p = {:.6}",
        fit.params.mu, fit.params.k0, fit.params.c, fit.params.alpha, fit.params.p
    );
    Ok((fit.params, Some(fit)))
}

pub fn run(mut cmd: NsfitCmd) -> CliResult<PathBuf> {
    merge_config(&mut cmd)?;
    if let Some(which) = &cmd.models {
        if which != "all" {
            return Err(CliError::usage(format!(
                "--models only accepts \"all\", got {which:?}"
            )));
        }
        if cmd.restriction.is_some() || cmd.domain.is_some() {
            return Err(CliError::usage(
                "--models all conflicts with --restriction/--domain".to_string(),
            ));
        }
        if cmd.from_bayesfit.is_some() {
            return Err(CliError::usage(
                "--models all conflicts with --from-bayesfit".to_string(),
            ));
        }
        return run_scoreboard(cmd);
    }
    if cmd.from_bayesfit.is_some() {
        return run_from_stored(cmd);
    }
    run_single(cmd)
}

fn base_parameters(cmd: &NsfitCmd, catalog: &etas::Catalog) -> BTreeMap<String, String> {
    let mut params = BTreeMap::new();
    params.insert("window_start".into(), fmt_f64(catalog.window_start()));
    params.insert("window_end".into(), fmt_f64(catalog.window_end()));
    params.insert("threshold".into(), fmt_f64(catalog.threshold()));
    params.insert("history_start".into(), fmt_f64(catalog.history_start()));
    params.insert(
        "count_all_hyperparams".into(),
        cmd.count_all_hyperparams.to_string(),
    );
    if let Some(cp) = cmd.changepoint {
        params.insert("changepoint".into(), fmt_f64(cp));
    }
    params
}

fn bayes_options(cmd: &NsfitCmd) -> BayesOptions {
    BayesOptions {
        count_all_hyperparams: cmd.count_all_hyperparams,
        restarts: cmd.restarts.unwrap_or(1),
        ..BayesOptions::default()
    }
}

fn print_fit_summary(fit: &BayesFit) {
    println!(
        "nsfit [{}]: log marginal = {:.4}, ABIC = {:.4}, baseline ABIC = {:.4}, dABIC = {:.4}",
        spec_tag(&fit.spec),
        fit.log_marginal,
        fit.abic,
        fit.baseline_abic,
        fit.delta_abic
    );
    println!(
        "  weights: w_mu = {:.6e}, w_k = {:.6e}; boundary: ({:.4}, {:.4}); {} marginal evaluations",
        fit.weights.w_mu, fit.weights.w_k, fit.boundary.0, fit.boundary.1, fit.evaluations
    );
    if fit.delta_abic < 0.0 {
        println!("  the time-varying model is preferred over the stationary baseline");
    } else {
        println!("  the stationary baseline is not improved upon");
    }
    for note in &fit.notes {
        println!("  note: {note}");
    }
}

fn run_single(cmd: NsfitCmd) -> CliResult<PathBuf> {
    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let (reference, reference_fit) = resolve_reference(&cmd, catalog)?;
    let spec = NsModelSpec {
        restriction: parse_restriction(cmd.restriction.as_deref().unwrap_or("free"))?,
        domain: parse_domain(cmd.domain.as_deref().unwrap_or("ordinary"))?,
        changepoint: cmd.changepoint,
    };
    let options = bayes_options(&cmd);
    let fit = bayes_fit(catalog, &reference, &spec, &options)?;

    let mut params = base_parameters(&cmd, catalog);
    params.insert("restriction".into(), restriction_tag(spec.restriction).into());
    params.insert("domain".into(), domain_tag(spec.domain).into());
    params.insert("reference".into(), reference.as_array().map(fmt_f64).join(","));
    params.insert("restarts".into(), options.restarts.to_string());

    let mut run = RunDir::create(
        "nsfit",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;
    if let Some(fit) = &reference_fit {
        run.write_text("reference.json", &fit.to_json()?)?;
    }
    run.write_text("bayesfit.json", &fit.to_json()?)?;
    write_factor_outputs(&mut run, &fit, "factors")?;
    let dir = run.finish()?;
    print_fit_summary(&fit);
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn run_from_stored(cmd: NsfitCmd) -> CliResult<PathBuf> {
    let path = cmd.from_bayesfit.clone().expect("checked by run()");
    if cmd.restriction.is_some() || cmd.domain.is_some() || cmd.changepoint.is_some() {
        return Err(CliError::usage(
            "--from-bayesfit conflicts with --restriction/--domain/--changepoint \
             (the stored spec is reused)"
                .to_string(),
        ));
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let stored = BayesFit::from_json(&text).map_err(|e| {
        CliError::usage(format!("{} is not a nonstationary fit: {e}", path.display()))
    })?;

    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let reference = stored.outcome.model.reference;
    let spec = stored.spec;
    let options = bayes_options(&cmd);

    let map_options = MapOptions {
        weights: stored.weights,
        boundary: stored.boundary,
        changepoint_weight: options.changepoint_weight,
        grad_tol: options.grad_tol,
        max_iters: options.max_map_iters,
    };
    let outcome = map_estimate(catalog, &reference, &spec, &map_options)?;
    let log_psi = log_marginal(
        catalog,
        &reference,
        &spec,
        stored.weights,
        stored.boundary,
        &options,
    )?;
    let abic = -2.0 * log_psi + 2.0 * stored.n_hyperparams as f64;
    let converged = outcome.converged;
    let fit = BayesFit {
        spec,
        weights: stored.weights,
        boundary: stored.boundary,
        log_marginal: log_psi,
        n_hyperparams: stored.n_hyperparams,
        abic,
        baseline_log_marginal: stored.baseline_log_marginal,
        baseline_abic: stored.baseline_abic,
        delta_abic: abic - stored.baseline_abic,
        outcome,
        bounds_mu: stored.bounds_mu.clone(),
        bounds_k: stored.bounds_k.clone(),
        evaluations: 0,
        converged,
        notes: vec![format!(
            "hyperparameters, baseline, and error bounds reused from {}",
            path.display()
        )],
    };

    let mut params = base_parameters(&cmd, catalog);
    params.insert("restriction".into(), restriction_tag(spec.restriction).into());
    params.insert("domain".into(), domain_tag(spec.domain).into());
    if let Some(cp) = spec.changepoint {
        params.insert("changepoint".into(), fmt_f64(cp));
    }
    params.insert("reference".into(), reference.as_array().map(fmt_f64).join(","));
    params.insert(
        "from_bayesfit_fnv64".into(),
        format!("{:016x}", crate::output::fnv1a64(text.as_bytes())),
    );

    let mut run = RunDir::create(
        "nsfit",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;
    run.write_text("bayesfit.json", &fit.to_json()?)?;
    write_factor_outputs(&mut run, &fit, "factors")?;
    let dir = run.finish()?;
    print_fit_summary(&fit);
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn run_scoreboard(cmd: NsfitCmd) -> CliResult<PathBuf> {
    let Some(changepoint) = cmd.changepoint else {
        return Err(CliError::usage(
            "--models all needs --changepoint TIME for its change-point variants".to_string(),
        ));
    };
    let loaded = load_catalog(&cmd.catalog)?;
    let catalog = &loaded.catalog;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let (reference, reference_fit) = resolve_reference(&cmd, catalog)?;
    let options = bayes_options(&cmd);
    let specs = all_specs(changepoint);

    let n_threads = cmd
        .threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(4)
        })
        .clamp(1, specs.len());

    let results: Mutex<Vec<Option<etas::Result<BayesFit>>>> =
        Mutex::new((0..specs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..n_threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let outcome = bayes_fit(catalog, &reference, &specs[i], &options);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().unwrap();

    let mut params = base_parameters(&cmd, catalog);
    params.insert("models".into(), "all".into());
    params.insert("reference".into(), reference.as_array().map(fmt_f64).join(","));
    params.insert("restarts".into(), options.restarts.to_string());

    let mut run = RunDir::create(
        "nsfit",
        params,
        Some((&loaded.path, &loaded.raw)),
        cmd.out.as_deref(),
    )?;
    if let Some(fit) = &reference_fit {
        run.write_text("reference.json", &fit.to_json()?)?;
    }

    let mut csv = String::from(
        "model,restriction,domain,changepoint,n_hyperparams,w_mu,w_k,\
         boundary_mu,boundary_k,log_marginal,abic,delta_abic,converged\n",
    );
    let mut fits: Vec<(usize, BayesFit)> = Vec::new();
    for (i, (spec, result)) in specs.iter().zip(results).enumerate() {
        let tag = spec_tag(spec);
        match result.expect("every index visited") {
            Ok(fit) => {
                csv.push_str(&format!(
                    "{tag},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    restriction_tag(spec.restriction),
                    domain_tag(spec.domain),
                    spec.changepoint.map(fmt_f64).unwrap_or_default(),
                    fit.n_hyperparams,
                    fmt_f64(fit.weights.w_mu),
                    fmt_f64(fit.weights.w_k),
                    fmt_f64(fit.boundary.0),
                    fmt_f64(fit.boundary.1),
                    fmt_f64(fit.log_marginal),
                    fmt_f64(fit.abic),
                    fmt_f64(fit.delta_abic),
                    fit.converged
                ));
                fits.push((i, fit));
            }
            Err(err) => {
                eprintln!("model {tag} failed: {err}");
                csv.push_str(&format!(
                    "{tag},{},{},{},,,,,,,,,failed\n",
                    restriction_tag(spec.restriction),
                    domain_tag(spec.domain),
                    spec.changepoint.map(fmt_f64).unwrap_or_default(),
                ));
            }
        }
    }
    run.write_text("scoreboard.csv", &csv)?;

    for (i, fit) in &fits {
        run.write_text(
            &format!("bayesfit-{}.json", spec_tag(&specs[*i])),
            &fit.to_json()?,
        )?;
    }

    let best = fits
        .iter()
        .min_by(|a, b| a.1.abic.partial_cmp(&b.1.abic).expect("finite ABIC"))
        .ok_or_else(|| CliError::runtime("every model configuration failed".to_string()))?;
    write_factor_outputs(&mut run, &best.1, "factors")?;

    let dir = run.finish()?;
    println!("nsfit scoreboard ({} of {} models fit):", fits.len(), specs.len());
    let mut ranked: Vec<&(usize, BayesFit)> = fits.iter().collect();
    ranked.sort_by(|a, b| a.1.abic.partial_cmp(&b.1.abic).unwrap());
    for (rank, (i, fit)) in ranked.iter().enumerate() {
        println!(
            "  {:>2}. {:<22} ABIC = {:>12.4}  dABIC = {:>10.4}{}",
            rank + 1,
            spec_tag(&specs[*i]),
            fit.abic,
            fit.delta_abic,
            if rank == 0 { "  <- best" } else { "" }
        );
    }
    println!(
        "baseline ABIC = {:.4} (stationary reference)",
        best.1.baseline_abic
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// Factor model loaded for other commands (simulation, residuals).
pub fn load_model(path: &std::path::Path) -> CliResult<(BayesFit, AnomalyModel)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let fit = BayesFit::from_json(&text).map_err(|e| {
        CliError::usage(format!("{} is not a nonstationary fit: {e}", path.display()))
    })?;
    let model = fit.outcome.model.clone();
    Ok((fit, model))
}
