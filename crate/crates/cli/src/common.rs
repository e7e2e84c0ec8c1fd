//! Shared plumbing for the subcommands: error taxonomy, catalog loading,
//! and reference-parameter resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use etas::{filter_catalog, parse_catalog, Catalog, EtasParams, FitResult};

/// Top-level CLI failure. `Usage` maps to exit code 2 (the invocation was
/// malformed: bad flags, unreadable config, unparseable input), `Runtime`
/// maps to exit code 1 (the invocation was fine but the computation failed).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<etas::EtasError> for CliError {
    fn from(err: etas::EtasError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Flags shared by every subcommand that reads a catalog.
#[derive(Args, Debug, Clone)]
pub struct CatalogArgs {
    /// Catalog file (CSV: time,magnitude; `#` comments allowed)
    #[arg(long, value_name = "FILE")]
    pub catalog: PathBuf,

    /// Target window as "START,END" (days). Defaults to the full catalog span.
    #[arg(long, value_name = "S,T")]
    pub window: Option<String>,

    /// Magnitude threshold; events below it are dropped
    #[arg(long, value_name = "MAG")]
    pub threshold: Option<f64>,

    /// Start of the precursory history period (defaults to the window start)
    #[arg(long, value_name = "TIME")]
    pub history_start: Option<f64>,
}

/// Parse "a,b" into an ordered pair.
pub fn parse_window(text: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::usage(format!(
            "window must be \"START,END\", got {text:?}"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::usage(format!("window start {:?} is not a number", parts[0])))?;
    let end: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::usage(format!("window end {:?} is not a number", parts[1])))?;
    if !(end > start) {
        return Err(CliError::usage(format!(
            "window end must exceed start ({start} >= {end})"
        )));
    }
    Ok((start, end))
}

/// Loaded catalog plus the raw bytes (the bytes feed the run-directory hash).
pub struct LoadedCatalog {
    pub catalog: Catalog,
    pub raw: Vec<u8>,
    pub path: PathBuf,
    pub warnings: Vec<String>,
}

pub fn load_catalog(args: &CatalogArgs) -> CliResult<LoadedCatalog> {
    let raw = std::fs::read(&args.catalog).map_err(|e| {
        CliError::usage(format!("cannot read catalog {}: {e}", args.catalog.display()))
    })?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| CliError::usage("catalog file is not valid UTF-8".to_string()))?;
    let parsed = parse_catalog(text).map_err(|e| CliError::usage(e.to_string()))?;
    let mut catalog = parsed.catalog;

    let needs_filter =
        args.window.is_some() || args.threshold.is_some() || args.history_start.is_some();
    if needs_filter {
        let (start, end) = match &args.window {
            Some(text) => parse_window(text)?,
            None => (catalog.window_start(), catalog.window_end()),
        };
        let threshold = args.threshold.unwrap_or_else(|| catalog.threshold());
        let history_start = args.history_start.unwrap_or(start);
        if history_start > start {
            return Err(CliError::usage(format!(
                "history start {history_start} lies after window start {start}"
            )));
        }
        catalog = filter_catalog(&catalog, threshold, history_start, start, end)
            .map_err(|e| CliError::usage(e.to_string()))?;
    }

    if catalog.n_in_window() == 0 {
        return Err(CliError::usage(
            "no events fall inside the target window".to_string(),
        ));
    }

    Ok(LoadedCatalog {
        catalog,
        raw,
        path: args.catalog.clone(),
        warnings: parsed.warnings,
    })
}

/// Explicit parameter overrides; any subset may be given on the command line.
#[derive(Args, Debug, Clone, Default)]
pub struct ParamArgs {
    /// Background rate (events/day)
    #[arg(long, value_name = "RATE")]
    pub mu: Option<f64>,

    /// Aftershock productivity
    #[arg(long, value_name = "K0")]
    pub k0: Option<f64>,

    /// Omori time offset (days)
    #[arg(long, value_name = "C")]
    pub c: Option<f64>,

    /// Magnitude sensitivity
    #[arg(long, value_name = "ALPHA")]
    pub alpha: Option<f64>,

    /// Omori decay exponent
    #[arg(long, value_name = "P")]
    pub p: Option<f64>,
}

impl ParamArgs {
    pub fn any_set(&self) -> bool {
        self.mu.is_some()
            || self.k0.is_some()
            || self.c.is_some()
            || self.alpha.is_some()
            || self.p.is_some()
    }

    /// Apply the overrides on top of `base`.
    pub fn apply(&self, base: EtasParams) -> EtasParams {
        EtasParams {
            mu: self.mu.unwrap_or(base.mu),
            k0: self.k0.unwrap_or(base.k0),
            c: self.c.unwrap_or(base.c),
            alpha: self.alpha.unwrap_or(base.alpha),
            p: self.p.unwrap_or(base.p),
        }
    }

    /// Require all five parameters to be present.
    pub fn complete(&self) -> CliResult<EtasParams> {
        match (self.mu, self.k0, self.c, self.alpha, self.p) {
            (Some(mu), Some(k0), Some(c), Some(alpha), Some(p)) => {
                let params = EtasParams { mu, k0, c, alpha, p };
                params
                    .validate()
                    .map_err(|e| CliError::usage(e.to_string()))?;
                Ok(params)
            }
            _ => Err(CliError::usage(
                "all of --mu --k0 --c --alpha --p are required (or pass --reference)".to_string(),
            )),
        }
    }
}

/// Read a fit report produced by `etas fit` and return its parameters.
pub fn load_fit_params(path: &Path) -> CliResult<EtasParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let fit = FitResult::from_json(&text)
        .map_err(|e| CliError::usage(format!("{} is not a fit report: {e}", path.display())))?;
    Ok(fit.params)
}

/// Resolve reference parameters from `--reference FILE` and/or explicit flags.
/// Explicit flags override values from the file.
pub fn resolve_params(
    reference: Option<&Path>,
    overrides: &ParamArgs,
) -> CliResult<Option<EtasParams>> {
    match reference {
        Some(path) => {
            let base = load_fit_params(path)?;
            let params = overrides.apply(base);
            params
                .validate()
                .map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Some(params))
        }
        None if overrides.any_set() => Ok(Some(overrides.complete()?)),
        None => Ok(None),
    }
}

/// Render a float for manifests and hashing: shortest roundtrip form.
pub fn fmt_f64(x: f64) -> String {
    let mut buf = ryu_like(x);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("nan") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(x: f64) -> String {
    // `{}` on f64 already produces the shortest string that parses back
    // to the same bits, which is exactly what a stable hash needs.
    format!("{x}")
}
