//! Earthquake catalogs: ordered (time, magnitude) pairs plus study-window
//! metadata.
//!
//! Times are fractional days. A catalog carries the study window `[S, T]`,
//! the magnitude threshold `Mz`, and optionally a stretch of *history*
//! events in `[history_start, S)`. History events feed the triggering sums
//! of every model in this crate but are never counted in a likelihood's
//! event sum.
//!
//! The CSV form is `time,magnitude` (or `datetime,magnitude` with ISO-8601
//! timestamps, converted to fractional days since the first declared
//! origin). Lines starting with `#` are comments; `# key = value` comments
//! carry the window metadata so that serialization round-trips.

use crate::error::EtasError;
use crate::Result;
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

/// One earthquake: occurrence time in days and magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub magnitude: f64,
}

/// An ordered catalog with window metadata.
///
/// Events are stored sorted by (time ascending, magnitude descending, input
/// order); the first `n_history` entries lie before the study window and
/// only participate in triggering sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    events: Vec<Event>,
    n_history: usize,
    window_start: f64,
    window_end: f64,
    threshold: f64,
    origin_epoch: Option<String>,
}

/// Result of [`parse_catalog`]: the catalog plus non-fatal warnings
/// (ignored columns and the like).
#[derive(Debug, Clone)]
pub struct ParsedCatalog {
    pub catalog: Catalog,
    pub warnings: Vec<String>,
}

fn require_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(EtasError::invalid(format!("{what} must be finite")))
    }
}

/// Deterministic event ordering: time ascending, ties by magnitude
/// descending, remaining ties by input order (stable sort).
fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(b.magnitude.partial_cmp(&a.magnitude).unwrap())
    });
}

impl Catalog {
    /// Builds a catalog whose events all lie inside `[window_start,
    /// window_end]` with magnitude at or above `threshold`.
    pub fn new(
        events: Vec<Event>,
        window_start: f64,
        window_end: f64,
        threshold: f64,
    ) -> Result<Catalog> {
        Catalog::with_history(events, window_start, window_start, window_end, threshold)
    }

    /// Like [`Catalog::new`] but admitting history events in
    /// `[history_start, window_start)`.
    pub fn with_history(
        events: Vec<Event>,
        history_start: f64,
        window_start: f64,
        window_end: f64,
        threshold: f64,
    ) -> Result<Catalog> {
        require_finite(window_start, "window_start")?;
        require_finite(window_end, "window_end")?;
        require_finite(threshold, "threshold")?;
        require_finite(history_start, "history_start")?;
        if !(history_start <= window_start && window_start <= window_end) {
            return Err(EtasError::invalid(
                "window must satisfy history_start <= window_start <= window_end",
            ));
        }
        let mut events = events;
        for e in &events {
            require_finite(e.time, "event time")?;
            require_finite(e.magnitude, "event magnitude")?;
            if e.magnitude < threshold {
                return Err(EtasError::invalid(format!(
                    "event magnitude {} below threshold {threshold}",
                    e.magnitude
                )));
            }
            if e.time < history_start || e.time > window_end {
                return Err(EtasError::invalid(format!(
                    "event time {} outside [{history_start}, {window_end}]",
                    e.time
                )));
            }
        }
        sort_events(&mut events);
        let n_history = events.iter().take_while(|e| e.time < window_start).count();
        Ok(Catalog {
            events,
            n_history,
            window_start,
            window_end,
            threshold,
            origin_epoch: None,
        })
    }

    /// All events, history first, in deterministic order.
    pub fn all_events(&self) -> &[Event] {
        &self.events
    }

    /// Events inside the study window `[S, T]`.
    pub fn in_window(&self) -> &[Event] {
        &self.events[self.n_history..]
    }

    /// Pre-window history events (triggering only).
    pub fn history(&self) -> &[Event] {
        &self.events[..self.n_history]
    }

    pub fn n_in_window(&self) -> usize {
        self.events.len() - self.n_history
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn window_end(&self) -> f64 {
        self.window_end
    }

    pub fn window_length(&self) -> f64 {
        self.window_end - self.window_start
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn history_start(&self) -> f64 {
        self.events.first().map_or(self.window_start, |e| {
            if self.n_history > 0 {
                e.time
            } else {
                self.window_start
            }
        })
    }

    pub fn origin_epoch(&self) -> Option<&str> {
        self.origin_epoch.as_deref()
    }

    pub fn set_origin_epoch(&mut self, epoch: Option<String>) {
        self.origin_epoch = epoch;
    }

    /// Writes the catalog back to its CSV form, metadata comments included.
    /// `parse_catalog(serialize(c))` reproduces `c` exactly: times and
    /// magnitudes print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(epoch) = &self.origin_epoch {
            out.push_str(&format!("# origin_epoch = {epoch}\n"));
        }
        if self.n_history > 0 {
            out.push_str(&format!("# history_start = {}\n", self.events[0].time));
        }
        out.push_str(&format!("# window_start = {}\n", self.window_start));
        out.push_str(&format!("# window_end = {}\n", self.window_end));
        out.push_str(&format!("# threshold = {}\n", self.threshold));
        out.push_str("time,magnitude\n");
        for e in &self.events {
            out.push_str(&format!("{},{}\n", e.time, e.magnitude));
        }
        out
    }
}

/// Restricts a catalog to `magnitude >= threshold` and `[history_start,
/// window_end]`, re-tagging events in `[history_start, window_start)` as
/// history. Events outside are dropped. Idempotent for equal arguments.
pub fn filter_catalog(
    catalog: &Catalog,
    threshold: f64,
    history_start: f64,
    window_start: f64,
    window_end: f64,
) -> Result<Catalog> {
    let kept: Vec<Event> = catalog
        .all_events()
        .iter()
        .copied()
        .filter(|e| e.magnitude >= threshold && e.time >= history_start && e.time <= window_end)
        .collect();
    let mut cat = Catalog::with_history(kept, history_start, window_start, window_end, threshold)?;
    cat.origin_epoch = catalog.origin_epoch.clone();
    Ok(cat)
}

enum TimeMode {
    Numeric,
    DateTime,
}

/// Parses an ISO-8601 timestamp (date, `T`- or space-separated datetime,
/// with or without offset) to days since the Unix epoch.
fn parse_datetime_days(s: &str) -> Option<f64> {
    const DAY_US: f64 = 86_400.0e6;
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_micros() as f64 / DAY_US);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            let dt: DateTime<Utc> = DateTime::from_naive_utc_and_offset(naive, Utc);
            return Some(dt.timestamp_micros() as f64 / DAY_US);
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let naive = date.and_hms_opt(0, 0, 0).unwrap();
        let dt: DateTime<Utc> = DateTime::from_naive_utc_and_offset(naive, Utc);
        return Some(dt.timestamp_micros() as f64 / DAY_US);
    }
    None
}

/// Parses CSV text into a catalog.
///
/// Expected header `time,magnitude` or `datetime,magnitude`; additional
/// columns are ignored with a warning. Window metadata comes from
/// `# key = value` comment lines and defaults to the observed event span
/// with the smallest magnitude as threshold.
pub fn parse_catalog(text: &str) -> Result<ParsedCatalog> {
    let mut warnings = Vec::new();
    let mut window_start: Option<f64> = None;
    let mut window_end: Option<f64> = None;
    let mut threshold: Option<f64> = None;
    let mut history_start: Option<f64> = None;
    let mut origin_epoch: Option<String> = None;

    let mut mode: Option<TimeMode> = None;
    let mut events: Vec<Event> = Vec::new();
    let mut origin_days: Option<f64> = None;

    let meta_num = |line_no: usize, key: &str, value: &str| -> Result<f64> {
        value.trim().parse::<f64>().map_err(|_| EtasError::CatalogParse {
            line: line_no,
            reason: format!("metadata {key} is not a number: {value:?}"),
        })
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "window_start" => window_start = Some(meta_num(line_no, "window_start", value)?),
                    "window_end" => window_end = Some(meta_num(line_no, "window_end", value)?),
                    "threshold" => threshold = Some(meta_num(line_no, "threshold", value)?),
                    "history_start" => {
                        history_start = Some(meta_num(line_no, "history_start", value)?)
                    }
                    "origin_epoch" => origin_epoch = Some(value.trim().to_string()),
                    _ => {} // ordinary comment
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match mode {
            None => {
                // header row
                if fields.len() < 2 || fields[1] != "magnitude" {
                    return Err(EtasError::CatalogParse {
                        line: line_no,
                        reason: format!(
                            "expected header time,magnitude or datetime,magnitude, got {line:?}"
                        ),
                    });
                }
                mode = Some(match fields[0] {
                    "time" => TimeMode::Numeric,
                    "datetime" => TimeMode::DateTime,
                    other => {
                        return Err(EtasError::CatalogParse {
                            line: line_no,
                            reason: format!("first column must be time or datetime, got {other:?}"),
                        })
                    }
                });
                if fields.len() > 2 {
                    warnings.push(format!("ignoring extra column(s): {}", fields[2..].join(", ")));
                }
            }
            Some(ref m) => {
                if fields.len() < 2 {
                    return Err(EtasError::CatalogParse {
                        line: line_no,
                        reason: "expected at least two fields".into(),
                    });
                }
                let time = match m {
                    TimeMode::Numeric => {
                        fields[0].parse::<f64>().map_err(|_| EtasError::CatalogParse {
                            line: line_no,
                            reason: format!("bad time {:?}", fields[0]),
                        })?
                    }
                    TimeMode::DateTime => {
                        let days =
                            parse_datetime_days(fields[0]).ok_or_else(|| EtasError::CatalogParse {
                                line: line_no,
                                reason: format!("bad datetime {:?}", fields[0]),
                            })?;
                        let origin = match origin_days {
                            Some(o) => o,
                            None => {
                                let o = match &origin_epoch {
                                    Some(e) => {
                                        parse_datetime_days(e).ok_or_else(|| EtasError::CatalogParse {
                                            line: line_no,
                                            reason: format!("bad origin_epoch {e:?}"),
                                        })?
                                    }
                                    None => {
                                        origin_epoch = Some(fields[0].to_string());
                                        days
                                    }
                                };
                                origin_days = Some(o);
                                o
                            }
                        };
                        days - origin
                    }
                };
                let magnitude = fields[1].parse::<f64>().map_err(|_| EtasError::CatalogParse {
                    line: line_no,
                    reason: format!("bad magnitude {:?}", fields[1]),
                })?;
                events.push(Event { time, magnitude });
            }
        }
    }

    if mode.is_none() {
        return Err(EtasError::CatalogParse {
            line: text.lines().count().max(1),
            reason: "no header row found".into(),
        });
    }
    if events.is_empty() && (window_start.is_none() || window_end.is_none()) {
        return Err(EtasError::invalid(
            "catalog has no events and no window metadata",
        ));
    }

    let tmin = events.iter().map(|e| e.time).fold(f64::INFINITY, f64::min);
    let tmax = events.iter().map(|e| e.time).fold(f64::NEG_INFINITY, f64::max);
    let window_start = window_start.unwrap_or(tmin);
    let window_end = window_end.unwrap_or(tmax);
    let threshold = threshold.unwrap_or_else(|| {
        events
            .iter()
            .map(|e| e.magnitude)
            .fold(f64::INFINITY, f64::min)
    });
    let history_start = history_start.unwrap_or(window_start);

    let mut catalog =
        Catalog::with_history(events, history_start, window_start, window_end, threshold)?;
    catalog.origin_epoch = origin_epoch;
    Ok(ParsedCatalog { catalog, warnings })
}
