//! Minimal SVG line plots.
//!
//! The renderer is deliberately dependency-free and deterministic: the same
//! data always produces the same bytes, so plots can live inside hashed run
//! directories. It draws axes with "nice" tick marks, polyline and step
//! series, shaded uncertainty bands, and dashed vertical markers.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 46.0;

pub const PALETTE: [&str; 5] = ["#1f6feb", "#d2322d", "#2da44e", "#8250df", "#bf8700"];

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum LineStyle {
    /// Straight segments between consecutive points.
    Line,
    /// Horizontal-then-vertical steps (counting processes).
    Step,
}

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub style: LineStyle,
    pub points: Vec<(f64, f64)>,
}

/// Shaded region between a lower and an upper curve, as (x, lo, hi) triples.
pub struct Band {
    pub color: &'static str,
    pub points: Vec<(f64, f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    pub vlines: Vec<f64>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            bands: Vec::new(),
            vlines: Vec::new(),
        }
    }

    pub fn line(mut self, label: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            label: label.to_string(),
            color,
            style: LineStyle::Line,
            points,
        });
        self
    }

    pub fn step(mut self, label: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            label: label.to_string(),
            color,
            style: LineStyle::Step,
            points,
        });
        self
    }

    pub fn band(mut self, color: &'static str, points: Vec<(f64, f64, f64)>) -> Self {
        self.bands.push(Band { color, points });
        self
    }

    pub fn vline(mut self, x: f64) -> Self {
        self.vlines.push(x);
        self
    }

    /// Render to a standalone SVG document.
    pub fn render(&self) -> String {
        let (x_min, x_max) = self.x_range();
        let (y_min, y_max) = self.y_range();
        let x_ticks = nice_ticks(x_min, x_max, 8);
        let y_ticks = nice_ticks(y_min, y_max, 6);
        // Expand the plotting range to the outermost ticks so lines never
        // touch the frame.
        let x_lo = x_min.min(x_ticks.first().copied().unwrap_or(x_min));
        let x_hi = x_max.max(x_ticks.last().copied().unwrap_or(x_max));
        let y_lo = y_min.min(y_ticks.first().copied().unwrap_or(y_min));
        let y_hi = y_max.max(y_ticks.last().copied().unwrap_or(y_max));

        let px = |x: f64| {
            MARGIN_L + (x - x_lo) / (x_hi - x_lo).max(f64::MIN_POSITIVE)
                * (WIDTH - MARGIN_L - MARGIN_R)
        };
        let py = |y: f64| {
            HEIGHT - MARGIN_B
                - (y - y_lo) / (y_hi - y_lo).max(f64::MIN_POSITIVE)
                    * (HEIGHT - MARGIN_T - MARGIN_B)
        };

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));

        // Grid and ticks.
        for &t in &x_ticks {
            let x = px(t);
            svg.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                MARGIN_T,
                HEIGHT - MARGIN_B
            ));
            svg.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#444444\">{}</text>\n",
                HEIGHT - MARGIN_B + 16.0,
                fmt_tick(t)
            ));
        }
        for &t in &y_ticks {
            let y = py(t);
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                MARGIN_L,
                WIDTH - MARGIN_R
            ));
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#444444\">{}</text>\n",
                MARGIN_L - 6.0,
                y + 4.0,
                fmt_tick(t)
            ));
        }

        // Uncertainty bands under everything else.
        for band in &self.bands {
            if band.points.len() < 2 {
                continue;
            }
            let mut d = String::from("M");
            for (x, lo, _) in &band.points {
                d.push_str(&format!(" {:.2},{:.2}", px(*x), py(*lo)));
            }
            for (x, _, hi) in band.points.iter().rev() {
                d.push_str(&format!(" {:.2},{:.2}", px(*x), py(*hi)));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                band.color
            ));
        }

        // Vertical markers.
        for &x in &self.vlines {
            let xp = px(x);
            svg.push_str(&format!(
                "<line x1=\"{xp:.2}\" y1=\"{:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" \
                 stroke=\"#666666\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n",
                MARGIN_T,
                HEIGHT - MARGIN_B
            ));
        }

        // Series.
        for series in &self.series {
            if series.points.is_empty() {
                continue;
            }
            let mut pts = String::new();
            match series.style {
                LineStyle::Line => {
                    for (x, y) in &series.points {
                        pts.push_str(&format!("{:.2},{:.2} ", px(*x), py(*y)));
                    }
                }
                LineStyle::Step => {
                    let mut prev_y = None;
                    for (x, y) in &series.points {
                        if let Some(py_prev) = prev_y {
                            pts.push_str(&format!("{:.2},{py_prev:.2} ", px(*x)));
                        }
                        let yp = py(*y);
                        pts.push_str(&format!("{:.2},{yp:.2} ", px(*x)));
                        prev_y = Some(yp);
                    }
                }
            }
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                pts.trim_end(),
                series.color
            ));
        }

        // Frame, labels, legend.
        svg.push_str(&format!(
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            WIDTH - MARGIN_L - MARGIN_R,
            HEIGHT - MARGIN_T - MARGIN_B
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" fill=\"#111111\">{}</text>\n",
            0.5 * WIDTH,
            escape(&self.title)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#111111\">{}</text>\n",
            0.5 * WIDTH,
            HEIGHT - 8.0,
            escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#111111\" \
             transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
            0.5 * HEIGHT,
            0.5 * HEIGHT,
            escape(&self.y_label)
        ));
        let mut legend_y = MARGIN_T + 14.0;
        for series in &self.series {
            if series.label.is_empty() {
                continue;
            }
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                MARGIN_L + 10.0,
                legend_y - 4.0,
                MARGIN_L + 34.0,
                legend_y - 4.0,
                series.color
            ));
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{legend_y:.2}\" fill=\"#111111\">{}</text>\n",
                MARGIN_L + 40.0,
                escape(&series.label)
            ));
            legend_y += 16.0;
        }

        svg.push_str("</svg>\n");
        svg
    }

    fn x_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.series {
            for (x, _) in &s.points {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
        }
        for b in &self.bands {
            for (x, _, _) in &b.points {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
        }
        for &x in &self.vlines {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        normalize_range(lo, hi)
    }

    fn y_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.series {
            for (_, y) in &s.points {
                lo = lo.min(*y);
                hi = hi.max(*y);
            }
        }
        for b in &self.bands {
            for (_, l, h) in &b.points {
                lo = lo.min(*l);
                hi = hi.max(*h);
            }
        }
        normalize_range(lo, hi)
    }
}

fn normalize_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Tick positions covering [min, max] with a step of 1, 2, 2.5, or 5 times a
/// power of ten, aiming for roughly `target` intervals.
pub fn nice_ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    let (min, max) = normalize_range(min, max);
    let span = max - min;
    let raw_step = span / target.max(1) as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw_step)
        .unwrap_or(10.0 * mag);
    let first = (min / step).ceil();
    let last = (max / step).floor();
    let mut ticks = Vec::new();
    let mut k = first;
    while k <= last + 0.5 {
        let value = k * step;
        // Snap values that should be exact (e.g. 0) back onto the grid.
        let snapped = (value / step).round() * step;
        ticks.push(if snapped == 0.0 { 0.0 } else { snapped });
        k += 1.0;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.6}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
