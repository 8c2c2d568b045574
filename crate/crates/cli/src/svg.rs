//! Static line plots.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvgError {
    #[error("nothing to plot")]
    Empty,
    #[error("series `{series}` has a non-finite value at sample {index}")]
    NonFinite { series: String, index: usize },
    #[error("series `{0}` has mismatched time and value lengths")]
    Length(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            times,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Style {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Dashed horizontal references.
    pub hlines: Vec<(f64, String)>,
    /// Solid vertical marker.
    pub vline: Option<(f64, String)>,
    pub width: f64,
    pub height: f64,
}

impl Style {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            hlines: Vec::new(),
            vline: None,
            width: 720.0,
            height: 440.0,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const MAX_POINTS: usize = 1500;
const MAX_LEGEND: usize = 8;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    f * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if hi - lo > 1e-12 * hi.abs().max(1.0) {
        (lo, hi)
    } else {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    }
}

pub fn render_svg(series: &[Series], style: &Style) -> Result<String, SvgError> {
    if series.is_empty() || series.iter().all(|s| s.times.is_empty()) {
        return Err(SvgError::Empty);
    }
    for s in series {
        if s.times.len() != s.values.len() {
            return Err(SvgError::Length(s.label.clone()));
        }
        if let Some(index) = s
            .times
            .iter()
            .zip(&s.values)
            .position(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(SvgError::NonFinite {
                series: s.label.clone(),
                index,
            });
        }
    }
    let (x_lo, x_hi) = range(
        series
            .iter()
            .flat_map(|s| s.times.iter().copied())
            .chain(style.vline.iter().map(|v| v.0)),
    );
    let (y_lo, y_hi) = range(
        series
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .chain(style.hlines.iter().map(|h| h.0)),
    );
    let (ml, mr, mt, mb) = MARGIN;
    let (w, h) = (style.width, style.height);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| mt + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(o, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(&style.title)
    );
    let _ = writeln!(
        o,
        r#"<g class="axes" stroke="black" fill="none"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></g>"#
    );
    let _ = writeln!(o, r#"<g class="ticks">"#);
    for t in ticks(x_lo, x_hi) {
        let x = sx(t);
        let _ = writeln!(
            o,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 18.0,
            label(t)
        );
    }
    for t in ticks(y_lo, y_hi) {
        let y = sy(t);
        let _ = writeln!(
            o,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 5.0,
            ml - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(o, "</g>");
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 10.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        o,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&style.y_label)
    );
    for (v, name) in &style.hlines {
        let y = sy(*v);
        let _ = writeln!(
            o,
            r#"<line class="reference" x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="6 4"><title>{}</title></line>"#,
            ml + pw,
            escape(name)
        );
    }
    if let Some((v, name)) = &style.vline {
        let x = sx(*v);
        let _ = writeln!(
            o,
            r#"<line class="marker" x1="{x:.2}" y1="{mt}" x2="{x:.2}" y2="{:.2}" stroke="black" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            mt + ph,
            x + 4.0,
            mt + 14.0,
            escape(name)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let every = s.times.len().div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        let last = s.times.len() - 1;
        for i in (0..s.times.len()).filter(|i| i % every == 0 || *i == last) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(s.times[i]), sy(s.values[i]));
        }
        let _ = writeln!(
            o,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            PALETTE[k % PALETTE.len()],
            pts.trim_end(),
            escape(&s.label)
        );
    }
    let _ = writeln!(o, r#"<g class="legend">"#);
    let shown = if series.len() <= MAX_LEGEND {
        series.len()
    } else {
        0
    };
    let _ = writeln!(
        o,
        r#"<rect x="{:.2}" y="{:.2}" width="150" height="{:.2}" fill="white" fill-opacity="0.85"/>"#,
        ml + pw - 155.0,
        mt + 4.0,
        16.0 * shown.max(1) as f64 + 6.0
    );
    for (k, s) in series.iter().take(shown).enumerate() {
        let y = mt + 14.0 + 16.0 * k as f64;
        let x = ml + pw - 150.0;
        let _ = writeln!(
            o,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 20.0,
            PALETTE[k % PALETTE.len()],
            x + 25.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    if shown == 0 {
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}">{} series</text>"#,
            ml + pw - 150.0,
            mt + 18.0,
            series.len()
        );
    }
    let _ = writeln!(o, "</g>\n</svg>");
    Ok(o)
}
