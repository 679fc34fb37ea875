//! Minimal static SVG charts: line/bar panels, the influence-map figure, the
//! tuning incumbent plot and box plots.

use std::fmt::Write;

use crate::explain::InfluenceMap;
use crate::train::BoxSummary;

const W: f64 = 720.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 28.0;

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: &[f64], include_zero: bool) -> (f64, f64) {
    let mut lo = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        let pad = if hi.abs() > 0.0 { hi.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    // bars keep their zero baseline on the frame
    let lo = if include_zero && lo == 0.0 { 0.0 } else { lo - pad };
    let hi = if include_zero && hi == 0.0 { 0.0 } else { hi + pad };
    (lo, hi)
}

/// Multiples of a 1-2-5 step inside `[lo, hi]`, about four of them.
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// One plotting area at vertical offset `top`.
struct Panel {
    top: f64,
    n: usize,
    lo: f64,
    hi: f64,
}

impl Panel {
    fn x(&self, i: f64) -> f64 {
        let span = (W - MARGIN_L - MARGIN_R) / self.n.max(1) as f64;
        MARGIN_L + (i + 0.5) * span
    }

    fn y(&self, v: f64) -> f64 {
        let h = PANEL_H - MARGIN_T - MARGIN_B;
        self.top + MARGIN_T + h * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }

    fn bar_width(&self) -> f64 {
        0.8 * (W - MARGIN_L - MARGIN_R) / self.n.max(1) as f64
    }

    fn frame(&self, out: &mut String, title: &str) {
        let bottom = self.top + PANEL_H - MARGIN_B;
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN_L}" y="{:.1}" font-weight="bold">{}</text>"#,
            self.top + 16.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_L}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            self.top + MARGIN_T,
            W - MARGIN_L - MARGIN_R,
            bottom - self.top - MARGIN_T
        );
        for v in nice_ticks(self.lo, self.hi) {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_L - 4.0,
                self.y(v) + 4.0,
                fmt_tick(v)
            );
        }
        if self.lo < 0.0 && self.hi > 0.0 {
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_L}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#bbb" stroke-dasharray="3,3"/>"##,
                W - MARGIN_R,
                y = self.y(0.0)
            );
        }
    }

    fn polyline(&self, out: &mut String, values: &[f64], color: &str) {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.1},{:.1}", self.x(i as f64), self.y(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }

    fn bars(&self, out: &mut String, values: &[f64], color: impl Fn(usize, f64) -> String) {
        let bw = self.bar_width();
        for (i, v) in values.iter().enumerate() {
            let (y0, y1) = (self.y(0.0f64.max(self.lo)), self.y(*v));
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                self.x(i as f64) - bw / 2.0,
                y0.min(y1),
                (y0 - y1).abs(),
                color(i, *v)
            );
        }
    }

    fn x_labels(&self, out: &mut String, labels: &[String]) {
        let step = (labels.len() / 15).max(1);
        let y = self.top + PANEL_H - MARGIN_B + 14.0;
        for (i, l) in labels.iter().enumerate().step_by(step) {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="middle">{}</text>"#,
                self.x(i as f64),
                escape(l)
            );
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Four stacked panels: the input window, mean attention, SHAP values, and
/// the combined map with its smoothed curve. Lags excluded from reports are
/// drawn in grey.
pub fn influence_figure(window_raw: &[f64], map: &InfluenceMap) -> String {
    let n = map.window();
    let labels: Vec<String> = (0..n).map(|j| format!("t-{}", map.lag_of(j))).collect();
    let mut out = String::new();
    header(&mut out, W, 4.0 * PANEL_H);
    let shade = |good: &'static str| {
        move |i: usize, _v: f64| {
            if map.is_reported(i) { good.to_string() } else { "#ccc".to_string() }
        }
    };

    let (lo, hi) = range(window_raw, false);
    let p = Panel { top: 0.0, n, lo, hi };
    p.frame(&mut out, "Input window");
    p.polyline(&mut out, window_raw, "#1f77b4");
    p.x_labels(&mut out, &labels);

    let (lo, hi) = range(&map.attention, true);
    let p = Panel { top: PANEL_H, n, lo, hi };
    p.frame(&mut out, "Mean attention per lag");
    p.bars(&mut out, &map.attention, shade("#2ca02c"));
    p.x_labels(&mut out, &labels);

    let (lo, hi) = range(&map.shap, true);
    let p = Panel { top: 2.0 * PANEL_H, n, lo, hi };
    p.frame(&mut out, "SHAP value per lag");
    p.bars(&mut out, &map.shap, |i, v| {
        if !map.is_reported(i) {
            "#ccc".into()
        } else if v >= 0.0 {
            "#d62728".into()
        } else {
            "#1f77b4".into()
        }
    });
    p.x_labels(&mut out, &labels);

    let mut both = map.combined.clone();
    both.extend_from_slice(&map.smoothed);
    let (lo, hi) = range(&both, true);
    let p = Panel { top: 3.0 * PANEL_H, n, lo, hi };
    p.frame(&mut out, "Combined influence: SHAP x attention (smoothed line)");
    p.bars(&mut out, &map.combined, shade("#9467bd"));
    p.polyline(&mut out, &map.smoothed, "#ff7f0e");
    p.x_labels(&mut out, &labels);

    out.push_str("</svg>\n");
    out
}

/// Trial objectives as points and the best-so-far curve as a line.
pub fn incumbent_figure(objectives: &[f64], best_so_far: &[f64]) -> String {
    let n = objectives.len();
    let mut all = objectives.to_vec();
    all.extend_from_slice(best_so_far);
    let (lo, hi) = range(&all, false);
    let mut out = String::new();
    header(&mut out, W, PANEL_H + 40.0);
    let p = Panel { top: 0.0, n, lo, hi };
    p.frame(&mut out, "Tuning trials: objective and best so far");
    for (i, v) in objectives.iter().enumerate().filter(|(_, v)| v.is_finite()) {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#1f77b4"/>"##,
            p.x(i as f64),
            p.y(*v)
        );
    }
    p.polyline(&mut out, best_so_far, "#d62728");
    let labels: Vec<String> = (1..=n).map(|t| t.to_string()).collect();
    p.x_labels(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// One box per named sample: median line, IQR box, whiskers at the most
/// extreme points inside the 1.5 IQR fences, outliers as circles.
pub fn box_figure(title: &str, boxes: &[(String, BoxSummary)]) -> String {
    let panel_w = 180.0;
    let width = MARGIN_L + panel_w * boxes.len().max(1) as f64 + MARGIN_R;
    let height = 320.0;
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN_L}" y="18" font-weight="bold">{}</text>"#,
        escape(title)
    );
    let (top, bottom) = (40.0, height - 40.0);
    for (k, (name, b)) in boxes.iter().enumerate() {
        let mut pts = vec![b.lower_whisker, b.upper_whisker, b.q1, b.q3];
        pts.extend_from_slice(&b.outliers);
        let (lo, hi) = range(&pts, false);
        let y = |v: f64| top + (bottom - top) * (1.0 - (v - lo) / (hi - lo));
        let cx = MARGIN_L + panel_w * (k as f64 + 0.5);
        let half = panel_w * 0.2;
        let _ = writeln!(
            out,
            r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            y(b.upper_whisker),
            y(b.q3)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            y(b.q1),
            y(b.lower_whisker)
        );
        for v in [b.lower_whisker, b.upper_whisker] {
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" x2="{:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="#333"/>"##,
                cx - half / 2.0,
                cx + half / 2.0,
                yy = y(v)
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#aec7e8" stroke="#333"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{ym:.1}" y2="{ym:.1}" stroke="red" stroke-width="2"/>"#,
            cx - half,
            cx + half,
            ym = y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(
                out,
                r##"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="none" stroke="#333"/>"##,
                y(*o)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            height - 18.0,
            escape(name)
        );
        for v in [lo, hi] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                cx - half - 6.0,
                y(v) + 4.0,
                fmt_tick(v)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
