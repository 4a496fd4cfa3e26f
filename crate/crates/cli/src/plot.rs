//! Small hand-written SVG charts: lines, scatter points and shaded bands.

use std::fmt::Write;

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 380.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;
const LEGEND_ROW: f64 = 16.0;

#[derive(Clone, Debug)]
pub enum Mark {
    Line { dashed: bool },
    Points { radius: f64 },
    /// Filled region between `y` (lower) and `upper`.
    Band { upper: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub mark: Mark,
}

impl Series {
    pub fn line(label: &str, color: &'static str, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            color,
            x,
            y,
            mark: Mark::Line { dashed: false },
        }
    }

    pub fn dashed(mut self) -> Self {
        self.mark = Mark::Line { dashed: true };
        self
    }

    pub fn points(label: &str, color: &'static str, x: Vec<f64>, y: Vec<f64>, radius: f64) -> Self {
        Self {
            label: label.into(),
            color,
            x,
            y,
            mark: Mark::Points { radius },
        }
    }

    pub fn band(label: &str, color: &'static str, x: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            color,
            x,
            y: lower,
            mark: Mark::Band { upper },
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

/// Roughly `target` round-valued ticks covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

pub fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        let (a, b, v) = if self.log_x {
            (self.xr.0.log10(), self.xr.1.log10(), x.log10())
        } else {
            (self.xr.0, self.xr.1, x)
        };
        self.x0 + (v - a) / (b - a) * self.w
    }

    fn ty(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw_panel(out: &mut String, p: &Panel, left: f64) {
    let xs = p.series.iter().flat_map(|s| s.x.iter().copied());
    let mut xr = if p.log_x {
        let (lo, hi) = range(xs.filter(|v| *v > 0.0).map(f64::log10));
        (10f64.powf(lo), 10f64.powf(hi))
    } else {
        range(xs)
    };
    if p.log_x && xr.0 <= 0.0 {
        xr = (1.0, 10.0);
    }
    let yr = range(p.series.iter().flat_map(|s| {
        let upper = match &s.mark {
            Mark::Band { upper } => upper.clone(),
            _ => Vec::new(),
        };
        s.y.iter().copied().chain(upper)
    }));
    let f = Frame {
        x0: left + MARGIN_L,
        y0: MARGIN_T,
        w: PANEL_W - MARGIN_L - MARGIN_R,
        h: PANEL_H - MARGIN_T - MARGIN_B,
        xr,
        yr,
        log_x: p.log_x,
    };
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        f.x0, f.y0, f.w, f.h
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        f.x0 + f.w / 2.0,
        escape(&p.title)
    );
    let xticks = if p.log_x {
        let (a, b) = (xr.0.log10().ceil() as i32, xr.1.log10().floor() as i32);
        (a..=b).map(|k| 10f64.powi(k)).collect()
    } else {
        nice_ticks(xr.0, xr.1, 6)
    };
    for t in xticks {
        let x = f.tx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"##,
            f.y0 + f.h,
            f.y0 + f.h + 4.0,
            f.y0 + f.h + 16.0,
            tick_label(t)
        );
    }
    for t in nice_ticks(yr.0, yr.1, 5) {
        let y = f.ty(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"##,
            f.x0 - 4.0,
            f.x0,
            f.x0 - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        f.x0 + f.w / 2.0,
        PANEL_H - 10.0,
        escape(&p.x_label)
    );
    let (lx, ly) = (left + 16.0, f.y0 + f.h / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"#,
        escape(&p.y_label)
    );

    let _ = writeln!(
        out,
        r#"<clipPath id="clip{left:.0}"><rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}"/></clipPath><g clip-path="url(#clip{left:.0})">"#,
        f.x0, f.y0, f.w, f.h
    );
    for s in &p.series {
        let pts: Vec<(f64, f64)> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!p.log_x || **x > 0.0))
            .map(|(&x, &y)| (f.tx(x), f.ty(y)))
            .collect();
        match &s.mark {
            Mark::Line { dashed } => {
                let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
                    s.color,
                    d.join(" ")
                );
            }
            Mark::Points { radius } => {
                for (x, y) in pts {
                    let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius}" fill="{}" fill-opacity="0.5"/>"#, s.color);
                }
            }
            Mark::Band { upper } => {
                let mut d: Vec<String> = s.x.iter().zip(&s.y).map(|(&x, &y)| format!("{:.2},{:.2}", f.tx(x), f.ty(y))).collect();
                d.extend(s.x.iter().zip(upper).rev().map(|(&x, &y)| format!("{:.2},{:.2}", f.tx(x), f.ty(y))));
                let _ = writeln!(
                    out,
                    r#"<polygon fill="{}" fill-opacity="0.18" stroke="none" points="{}"/>"#,
                    s.color,
                    d.join(" ")
                );
            }
        }
    }
    out.push_str("</g>\n");

    for (k, s) in p.series.iter().enumerate() {
        let y = f.y0 + 12.0 + k as f64 * LEGEND_ROW;
        let x = f.x0 + 8.0;
        let swatch = match s.mark {
            Mark::Points { .. } => format!(r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#, x + 8.0, y - 4.0, s.color),
            Mark::Band { .. } => format!(
                r#"<rect x="{x:.1}" y="{:.1}" width="16" height="8" fill="{}" fill-opacity="0.3"/>"#,
                y - 8.0,
                s.color
            ),
            Mark::Line { .. } => format!(
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/>"#,
                y - 4.0,
                x + 16.0,
                y - 4.0,
                s.color
            ),
        };
        let _ = writeln!(
            out,
            r#"{swatch}<text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#,
            x + 22.0,
            escape(&s.label)
        );
    }
}

/// Panels side by side in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    out.push('\n');
    out.push_str(&format!(r#"<rect width="{width:.0}" height="{PANEL_H:.0}" fill="white"/>"#));
    out.push('\n');
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = nice_ticks(-10.3, 10.3, 6);
        assert_eq!(t, vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert!(nice_ticks(0.013, 0.052, 4).iter().all(|v| (0.013..=0.052).contains(v)));
        assert_eq!(nice_ticks(1.0, 1.0, 5), vec![1.0]);
    }

    #[test]
    fn labels() {
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(-4.0), "-4");
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(1e-5), "1e-5");
    }

    #[test]
    fn render_contains_every_series() {
        let x = vec![1.0, 2.0, 3.0];
        let panel = Panel {
            title: "a < b".into(),
            series: vec![
                Series::line("mean", "#1f77b4", x.clone(), vec![1.0, 2.0, 1.5]),
                Series::points("data", "#777", x.clone(), vec![0.5, 2.5, 1.0], 2.0),
                Series::band("band", "#1f77b4", x, vec![0.0, 1.0, 1.0], vec![2.0, 3.0, 2.0]),
            ],
            ..Panel::default()
        };
        let svg = render(&[panel.clone(), panel]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
