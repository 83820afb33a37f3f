//! Minimal SVG output: line charts with shaded min/max bands and scatter plots with
//! error bars.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Roughly `n` round tick positions covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    let raw = (hi - lo) / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..)
        .map(|i| first + i as f64 * step)
        .take_while(|t| *t <= hi + step * 1e-9)
        .collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Self {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for x in ticks(f.x0, f.x1, 6) {
        let px = f.px(x);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 19.0,
            tick_label(x)
        );
    }
    for y in ticks(f.y0, f.y1, 6) {
        let py = f.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/><line x1="{l}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#e0e0e0"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            l - 5.0,
            l - 8.0,
            py + 4.0,
            tick_label(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(20,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, i: usize, label: &str, dashed: bool) {
    let x = WIDTH - RIGHT + 15.0;
    let y = TOP + 10.0 + 20.0 * i as f64;
    let dash = if dashed { r#" stroke-dasharray="4,3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
        x + 20.0,
        color(i),
        x + 26.0,
        y + 4.0,
        escape(label)
    );
}

/// One line with an optional min/max band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.xs.iter().copied());
    let ys = series.iter().flat_map(|s| {
        s.ys.iter()
            .chain(s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi)))
            .copied()
    });
    let f = Frame::new(xs.clone(), ys.collect::<Vec<_>>().into_iter());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        if let Some((lo, hi)) = &s.band {
            let mut pts: Vec<String> = s
                .xs
                .iter()
                .zip(hi)
                .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
                .collect();
            pts.extend(
                s.xs.iter()
                    .zip(lo)
                    .rev()
                    .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y))),
            );
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" "),
                color(i)
            );
        }
        let pts: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            color(i)
        );
        legend(&mut out, i, &s.label, false);
    }
    out.push_str("</svg>\n");
    out
}

/// A scatter point; `x = None` draws no marker and flags the label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub label: String,
    pub x: Option<f64>,
    pub y: f64,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[ScatterPoint]) -> String {
    let xs: Vec<f64> = points
        .iter()
        .flat_map(|p| p.x.into_iter().chain(p.x_range.into_iter().flat_map(|(a, b)| [a, b])))
        .chain([0.0, 1.0])
        .collect();
    let ys: Vec<f64> = points
        .iter()
        .flat_map(|p| [p.y].into_iter().chain(p.y_range.into_iter().flat_map(|(a, b)| [a, b])))
        .collect();
    let f = Frame::new(xs.into_iter(), ys.into_iter());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (i, p) in points.iter().enumerate() {
        let c = color(i);
        match p.x {
            Some(x) => {
                let (cx, cy) = (f.px(x), f.py(p.y));
                if let Some((a, b)) = p.x_range {
                    let _ = writeln!(
                        out,
                        r#"<line class="xerr" x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke="{c}"/>"#,
                        f.px(a),
                        f.px(b)
                    );
                }
                if let Some((a, b)) = p.y_range {
                    let _ = writeln!(
                        out,
                        r#"<line class="yerr" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#,
                        f.py(a),
                        f.py(b)
                    );
                }
                let _ = writeln!(
                    out,
                    r#"<circle class="marker" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{c}"/>"#
                );
                legend(&mut out, i, &p.label, false);
            }
            None => legend(&mut out, i, &format!("{} (never reached)", p.label), true),
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_range() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = ticks(-1634.0, -120.0, 6);
        assert!(t.iter().all(|v| (v / 250.0).fract() == 0.0), "{t:?}");
        assert_eq!(ticks(3.0, 3.0, 5), vec![3.0]);
    }

    #[test]
    fn missing_points_have_no_marker() {
        let pts = [
            ScatterPoint {
                label: "a".into(),
                x: Some(0.5),
                y: 1.0,
                x_range: Some((0.4, 0.6)),
                y_range: Some((0.9, 1.1)),
            },
            ScatterPoint {
                label: "b<".into(),
                x: None,
                y: 0.8,
                x_range: None,
                y_range: None,
            },
        ];
        let svg = scatter("t", "x", "y", &pts);
        assert_eq!(svg.matches("class=\"marker\"").count(), 1);
        assert!(svg.contains("b&lt; (never reached)"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn line_chart_draws_bands() {
        let s = Series {
            label: "baseline".into(),
            xs: vec![0.0, 1.0, 2.0],
            ys: vec![-3.0, -2.0, -1.0],
            band: Some((vec![-4.0, -3.0, -2.0], vec![-2.0, -1.0, 0.0])),
        };
        let svg = line_chart("curves", "step", "return", &[s]);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
