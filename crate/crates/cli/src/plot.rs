//! Minimal static SVG line and band plots.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#555555"];

pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
    /// Draw as a step histogram; `x` then holds the bin edges.
    pub steps: bool,
}

pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    pub y_range: Option<(f64, f64)>,
    pub log_y: bool,
}

impl Line {
    pub fn new(label: &str, x: &[f64], y: &[f64]) -> Self {
        Line {
            label: label.to_string(),
            x: x.to_vec(),
            y: y.to_vec(),
            dashed: false,
            steps: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn steps(mut self) -> Self {
        self.steps = true;
        self
    }

    fn points(&self) -> Vec<(f64, f64)> {
        if !self.steps {
            return self.x.iter().copied().zip(self.y.iter().copied()).collect();
        }
        let mut pts = Vec::with_capacity(2 * self.y.len());
        for (i, &v) in self.y.iter().enumerate() {
            pts.push((self.x[i], v));
            pts.push((self.x[i + 1], v));
        }
        pts
    }
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + 1e-9 * span {
        ticks.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    fn extent(&self) -> (f64, f64, f64, f64) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in &self.lines {
            xs.extend(l.x.iter().copied());
            ys.extend(l.y.iter().copied());
        }
        for b in &self.bands {
            xs.extend(b.x.iter().copied());
            ys.extend(b.lower.iter().chain(&b.upper).copied());
        }
        let fin = |v: &[f64]| -> (f64, f64) {
            v.iter()
                .filter(|x| x.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
        };
        let (x0, x1) = fin(&xs);
        let (mut y0, mut y1) = fin(&ys);
        if let Some(r) = self.y_range {
            (y0, y1) = r;
        } else if self.log_y {
            y0 = ys.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        } else {
            y0 = y0.min(0.0);
            y1 += 0.05 * (y1 - y0);
        }
        if !(x1 > x0) {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if !(y1 > y0) {
            y1 = y0 + 1.0;
        }
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.extent();
        let tr = |v: f64| if self.log_y { v.max(y0).log10() } else { v };
        let (ty0, ty1) = (tr(y0), tr(y1));
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| {
            let t = ((tr(y) - ty0) / (ty1 - ty0)).clamp(-0.02, 1.02);
            H - BOTTOM - t * (H - TOP - BOTTOM)
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        for (i, b) in self.bands.iter().enumerate() {
            let mut d = String::new();
            for (j, (&x, &u)) in b.x.iter().zip(&b.upper).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, px(x), py(u));
            }
            for (&x, &l) in b.x.iter().zip(&b.lower).rev() {
                let _ = write!(d, "L{:.2},{:.2} ", px(x), py(l));
            }
            let _ = writeln!(
                s,
                r#"<path d="{}Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                d,
                COLORS[(i + 1) % COLORS.len()]
            );
        }
        let clip = format!(
            r#"<clipPath id="area"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></clipPath>"#,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        let _ = writeln!(s, "{clip}");
        for (i, l) in self.lines.iter().enumerate() {
            let pts: Vec<String> = l
                .points()
                .into_iter()
                .filter(|p| p.1.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{} clip-path="url(#area)"/>"#,
                pts.join(" "),
                COLORS[i % COLORS.len()],
                if l.dashed { r#" stroke-dasharray="6,4""# } else { "" }
            );
        }
        let (bx, by) = (LEFT, H - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        for t in nice_ticks(x0, x1, 8) {
            let x = px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                by + 5.0,
                by + 18.0,
                fmt_tick(t)
            );
        }
        let yticks: Vec<f64> = if self.log_y {
            let (a, b) = (ty0.floor() as i32, ty1.ceil() as i32);
            (a..=b).map(|e| 10f64.powi(e)).filter(|&v| v >= y0 && v <= y1).collect()
        } else {
            nice_ticks(y0, y1, 6)
        };
        for t in yticks {
            let y = py(t);
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y:.2}" x2="{bx}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                bx - 5.0,
                bx - 8.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        let mut ly = TOP + 14.0;
        for (i, l) in self.lines.iter().enumerate() {
            legend(&mut s, ly, COLORS[i % COLORS.len()], &l.label, false);
            ly += 16.0;
        }
        for (i, b) in self.bands.iter().enumerate() {
            legend(&mut s, ly, COLORS[(i + 1) % COLORS.len()], &b.label, true);
            ly += 16.0;
        }
        s.push_str("</svg>\n");
        s
    }
}

fn legend(s: &mut String, y: f64, color: &str, label: &str, filled: bool) {
    let x = W - RIGHT - 190.0;
    if filled {
        let _ = write!(
            s,
            r#"<rect x="{x}" y="{}" width="22" height="10" fill="{color}" fill-opacity="0.25"/>"#,
            y - 8.0
        );
    } else {
        let _ = write!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            y - 3.0,
            x + 22.0,
            y - 3.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 28.0, escape(label));
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(-7.0, 7.0, 8);
        assert_eq!(t.first(), Some(&-6.0));
        assert_eq!(t.last(), Some(&6.0));
        assert!(t.contains(&0.0));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let x = [0.0, 1.0, 2.0];
        let p = Plot {
            title: "a < b".into(),
            lines: vec![Line::new("f", &x, &[1.0, 2.0, 1.0])],
            bands: vec![Band {
                label: "band".into(),
                x: x.to_vec(),
                lower: vec![0.5, 1.5, 0.5],
                upper: vec![1.5, 2.5, 1.5],
            }],
            ..Plot::default()
        };
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
