//! Minimal SVG line plots: axes, ticks at the data range ends, one
//! polyline per series.

use std::fmt::Write as _;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn tr(v: f64, log: bool) -> Option<f64> {
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        v.is_finite().then_some(v)
    }
}

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl Plot {
    pub fn render(&self) -> String {
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| Some((tr(x, self.log_x)?, tr(y, self.log_y)?)))
                    .collect()
            })
            .collect();
        let (x0, x1) = span(pts.iter().flatten().map(|p| p.0));
        let (y0, y1) = span(pts.iter().flatten().map(|p| p.1));
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let shown = |v: f64, log: bool| if log { 10f64.powf(v) } else { v };

        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&self.title)).unwrap();
        writeln!(
            s,
            r#"<path d="M{PAD},{} L{},{} M{PAD},{} L{PAD},{PAD}" stroke="black" fill="none"/>"#,
            H - PAD,
            W - PAD,
            H - PAD,
            H - PAD
        )
        .unwrap();
        for (v, anchor, x) in [(x0, "start", px(x0)), (x1, "end", px(x1))] {
            writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="{anchor}">{:.3e}</text>"#, H - PAD + 16.0, shown(v, self.log_x)).unwrap();
        }
        for v in [y0, y1] {
            writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, py(v) + 4.0, shown(v, self.log_y)).unwrap();
        }
        let xl = format!("{}{}", esc(&self.x_label), if self.log_x { " (log)" } else { "" });
        let yl = format!("{}{}", esc(&self.y_label), if self.log_y { " (log)" } else { "" });
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#, W / 2.0, H - 18.0).unwrap();
        writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{yl}</text>"#, H / 2.0, H / 2.0).unwrap();
        for (k, (series, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, path.join(" ")).unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
                W - PAD,
                PAD + 14.0 * k as f64,
                esc(&series.label)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polyline_per_series() {
        let p = Plot {
            title: "t<1".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: false,
            series: vec![
                Series { label: "a".into(), points: vec![(0.1, 1.0), (1.0, 2.0)] },
                Series { label: "b".into(), points: vec![(0.0, 1.0), (0.5, 3.0)] },
            ],
        };
        let s = p.render();
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("t&lt;1"));
    }
}
