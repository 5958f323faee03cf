//! Minimal deterministic SVG line charts.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 140.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_x: bool,
}

/// Data-to-pixel mapping of a rendered chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    log_x: bool,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.ln()
        } else {
            x
        }
    }

    pub fn x_px(&self, x: f64) -> f64 {
        let (lo, hi) = (self.tx(self.x_lo), self.tx(self.x_hi));
        MARGIN_LEFT + (self.tx(x) - lo) / (hi - lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn y_px(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl ChartSpec {
    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::Config("chart has no series".into()));
        }
        for s in &self.series {
            if s.points.is_empty() {
                return Err(Error::Config(format!("series {:?} is empty", s.name)));
            }
            if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::Config(format!("series {:?} has non-finite points", s.name)));
            }
            if s.points.windows(2).any(|w| w[0].0 > w[1].0) {
                return Err(Error::Config(format!("series {:?} is not sorted by x", s.name)));
            }
            if self.log_x && s.points.iter().any(|(x, _)| *x <= 0.0) {
                return Err(Error::Config("log x axis needs positive x".into()));
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> Frame {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (mut x_lo, mut x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (mut y_lo, mut y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        if x_lo == x_hi {
            if self.log_x {
                x_lo /= 2.0;
                x_hi *= 2.0;
            } else {
                x_lo -= 1.0;
                x_hi += 1.0;
            }
        }
        if y_lo == y_hi {
            y_lo -= 1.0;
            y_hi += 1.0;
        } else {
            let pad = 0.05 * (y_hi - y_lo);
            y_lo -= pad;
            y_hi += pad;
        }
        Frame {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            log_x: self.log_x,
        }
    }

    /// Renders a standalone SVG document; identical input gives identical bytes.
    pub fn render(&self) -> Result<String> {
        self.validate()?;
        let fr = self.frame();
        let mut out = String::new();
        let plot_bottom = HEIGHT - MARGIN_BOTTOM;
        let plot_right = WIDTH - MARGIN_RIGHT;
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = WIDTH,
            h = HEIGHT
        );
        let _ = writeln!(
            out,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            px((MARGIN_LEFT + plot_right) / 2.0),
            escape(&self.title)
        );
        // axes
        let _ = writeln!(
            out,
            r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#,
            l = px(MARGIN_LEFT),
            t = px(MARGIN_TOP),
            b = px(plot_bottom),
            r = px(plot_right)
        );
        // x ticks at every distinct data x
        let mut xs: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for x in xs {
            let xp = px(fr.x_px(x));
            let _ = writeln!(
                out,
                r#"<line x1="{xp}" y1="{b}" x2="{xp}" y2="{b5}" stroke="black"/><text x="{xp}" y="{ty}" text-anchor="middle">{}</text>"#,
                fmt_num(x),
                b = px(plot_bottom),
                b5 = px(plot_bottom + 5.0),
                ty = px(plot_bottom + 18.0)
            );
        }
        for i in 0..=4 {
            let y = fr.y_lo + (fr.y_hi - fr.y_lo) * i as f64 / 4.0;
            let yp = px(fr.y_px(y));
            let _ = writeln!(
                out,
                r#"<line x1="{l5}" y1="{yp}" x2="{l}" y2="{yp}" stroke="black"/><text x="{tx}" y="{yp}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                fmt_num(y),
                l5 = px(MARGIN_LEFT - 5.0),
                l = px(MARGIN_LEFT),
                tx = px(MARGIN_LEFT - 8.0)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px((MARGIN_LEFT + plot_right) / 2.0),
            px(HEIGHT - 18.0),
            escape(&format!(
                "{}{}",
                self.x_label,
                if self.log_x { " (log scale)" } else { "" }
            ))
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
            escape(&self.y_label),
            y = px((MARGIN_TOP + plot_bottom) / 2.0)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", px(fr.x_px(x)), px(fr.y_px(y))))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                escape(&s.name),
                pts.join(" ")
            );
            for &(x, y) in &s.points {
                let _ = writeln!(
                    out,
                    r#"<circle class="marker" data-series="{}" cx="{}" cy="{}" r="3.5" fill="{color}"/>"#,
                    escape(&s.name),
                    px(fr.x_px(x)),
                    px(fr.y_px(y))
                );
            }
            let ly = MARGIN_TOP + 10.0 + 20.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{tx}" y="{y}" dominant-baseline="middle">{}</text>"#,
                escape(&s.name),
                x1 = px(plot_right + 15.0),
                x2 = px(plot_right + 40.0),
                tx = px(plot_right + 46.0),
                y = px(ly)
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(points: Vec<(f64, f64)>) -> ChartSpec {
        ChartSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "a<b".into(),
                points,
            }],
            log_x: true,
        }
    }

    #[test]
    fn renders_and_escapes() {
        let svg = spec(vec![(1.0, 2.0), (10.0, 3.0)]).render().unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("class=\"marker\"").count(), 2);
    }

    #[test]
    fn single_point() {
        let svg = spec(vec![(7.0, 0.4)]).render().unwrap();
        assert_eq!(svg.matches("class=\"marker\"").count(), 1);
    }

    #[test]
    fn rejects_bad_series() {
        assert!(spec(vec![]).render().is_err());
        assert!(spec(vec![(2.0, 1.0), (1.0, 1.0)]).render().is_err());
        assert!(spec(vec![(0.0, 1.0)]).render().is_err());
        let mut s = spec(vec![(1.0, 1.0)]);
        s.series.clear();
        assert!(s.render().is_err());
    }

    #[test]
    fn frame_orientation() {
        let s = spec(vec![(1.0, 0.0), (100.0, 1.0)]);
        let f = s.frame();
        assert!(f.x_px(1.0) < f.x_px(10.0));
        assert!((f.x_px(10.0) - (f.x_px(1.0) + f.x_px(100.0)) / 2.0).abs() < 1e-9);
        assert!(f.y_px(1.0) < f.y_px(0.0));
    }
}
