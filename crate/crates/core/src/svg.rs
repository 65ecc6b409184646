//! Minimal static SVG plots: scatter + line overlays and bar charts.
//! Output is deterministic (fixed-precision coordinates, no timestamps).

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

pub struct XyPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub scatter: Vec<(f64, f64)>,
    pub lines: Vec<Series>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        title
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64)) {
    let _ = write!(
        out,
        "<rect x=\"{ML:.1}\" y=\"{MT:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    );
    let _ = write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        x_label
    );
    let _ = write!(
        out,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        y_label
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = xr.0 + f * (xr.1 - xr.0);
        let yv = yr.0 + f * (yr.1 - yr.0);
        let xp = ML + f * (W - ML - MR);
        let yp = H - MB - f * (H - MT - MB);
        let _ = write!(
            out,
            "<text x=\"{xp:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{xv:.3}</text>\n",
            H - MB + 16.0
        );
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{yp:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{yv:.3}</text>\n",
            ML - 6.0
        );
    }
}

impl XyPlot {
    pub fn render(&self) -> String {
        let xr = range(
            self.scatter
                .iter()
                .map(|p| p.0)
                .chain(self.lines.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        );
        let yr = range(
            self.scatter
                .iter()
                .map(|p| p.1)
                .chain(self.lines.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
        );
        let px = |x: f64| ML + (x - xr.0) / (xr.1 - xr.0) * (W - ML - MR);
        let py = |y: f64| H - MB - (y - yr.0) / (yr.1 - yr.0) * (H - MT - MB);
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &self.x_label, &self.y_label, xr, yr);
        for (x, y) in &self.scatter {
            if y.is_finite() {
                let _ = write!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"steelblue\" fill-opacity=\"0.5\"/>\n",
                    px(*x),
                    py(*y)
                );
            }
        }
        for (si, series) in self.lines.iter().enumerate() {
            let mut path = String::new();
            for (x, y) in &series.points {
                if !y.is_finite() {
                    continue;
                }
                let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
            }
            let _ = write!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                path.trim_end(),
                series.color
            );
            let _ = write!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
                W - MR - 150.0,
                MT + 16.0 + 14.0 * si as f64,
                series.color,
                series.label
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

pub struct BarPlot {
    pub title: String,
    pub y_label: String,
    pub bars: Vec<(String, f64)>,
}

impl BarPlot {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let (lo, hi) = range(self.bars.iter().map(|b| b.1).chain(std::iter::once(0.0)));
        let py = |y: f64| H - MB - (y - lo) / (hi - lo) * (H - MT - MB);
        axes(&mut out, "", &self.y_label, (0.0, self.bars.len() as f64), (lo, hi));
        let span = W - ML - MR;
        let bw = span / self.bars.len() as f64;
        for (i, (label, v)) in self.bars.iter().enumerate() {
            let x = ML + i as f64 * bw + 0.15 * bw;
            let y0 = py(0.0);
            let y1 = py(*v);
            let (top, height) = if y1 < y0 { (y1, y0 - y1) } else { (y0, y1 - y0) };
            let _ = write!(
                out,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{height:.2}\" fill=\"steelblue\"/>\n",
                0.7 * bw
            );
            let _ = write!(
                out,
                "<text x=\"{:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
                x + 0.35 * bw,
                H - MB + 16.0
            );
            let _ = write!(
                out,
                "<text x=\"{:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.4e}</text>\n",
                x + 0.35 * bw,
                top - 4.0
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
