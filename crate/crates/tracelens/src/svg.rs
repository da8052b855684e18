//! Minimal SVG bar and line charts for the report figures.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            values,
        }
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub config_hash: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rounded axis bounds that always include zero.
fn y_range(series: &[Series]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in series.iter().flat_map(|s| &s.values) {
        if v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let step = nice_step((hi - lo) / 5.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step)
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let n = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    n * mag
}

impl Chart {
    fn open(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(out, "<!-- config_hash: {} -->", self.config_hash);
        let _ = writeln!(out, "<title>{}</title>", esc(&self.title));
        let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            (LEFT + W - RIGHT) / 2.0,
            esc(&self.title)
        );
    }

    fn axes(&self, out: &mut String, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
        let plot_h = H - TOP - BOTTOM;
        let y = move |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
        let step = nice_step((hi - lo) / 5.0);
        let mut t = lo;
        while t <= hi + step * 1e-9 {
            let yy = y(t);
            let _ = writeln!(
                out,
                "<line x1=\"{LEFT}\" y1=\"{yy:.2}\" x2=\"{:.2}\" y2=\"{yy:.2}\" stroke=\"#e0e0e0\"/>",
                W - RIGHT
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                LEFT - 6.0,
                yy + 4.0,
                fmt_tick(t)
            );
            t += step;
        }
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y(0.0),
            W - RIGHT,
            y(0.0)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.2}\" stroke=\"black\"/>",
            H - BOTTOM
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (LEFT + W - RIGHT) / 2.0,
            H - 15.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            esc(&self.y_label)
        );
        y
    }

    fn legend(&self, out: &mut String, series: &[Series]) {
        for (i, s) in series.iter().enumerate() {
            let y = TOP + 18.0 * i as f64;
            let x = W - RIGHT + 16.0;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", x + 18.0, y + 10.0, esc(&s.name));
        }
    }

    /// Grouped bars: one cluster per category, one bar per series.
    pub fn bars(&self, categories: &[String], series: &[Series]) -> String {
        let mut out = String::new();
        self.open(&mut out);
        let (lo, hi) = y_range(series);
        let y = self.axes(&mut out, lo, hi);
        let plot_w = W - LEFT - RIGHT;
        let slot = plot_w / categories.len().max(1) as f64;
        let bar = slot * 0.8 / series.len().max(1) as f64;
        for (ci, c) in categories.iter().enumerate() {
            let x0 = LEFT + slot * ci as f64 + slot * 0.1;
            for (si, s) in series.iter().enumerate() {
                let v = s.values.get(ci).copied().unwrap_or(0.0);
                let (top, bottom) = if v >= 0.0 { (y(v), y(0.0)) } else { (y(0.0), y(v)) };
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} / {}: {:.2}</title></rect>",
                    x0 + bar * si as f64,
                    bar,
                    bottom - top,
                    PALETTE[si % PALETTE.len()],
                    esc(c),
                    esc(&s.name),
                    v
                );
            }
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                LEFT + slot * (ci as f64 + 0.5),
                H - BOTTOM + 16.0,
                esc(c)
            );
        }
        self.legend(&mut out, series);
        out.push_str("</svg>\n");
        out
    }

    /// Polylines over shared x positions.
    pub fn lines(&self, xs: &[f64], series: &[Series]) -> String {
        let mut out = String::new();
        self.open(&mut out);
        let (lo, hi) = y_range(series);
        let y = self.axes(&mut out, lo, hi);
        let plot_w = W - LEFT - RIGHT;
        let (xmin, xmax) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let span = if xmax > xmin { xmax - xmin } else { 1.0 };
        let x = |v: f64| LEFT + 20.0 + (plot_w - 40.0) * (v - xmin) / span;
        for v in xs {
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                x(*v),
                H - BOTTOM + 16.0,
                fmt_tick(*v)
            );
        }
        for (si, s) in series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = xs
                .iter()
                .zip(&s.values)
                .map(|(a, b)| format!("{:.2},{:.2}", x(*a), y(*b)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                pts.join(" ")
            );
            for (a, b) in xs.iter().zip(&s.values) {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"><title>{}: {:.2}</title></circle>",
                    x(*a),
                    y(*b),
                    esc(&s.name),
                    b
                );
            }
        }
        self.legend(&mut out, series);
        out.push_str("</svg>\n");
        out
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
