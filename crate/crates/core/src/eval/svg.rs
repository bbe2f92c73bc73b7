//! Minimal static SVG charts.

use std::fmt::Write as _;

use super::report::{KdeCurve, Metric, MetricSummary};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Frame {
        let widen = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (bx, by) = (LEFT, H - BOTTOM);
    let _ = writeln!(
        out,
        "<path d=\"M{bx:.2} {TOP:.2} L{bx:.2} {by:.2} L{:.2} {by:.2}\" stroke=\"black\" fill=\"none\"/>",
        W - RIGHT
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        if x_ticks {
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{xv:.3}</text>",
                f.x(xv),
                by + 15.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{yv:.3}</text>",
            bx - 5.0,
            f.y(yv) + 3.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{y_label}</text>",
        H / 2.0,
        H / 2.0
    );
}

fn legend(out: &mut String, i: usize, label: &str) {
    let y = TOP + 10.0 + 16.0 * i as f64;
    let x = W - RIGHT - 150.0;
    let _ = writeln!(
        out,
        "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"12\" height=\"4\" fill=\"{}\"/>",
        y - 4.0,
        COLORS[i % COLORS.len()]
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>",
        x + 18.0
    );
}

pub(crate) fn kde_plot(curve: &KdeCurve) -> String {
    let mut out = String::new();
    open(&mut out, &format!("KDE of {} cosine distance", curve.metric));
    let (x0, x1) = match (curve.grid.first(), curve.grid.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => (0.0, 1.0),
    };
    let ymax = curve
        .densities
        .iter()
        .flat_map(|(_, d)| d.iter().copied())
        .fold(0.0, f64::max);
    let f = Frame::new(x0, x1, 0.0, if ymax > 0.0 { ymax * 1.05 } else { 1.0 });
    axes(&mut out, &f, "cosine distance", "density", true);
    for (i, (strategy, d)) in curve.densities.iter().enumerate() {
        let points: Vec<String> = curve
            .grid
            .iter()
            .zip(d)
            .map(|(x, y)| format!("{:.2},{:.2}", f.x(*x), f.y(*y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            points.join(" "),
            COLORS[i % COLORS.len()]
        );
        legend(&mut out, i, strategy.name());
    }
    out.push_str("</svg>\n");
    out
}

pub(crate) fn box_plot(metric: Metric, summaries: &[&MetricSummary]) -> String {
    let mut out = String::new();
    open(&mut out, &format!("{metric} cosine distance by strategy"));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in summaries {
        let b = &s.box_stats;
        for v in b.outliers.iter().chain([&b.whisker_low, &b.whisker_high]) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = (hi - lo) * 0.05;
    let n = summaries.len().max(1) as f64;
    let f = Frame::new(0.0, n, lo - pad, hi + pad);
    axes(&mut out, &f, "strategy", "cosine distance", false);
    for (i, s) in summaries.iter().enumerate() {
        let b = &s.box_stats;
        let color = COLORS[i % COLORS.len()];
        let cx = f.x(i as f64 + 0.5);
        let half = (f.x(1.0) - f.x(0.0)) * 0.25;
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            f.y(b.whisker_low),
            f.y(b.whisker_high)
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" stroke=\"black\"/>",
            cx - half,
            f.y(b.q3),
            2.0 * half,
            (f.y(b.q1) - f.y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
            cx - half,
            f.y(b.median),
            cx + half,
            f.y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(
                out,
                "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>",
                f.y(*o)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            H - BOTTOM + 28.0,
            s.strategy.name()
        );
    }
    out.push_str("</svg>\n");
    out
}
