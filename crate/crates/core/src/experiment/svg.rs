//! Minimal hand-written SVG charts.
//!
//! Each curve or bar group is a `<g>` carrying a `data-series` attribute so
//! tests and scripts can find them without rendering.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(title)
    )
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1) = (LEFT, H - BOTTOM, W - RIGHT);
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        (x0 + x1) / 2.0,
        H - 18.0,
        esc(x_label),
        (TOP + y0) / 2.0,
        (TOP + y0) / 2.0,
        esc(y_label)
    );
}

fn legend(s: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let x = W - RIGHT + 16.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            y,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y + 10.0,
            esc(name)
        );
    }
}

/// Line chart with one polyline per series; `y` is clamped to `[y_min, y_max]`.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min { (x_min, x_max) } else { (0.0, 1.0) };
    let ys = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (y_min, y_max) = if y_lo.is_finite() && y_hi > y_lo {
        let pad = 0.05 * (y_hi - y_lo);
        (y_lo - pad, y_hi + pad)
    } else {
        (0.0, 1.0)
    };
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (W - LEFT - RIGHT);
    let py = |y: f64| (H - BOTTOM) - (y - y_min) / (y_max - y_min) * (H - TOP - BOTTOM);

    let mut s = open(title);
    axes(&mut s, x_label, y_label);
    for t in 0..=4 {
        let y = y_min + (y_max - y_min) * f64::from(t) / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(s, "<text x=\"{LEFT}\" y=\"{}\" text-anchor=\"middle\">{x_min}</text>", H - BOTTOM + 16.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_max}</text>", W - RIGHT, H - BOTTOM + 16.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<g class=\"curve\" data-series=\"{}\"><polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/></g>",
            esc(name),
            path.join(" ")
        );
    }
    legend(&mut s, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grouped bars on a log₁₀ axis: one group per category, one bar per metric.
/// Non-positive values are drawn as empty bars.
pub fn log_bar_chart(
    title: &str,
    y_label: &str,
    metrics: &[&str],
    groups: &[(String, Vec<f64>)],
) -> String {
    let vals = groups.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| *v > 0.0);
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (e_min, e_max) = if lo.is_finite() {
        (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0))
    } else {
        (0.0, 1.0)
    };
    let py = |v: f64| (H - BOTTOM) - (v.log10() - e_min) / (e_max - e_min) * (H - TOP - BOTTOM);

    let mut s = open(title);
    axes(&mut s, "configuration", y_label);
    let mut e = e_min;
    while e <= e_max {
        let y = py(10f64.powf(e));
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">1e{e}</text>",
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
        e += 1.0;
    }
    let slot = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    let bar = slot * 0.8 / metrics.len().max(1) as f64;
    for (g, (name, values)) in groups.iter().enumerate() {
        let x0 = LEFT + slot * g as f64 + slot * 0.1;
        let _ = write!(s, "<g class=\"bar-group\" data-series=\"{}\">", esc(name));
        for (m, &v) in values.iter().enumerate() {
            let top = if v > 0.0 { py(v) } else { H - BOTTOM };
            let _ = write!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} {}</title></rect>",
                x0 + bar * m as f64,
                top,
                bar,
                (H - BOTTOM) - top,
                PALETTE[m % PALETTE.len()],
                esc(metrics.get(m).copied().unwrap_or("")),
                v
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text></g>",
            x0 + slot * 0.4,
            H - BOTTOM + 16.0,
            esc(name)
        );
    }
    legend(&mut s, &metrics.iter().map(|m| m.to_string()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}
