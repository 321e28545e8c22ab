//! Minimal SVG renderer for CDF curves.

use std::fmt::Write as _;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 56.0;
const MR: f64 = 16.0;
const MT: f64 = 24.0;
const MB: f64 = 48.0;

/// Renders one polyline per method over shared thresholds.
pub fn render_cdf_svg(thresholds: &[f64], methods: &[(String, Vec<f64>)]) -> String {
    let tmax = thresholds.last().copied().unwrap_or(1.0);
    let px = |t: f64| ML + (W - ML - MR) * t / tmax;
    let py = |f: f64| MT + (H - MT - MB) * (1.0 - f);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    // axes and gridlines
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let y = py(f);
        let _ = writeln!(
            s,
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
            W - MR
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{f:.1}</text>",
            ML - 6.0,
            y + 4.0
        );
    }
    for k in 0..=6 {
        let t = tmax * k as f64 / 6.0;
        let x = px(t);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{MT}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#eee\"/>",
            H - MB
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t:.1}</text>",
            H - MB + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">distance (standard deviations)</text>",
        (ML + W - MR) / 2.0,
        H - 12.0
    );
    for (i, (name, fracs)) in methods.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut points = String::new();
        // curves start at the origin of the truncated axis
        let _ = write!(points, "{:.1},{:.1} ", px(0.0), py(0.0));
        for (t, f) in thresholds.iter().zip(fracs) {
            let _ = write!(points, "{:.1},{:.1} ", px(*t), py(*f));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            points.trim_end()
        );
        let ly = MT + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ML + 10.0,
            ML + 34.0
        );
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">{name}</text>", ML + 40.0, ly + 4.0);
    }
    let _ = writeln!(s, "</svg>");
    s
}
