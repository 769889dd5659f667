//! Minimal deterministic SVG line charts (log-log capable), so convergence
//! and cost plots need no external plotting dependency.

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
}

pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const ML: f64 = 86.0; // left margin
const MR: f64 = 24.0;
const MT: f64 = 46.0;
const MB: f64 = 64.0;

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Render a chart to an SVG string. Non-positive values are dropped from
/// logarithmic axes.
pub fn line_chart(spec: &ChartSpec, series: &[Series]) -> String {
    let tx = |v: f64| if spec.log_x { v.log10() } else { v };
    let ty = |v: f64| if spec.log_y { v.log10() } else { v };
    let mut pts: Vec<Vec<(f64, f64)>> = Vec::new();
    for s in series {
        pts.push(
            s.points
                .iter()
                .filter(|(x, y)| {
                    (!spec.log_x || *x > 0.0) && (!spec.log_y || *y > 0.0)
                })
                .map(|&(x, y)| (tx(x), ty(y)))
                .collect(),
        );
    }
    let all: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
    let (x0, x1, y0, y1) = if all.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let xs: Vec<f64> = all.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = all.iter().map(|p| p.1).collect();
        let (mut x0, mut x1) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
        let (mut y0, mut y1) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (px, py) = (0.05 * (x1 - x0), 0.08 * (y1 - y0));
        (x0 - px, x1 + px, y0 - py, y1 + py)
    };
    let sx = (W - ML - MR) / (x1 - x0);
    let sy = (H - MT - MB) / (y1 - y0);
    let mx = |x: f64| ML + (x - x0) * sx;
    let my = |y: f64| H - MB - (y - y0) * sy;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        spec.title
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    // ticks: integers for log axes, five evenly spaced otherwise
    let ticks = |a: f64, b: f64, log: bool| -> Vec<f64> {
        if log {
            let (lo, hi) = (a.ceil() as i64, b.floor() as i64);
            if hi >= lo && (hi - lo) <= 12 {
                return (lo..=hi).map(|v| v as f64).collect();
            }
        }
        (0..=4).map(|i| a + (b - a) * i as f64 / 4.0).collect()
    };
    for t in ticks(x0, x1, spec.log_x) {
        let x = mx(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\"/>\n",
            fmt(x),
            H - MB,
            fmt(x),
            H - MB + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(x),
            H - MB + 20.0,
            tick_label(t, spec.log_x)
        ));
    }
    for t in ticks(y0, y1, spec.log_y) {
        let y = my(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{ML}\" y2=\"{}\" stroke=\"#999\"/>\n",
            ML - 5.0,
            fmt(y),
            fmt(y)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            fmt(y + 4.0),
            tick_label(t, spec.log_y)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 16.0,
        spec.x_label
    ));
    out.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        spec.y_label
    ));
    // series
    for (si, (s, p)) in series.iter().zip(&pts).enumerate() {
        if !p.is_empty() {
            let path: Vec<String> =
                p.iter().map(|&(x, y)| format!("{},{}", fmt(mx(x)), fmt(my(y)))).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\"/>\n",
                path.join(" "),
                s.color
            ));
            for &(x, y) in p {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                    fmt(mx(x)),
                    fmt(my(y)),
                    s.color
                ));
            }
        }
        let ly = MT + 16.0 * si as f64 + 4.0;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{}\"/>\n",
            W - MR - 170.0,
            ly - 4.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            W - MR - 152.0,
            ly,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}
