//! Dependency-free SVG emission: log-log scatter/line plots for the
//! convergence tables. Output is deterministic (fixed palette, fixed
//! precision) so rerunning a configuration reproduces artifacts
//! byte-for-byte.

/// One plotted series; points with a nonpositive coordinate are dropped
/// (they have no log-log position).
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Decade tick label such as 1e-3, rendered without sign noise.
fn tick_label(exp: i32) -> String {
    format!("1e{exp}")
}

pub fn log_log_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"14\">{}</text>\n",
        MARGIN_L,
        escape(title)
    ));

    let cleaned: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            (
                s.label.clone(),
                s.points
                    .iter()
                    .copied()
                    .filter(|&(x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, pts)| !pts.is_empty())
        .collect();

    if cleaned.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">no positive data</text>\n</svg>\n",
            MARGIN_L,
            HEIGHT / 2.0
        ));
        return svg;
    }

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, pts) in &cleaned {
        for &(x, y) in pts {
            xmin = xmin.min(x.log10());
            xmax = xmax.max(x.log10());
            ymin = ymin.min(y.log10());
            ymax = ymax.max(y.log10());
        }
    }
    // Pad degenerate ranges so single points still land inside the frame.
    if xmax - xmin < 0.5 {
        let c = 0.5 * (xmin + xmax);
        xmin = c - 0.25;
        xmax = c + 0.25;
    }
    if ymax - ymin < 0.5 {
        let c = 0.5 * (ymin + ymax);
        ymin = c - 0.25;
        ymax = c + 0.25;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |lx: f64| MARGIN_L + (lx - xmin) / (xmax - xmin) * plot_w;
    let sy = |ly: f64| MARGIN_T + (ymax - ly) / (ymax - ymin) * plot_h;

    // Frame.
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(plot_w),
        fmt(plot_h)
    ));

    // Decade ticks and gridlines.
    for exp in (xmin.floor() as i32)..=(xmax.ceil() as i32) {
        let lx = exp as f64;
        if lx < xmin - 1e-9 || lx > xmax + 1e-9 {
            continue;
        }
        let px = sx(lx);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ddd\"/>\n",
            fmt(px),
            fmt(MARGIN_T),
            fmt(MARGIN_T + plot_h)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(px),
            fmt(MARGIN_T + plot_h + 18.0),
            tick_label(exp)
        ));
    }
    for exp in (ymin.floor() as i32)..=(ymax.ceil() as i32) {
        let ly = exp as f64;
        if ly < ymin - 1e-9 || ly > ymax + 1e-9 {
            continue;
        }
        let py = sy(ly);
        svg.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ddd\"/>\n",
            fmt(py),
            fmt(MARGIN_L),
            fmt(MARGIN_L + plot_w)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_L - 6.0),
            fmt(py + 4.0),
            tick_label(exp)
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 12.0),
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0),
        escape(y_label)
    ));

    // Series: polyline in x-sorted order plus markers.
    for (si, (label, pts)) in cleaned.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = sorted
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(sx(x.log10())), fmt(sy(y.log10()))))
            .collect();
        if path.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            ));
        }
        for &(x, y) in &sorted {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(sx(x.log10())),
                fmt(sy(y.log10()))
            ));
        }
        let ly = MARGIN_T + 14.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            fmt(MARGIN_L + plot_w + 10.0),
            fmt(ly - 4.0),
            fmt(MARGIN_L + plot_w + 26.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(MARGIN_L + plot_w + 32.0),
            fmt(ly),
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
