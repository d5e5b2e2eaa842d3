//! Plain static SVG renderings: matrix heatmaps and sweep line charts.

fn color(t: f64) -> String {
    // white -> blue ramp
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - t)) as u8;
    let g = (255.0 * (1.0 - 0.6 * t)) as u8;
    let b = 255u8;
    format!("rgb({r},{g},{b})")
}

/// Heatmap of an n x n matrix with a title; values scaled to [min, max].
pub fn matrix_heatmap(title: &str, values: &[Vec<f64>]) -> String {
    let n = values.len();
    let cell = 12usize;
    let margin = 30usize;
    let size = n * cell + 2 * margin;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in values {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{margin}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>\n"
    ));
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = margin + j * cell;
            let y = margin + i * cell;
            out.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>\n",
                color((v - lo) / span)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Simple line chart of (x, y) points, x ascending.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let w = 480.0;
    let h = 320.0;
    let m = 50.0;
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        x_lo = 0.0;
        x_hi = 1.0;
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let sx = |x: f64| m + (x - x_lo) / (x_hi - x_lo) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * m);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{m}\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m,
        w - m,
        h - m
    ));
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x_label}</text>\n",
        w / 2.0 - 20.0,
        h - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"8\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 {})\">{y_label}</text>\n",
        h / 2.0,
        h / 2.0
    ));
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
        .collect();
    out.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    for &(x, y) in points {
        out.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    out.push_str("</svg>\n");
    out
}
