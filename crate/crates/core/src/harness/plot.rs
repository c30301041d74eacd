use std::fmt::Write;

use super::MetricsRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of the aggregate rows: one line per series, categorical x in
/// order of first appearance, error bars from `accuracy_std` when
/// `with_std`. The y axis spans `[0, 1]` or `[0, max]`, whichever is larger.
pub fn render_svg(
    rows: &[MetricsRow],
    title: &str,
    value: impl Fn(&MetricsRow) -> Option<f64>,
    with_std: bool,
) -> String {
    let agg: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_aggregate()).collect();
    let mut xs: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for r in &agg {
        if !xs.contains(&r.x.as_str()) {
            xs.push(&r.x);
        }
        if !series.contains(&r.series.as_str()) {
            series.push(&r.series);
        }
    }
    let top = agg
        .iter()
        .filter_map(|r| value(r).map(|v| v + if with_std { r.accuracy_std.unwrap_or(0.0) } else { 0.0 }))
        .fold(1.0f64, f64::max);
    let px = |i: usize| {
        let span = WIDTH - 2.0 * MARGIN;
        if xs.len() < 2 {
            MARGIN + span / 2.0
        } else {
            MARGIN + span * i as f64 / (xs.len() - 1) as f64
        }
    };
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v / top).clamp(0.0, 1.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, y1) = (MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##,
            WIDTH - MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(i),
            y0 + 18.0,
            escape(x)
        );
    }
    for (si, name) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut points = Vec::new();
        for r in agg.iter().filter(|r| r.series == *name) {
            let Some(v) = value(r) else { continue };
            let i = xs.iter().position(|x| *x == r.x).unwrap_or(0);
            points.push((px(i), v, r.accuracy_std.filter(|_| with_std)));
        }
        let path: Vec<String> = points.iter().map(|(x, v, _)| format!("{x:.1},{:.1}", py(*v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for (x, v, sd) in &points {
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, py(*v));
            if let Some(sd) = sd {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                    py(v - sd),
                    py(v + sd)
                );
            }
        }
        let ly = MARGIN + 16.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{color}"/>"#,
            WIDTH - MARGIN - 140.0,
            ly - 9.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}">{}</text>"#,
            WIDTH - MARGIN - 125.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
