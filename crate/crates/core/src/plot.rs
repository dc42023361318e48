//! Minimal SVG rendering of six-channel IMU traces.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const PANEL: f64 = 180.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 3] = ["#d62728", "#2ca02c", "#1f77b4"];

fn panel(svg: &mut String, rows: &[[f64; 6]], channels: [usize; 3], top: f64, title: &str) {
    let values = rows.iter().flat_map(|r| channels.map(|c| r[c]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = rows.len().max(2) - 1;
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / n as f64;
    let y = |v: f64| top + PANEL - (v - lo) / span * PANEL;
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{:.1}" font-size="12">{title} [{lo:.3}, {hi:.3}]</text>"#,
        top - 6.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{top:.1}" width="{:.1}" height="{PANEL}" fill="none" stroke="#999"/>"##,
        WIDTH - 2.0 * MARGIN
    );
    for (k, &c) in channels.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x(i), y(r[c])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            COLORS[k],
            points.join(" ")
        );
    }
}

/// Accelerometer and gyroscope panels, x/y/z in red/green/blue.
pub fn imu_svg(rows: &[[f64; 6]], title: &str) -> String {
    let height = 2.0 * PANEL + 3.0 * MARGIN;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">
<text x="{MARGIN}" y="16" font-size="14">{title}</text>
"#
    );
    panel(&mut svg, rows, [0, 1, 2], MARGIN, "accel m/s^2");
    panel(
        &mut svg,
        rows,
        [3, 4, 5],
        2.0 * MARGIN + PANEL,
        "gyro rad/s",
    );
    svg.push_str("</svg>\n");
    svg
}
