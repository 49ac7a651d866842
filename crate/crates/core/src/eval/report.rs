use std::fmt::Write;

/// One line of the cumulative-regret plot.
#[derive(Debug, Clone)]
pub struct SeedCurve {
    pub label: String,
    pub cumulative: Vec<f64>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Static SVG line plot of cumulative regret against episode.
pub fn regret_svg(curves: &[SeedCurve]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let k_max = curves.iter().map(|c| c.cumulative.len()).max().unwrap_or(1).max(1) as f64;
    let y_max = curves
        .iter()
        .flat_map(|c| c.cumulative.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-9);
    let y_min = curves
        .iter()
        .flat_map(|c| c.cumulative.iter().copied())
        .fold(0.0, f64::min);
    let x = |k: f64| left + pw * k / k_max;
    let y = |v: f64| top + ph * (1.0 - (v - y_min) / (y_max - y_min));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let k = k_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{k:.0}</text>"#,
            x(k),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">cumulative regret</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // at most ~1000 vertices per line
        let stride = (c.cumulative.len() / 1000).max(1);
        let points: Vec<String> = c
            .cumulative
            .iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0 || *k + 1 == c.cumulative.len())
            .map(|(k, v)| format!("{:.1},{:.1}", x((k + 1) as f64), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            c.label
        );
    }
    s.push_str("</svg>\n");
    s
}
