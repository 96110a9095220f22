//! Minimal hand-written SVG charts.

use std::fmt::Write;

use paskit_core::eval::Quartiles;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x1 - self.x0).max(f64::MIN_POSITIVE);
        MARGIN + (x - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y1 - self.y0).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN - (y - self.y0) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(svg: &mut String, title: &str, x_label: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right) = (frame.px(frame.x0), frame.px(frame.x1));
    let (bottom, top) = (frame.py(frame.y0), frame.py(frame.y1));
    let _ = writeln!(
        svg,
        r#"<polyline points="{left:.2},{top:.2} {left:.2},{bottom:.2} {right:.2},{bottom:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (value, anchor_x, anchor_y, anchor) in [
        (frame.x0, left, bottom + 14.0, "middle"),
        (frame.x1, right, bottom + 14.0, "middle"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="{anchor}">{}</text>"#,
            tick(value)
        );
    }
    for value in [frame.y0, frame.y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 4.0,
            frame.py(value) + 4.0,
            tick(value)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(svg: &mut String, frame: &Frame, points: &[(f64, f64)], color: &str, dashed: bool) {
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    let dash = if dashed {
        r#" stroke-dasharray="4 3""#
    } else {
        ""
    };
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        coords.join(" ")
    );
}

fn legend(svg: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let x = WIDTH - MARGIN - 110.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
            x + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 20.0,
            y + 4.0,
            escape(name)
        );
    }
}

/// Curves on the unit square, one colored polyline per series.
pub fn curve_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut svg = String::new();
    open(&mut svg, title, x_label, y_label, &frame);
    for (i, (_, points)) in series.iter().enumerate() {
        polyline(&mut svg, &frame, points, PALETTE[i % PALETTE.len()], false);
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    svg
}

const BINS: usize = 30;

fn histogram(values: &[f64], lo: f64, width: f64) -> Vec<f64> {
    let mut counts = vec![0.0; BINS];
    for &v in values {
        let bin = (((v - lo) / width) as usize).min(BINS - 1);
        counts[bin] += 1.0;
    }
    let total = values.len().max(1) as f64;
    counts.iter().map(|c| c / total).collect()
}

fn step_points(freq: &[f64], lo: f64, width: f64) -> Vec<(f64, f64)> {
    let mut points = vec![(lo, 0.0)];
    for (i, &f) in freq.iter().enumerate() {
        let left = lo + i as f64 * width;
        points.push((left, f));
        points.push((left + width, f));
    }
    points.push((lo + BINS as f64 * width, 0.0));
    points
}

/// Overlaid score histograms with dashed lines at each group's quartiles.
pub fn distribution_chart(
    title: &str,
    real: &[f64],
    hallucinated: &[f64],
    real_q: &Quartiles,
    hallucinated_q: &Quartiles,
) -> String {
    let all = real.iter().chain(hallucinated);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / BINS as f64;
    let real_freq = histogram(real, lo, width);
    let hall_freq = histogram(hallucinated, lo, width);
    let top = real_freq
        .iter()
        .chain(&hall_freq)
        .copied()
        .fold(0.0, f64::max)
        .max(1e-9);
    let frame = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: top * 1.1,
    };
    let mut svg = String::new();
    open(&mut svg, title, "score", "fraction of mentions", &frame);
    let groups = [
        (&real_freq, real_q, PALETTE[0]),
        (&hall_freq, hallucinated_q, PALETTE[1]),
    ];
    for (freq, q, color) in groups {
        polyline(
            &mut svg,
            &frame,
            &step_points(freq, lo, width),
            color,
            false,
        );
        for x in [q.q1, q.median, q.q3] {
            polyline(&mut svg, &frame, &[(x, 0.0), (x, frame.y1)], color, true);
        }
    }
    legend(&mut svg, &["real", "hallucinated"]);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_chart_has_one_polyline_per_series_plus_axes() {
        let svg = curve_chart(
            "ROC",
            "false positive rate",
            "true positive rate",
            &[
                ("pas".into(), vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]),
                ("kl".into(), vec![(0.0, 0.0), (1.0, 1.0)]),
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains(">pas<") && svg.contains(">kl<"));
    }

    #[test]
    fn distribution_chart_draws_dashed_quartiles() {
        let q = |a, b, c| Quartiles {
            q1: a,
            median: b,
            q3: c,
        };
        let svg = distribution_chart(
            "pas & co",
            &[0.1, 0.2, 0.3],
            &[0.5, 0.6],
            &q(0.15, 0.2, 0.25),
            &q(0.5, 0.55, 0.6),
        );
        assert_eq!(svg.matches("stroke-dasharray").count(), 6);
        assert!(svg.contains("pas &amp; co"));
    }

    #[test]
    fn constant_scores_do_not_break_the_frame() {
        let q = Quartiles {
            q1: 1.0,
            median: 1.0,
            q3: 1.0,
        };
        let svg = distribution_chart("flat", &[1.0, 1.0], &[1.0], &q, &q);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
