//! Small hand-written SVG figures: matrix heatmaps, line plots and a polar
//! dendrogram with fingerprint bars.

use std::f64::consts::PI;
use std::fmt::Write;

use snerv_core::{MetricMatrix, MixtureTree, SpectralFingerprint};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];
const UNDEFINED_FILL: &str = "#d9d9d9";

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn blend(from: (u8, u8, u8), to: (u8, u8, u8), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    format!("#{:02x}{:02x}{:02x}", lerp(from.0, to.0, t), lerp(from.1, to.1, t), lerp(from.2, to.2, t))
}

/// Blue through white to red on `[-1, 1]`.
pub fn diverging(v: f64) -> String {
    const WHITE: (u8, u8, u8) = (255, 255, 255);
    if v < 0.0 {
        blend(WHITE, (33, 102, 172), -v)
    } else {
        blend(WHITE, (178, 24, 43), v)
    }
}

pub struct Panel<'a> {
    pub title: String,
    pub matrix: &'a MetricMatrix,
}

/// Panels laid out row by row, `columns` per row, sharing the axis labels.
/// Values are coloured on `[-1, 1]`; undefined entries are grey.
pub fn heatmap_grid(panels: &[Panel<'_>], labels: &[String], columns: usize) -> String {
    let k = labels.len();
    let cell = if k <= 9 { 28.0 } else { (252.0 / k as f64).max(6.0) };
    let margin = 48.0;
    let side = cell * k as f64;
    let pw = side + margin + 24.0;
    let ph = side + margin + 30.0;
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns);
    let legend = 60.0;
    let mut out = open(pw * columns as f64 + legend, ph * rows as f64);
    for (p, panel) in panels.iter().enumerate() {
        let x0 = (p % columns) as f64 * pw + margin;
        let y0 = (p / columns) as f64 * ph + margin;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>",
            x0 + side / 2.0,
            y0 - 30.0,
            escape(&panel.title)
        );
        for i in 0..k {
            for j in 0..k {
                let v = panel.matrix.get(i, j);
                let (fill, tip) = match v {
                    Some(v) => (diverging(v), format!("{} × {}: {v:.3}", labels[i], labels[j])),
                    None => (UNDEFINED_FILL.to_string(), format!("{} × {}: undefined", labels[i], labels[j])),
                };
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{fill}\" stroke=\"white\" stroke-width=\"0.5\"><title>{}</title></rect>",
                    x0 + j as f64 * cell,
                    y0 + i as f64 * cell,
                    escape(&tip)
                );
            }
        }
        if cell >= 12.0 {
            for (i, label) in labels.iter().enumerate() {
                let c = (i as f64 + 0.5) * cell;
                let _ = writeln!(
                    out,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
                    x0 - 4.0,
                    y0 + c,
                    escape(label)
                );
                let _ = writeln!(
                    out,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                    x0 + c,
                    y0 - 6.0,
                    escape(label)
                );
            }
        }
    }
    // Colour bar.
    let bx = pw * columns as f64 + 10.0;
    let steps = 20;
    let bar_h = 160.0;
    for s in 0..steps {
        let v = 1.0 - 2.0 * (s as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"14\" height=\"{:.1}\" fill=\"{}\"/>",
            margin + s as f64 * bar_h / steps as f64,
            bar_h / steps as f64 + 0.2,
            diverging(v)
        );
    }
    for (v, y) in [(1.0, margin), (0.0, margin + bar_h / 2.0), (-1.0, margin + bar_h)] {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{y:.1}\" dominant-baseline=\"middle\">{v}</text>",
            bx + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with a legend. With `log_y`, non-positive values are dropped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 140.0, 30.0, 45.0);
    let map_y = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, map_y(y)))
                .collect()
        })
        .collect();
    let all = || pts.iter().flatten();
    let (mut x0, mut x1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = open(w, h);
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>",
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        let ylabel = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            sx(fx),
            top + ph + 16.0,
            format_tick(fx)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{ylabel}</text>",
            left - 4.0,
            sy(fy)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        left + pw / 2.0,
        h - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(14 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
        }
        let ly = top + 10.0 + 16.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"/>",
            lx + 18.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" dominant-baseline=\"middle\">{}</text>",
            lx + 22.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn polar(cx: f64, cy: f64, r: f64, angle: f64) -> (f64, f64) {
    (cx + r * angle.cos(), cy - r * angle.sin())
}

/// Dendrogram on the upper half plane: root at the centre, leaves on the
/// outer semicircle in dendrogram order, and one bar per fingerprint
/// outside each leaf, with length proportional to the leaf's weight.
pub fn polar_dendrogram(tree: &MixtureTree, fingerprints: &[&SpectralFingerprint]) -> String {
    let n = tree.n_leaves();
    let (w, h) = (720.0, 460.0);
    let (cx, cy) = (w / 2.0, h - 40.0);
    let radius = 250.0;
    let bar_len = 110.0;
    let order = tree.leaf_order();
    let mut angle = vec![0.0; n + tree.merges.len()];
    for (pos, &leaf) in order.iter().enumerate() {
        angle[leaf] = PI * (1.0 - (pos as f64 + 0.5) / n as f64);
    }
    let max_height = tree.merges.iter().map(|m| m.height).fold(0.0, f64::max);
    let node_radius = |node: usize| -> f64 {
        if node < n || max_height <= 0.0 {
            radius
        } else {
            // The root sits on a small circle so its arc stays visible.
            radius * (1.0 - 0.9 * tree.merges[node - n].height / max_height)
        }
    };
    let mut out = open(w, h);
    let _ = writeln!(out, "<g fill=\"none\" stroke=\"#333\" stroke-width=\"0.8\">");
    for (i, m) in tree.merges.iter().enumerate() {
        let node = n + i;
        angle[node] = 0.5 * (angle[m.left] + angle[m.right]);
        let r = node_radius(node);
        for child in [m.left, m.right] {
            let (x0, y0) = polar(cx, cy, node_radius(child), angle[child]);
            let (x1, y1) = polar(cx, cy, r, angle[child]);
            let _ = writeln!(out, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\"/>");
        }
        let (a, b) = (angle[m.left].max(angle[m.right]), angle[m.left].min(angle[m.right]));
        let (x0, y0) = polar(cx, cy, r, a);
        let (x1, y1) = polar(cx, cy, r, b);
        let _ = writeln!(out, "<path d=\"M {x0:.2} {y0:.2} A {r:.2} {r:.2} 0 0 1 {x1:.2} {y1:.2}\"/>");
    }
    out.push_str("</g>\n");

    let nf = fingerprints.len().max(1) as f64;
    let wedge = PI / n as f64;
    let peak = fingerprints
        .iter()
        .flat_map(|f| f.weights.iter().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for (f, fp) in fingerprints.iter().enumerate() {
        let colour = PALETTE[f % PALETTE.len()];
        let _ = writeln!(out, "<g stroke=\"{colour}\" stroke-linecap=\"butt\">");
        let stroke = (wedge * radius / nf * 0.8).clamp(0.5, 8.0);
        for (&pattern, &weight) in fp.patterns.iter().zip(&fp.weights) {
            if weight <= 0.0 {
                continue;
            }
            let Some(&leaf) = tree.leaf_index().get(&pattern) else { continue };
            let a = angle[leaf] + wedge * ((f as f64 + 0.5) / nf - 0.5) * 0.8;
            let (x0, y0) = polar(cx, cy, radius + 6.0, a);
            let (x1, y1) = polar(cx, cy, radius + 6.0 + bar_len * weight / peak, a);
            let _ = writeln!(
                out,
                "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke-width=\"{stroke:.2}\"><title>{} pattern {pattern:#b}: {weight:.4}</title></line>",
                escape(&fp.label)
            );
        }
        out.push_str("</g>\n");
        let _ = writeln!(
            out,
            "<rect x=\"12\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{colour}\"/><text x=\"30\" y=\"{:.1}\" dominant-baseline=\"middle\">{}</text>",
            14.0 + 18.0 * f as f64,
            20.0 + 18.0 * f as f64,
            escape(&fp.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use snerv_core::clustering::{build_tree, MixtureClass, WardWeighting};

    #[test]
    fn colours_at_the_ends() {
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(1.0), "#b2182b");
        assert_eq!(diverging(-1.0), "#2166ac");
        assert_eq!(diverging(5.0), "#b2182b");
    }

    #[test]
    fn heatmap_marks_undefined_cells() {
        let m = MetricMatrix::from_values(Array2::from_shape_vec((2, 2), vec![Some(1.0), None, None, Some(-0.5)]).unwrap())
            .unwrap();
        let svg = heatmap_grid(
            &[Panel {
                title: "a<b".into(),
                matrix: &m,
            }],
            &["c0".into(), "c1".into()],
            1,
        );
        assert_eq!(svg.matches(UNDEFINED_FILL).count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn line_plot_handles_degenerate_input() {
        let svg = line_plot("t", "x", "y", &[Series { name: "s".into(), points: vec![(1.0, 0.0)] }], true);
        assert!(svg.ends_with("</svg>\n"));
        let svg = line_plot("t", "x", "y", &[Series { name: "s".into(), points: vec![(0.0, 2.0), (1.0, 1.0)] }], false);
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn dendrogram_draws_every_merge() {
        let class = |pattern: u64, count: usize, rep: [f64; 2]| MixtureClass {
            pattern,
            pixel_ids: (0..count).collect(),
            count,
            representative: array![rep[0], rep[1]],
        };
        let tree = build_tree(
            vec![class(1, 2, [1.0, 0.0]), class(2, 1, [0.0, 1.0]), class(3, 3, [0.7, 0.7])],
            WardWeighting::PixelCount,
        )
        .unwrap();
        let fp = SpectralFingerprint {
            label: "roi".into(),
            patterns: vec![1, 3, 2],
            weights: vec![0.5, 0.5, 0.0],
            unexplained: 0.0,
            n_pixels: 2,
        };
        let svg = polar_dendrogram(&tree, &[&fp]);
        assert_eq!(svg.matches("<path").count(), 2);
        assert_eq!(svg.matches("<title>roi").count(), 2);
    }
}
