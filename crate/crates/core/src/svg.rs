//! SVG rendering of a heatmap over the feeder graph.

use std::fmt::Write;

use crate::feeder::Feeder;
use crate::placement::{Color, Heatmap};

const RADIUS: f64 = 8.0;
const MARGIN: f64 = 40.0;
const SPACING: f64 = 40.0;
const LEGEND_H: f64 = 60.0;

pub fn fill(c: Color) -> &'static str {
    match c {
        Color::Blue => "#1f77b4",
        Color::Yellow => "#f2c200",
        Color::Red => "#d62728",
        Color::Grey => "#9e9e9e",
    }
}

const SUBSTATION_FILL: &str = "#ffffff";
const UNEVALUATED_FILL: &str = "#e0e0e0";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Node coordinates in layout units. Uses the feeder positions when every
/// node has one; otherwise a layered tree layout (depth down, leaves spread
/// left to right in depth-first order, parents centred over children).
pub fn layout(f: &Feeder) -> Vec<(f64, f64)> {
    if f.nodes.iter().all(|n| f.positions.contains_key(&n.id)) {
        return f.nodes.iter().map(|n| f.positions[&n.id]).collect();
    }
    let order = f.preorder();
    let mut xy = vec![(0.0, 0.0); f.nodes.len()];
    let mut next_leaf = 0.0;
    for &i in &order {
        if f.children_of_index(i).is_empty() {
            xy[i].0 = next_leaf;
            next_leaf += 1.0;
        }
    }
    for &i in order.iter().rev() {
        let ch = f.children_of_index(i);
        if !ch.is_empty() {
            xy[i].0 = ch.iter().map(|&c| xy[c].0).sum::<f64>() / ch.len() as f64;
        }
        xy[i].1 = f.depth_of_index(i) as f64;
    }
    xy
}

/// Renders `h` on `f`: one circle per node filled by heatmap color, feeder
/// lines as edges, a square around the performance node and a legend.
pub fn export_heatmap_svg(h: &Heatmap, f: &Feeder, threshold: f64) -> String {
    let raw = layout(f);
    let (min_x, max_x) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (min_y, max_y) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let has_pos = f.nodes.iter().all(|n| f.positions.contains_key(&n.id));
    // Tree layouts are in unit steps; given coordinates are fitted to a box
    // that grows with the node count.
    let scale = if has_pos {
        let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
        SPACING * 4.0 * (f.nodes.len() as f64).sqrt() / span
    } else {
        SPACING
    };
    let pts: Vec<(f64, f64)> = raw
        .iter()
        .map(|p| (MARGIN + (p.0 - min_x) * scale, MARGIN + (p.1 - min_y) * scale))
        .collect();
    let width = MARGIN * 2.0 + (max_x - min_x) * scale;
    let height = MARGIN * 2.0 + (max_y - min_y) * scale + LEGEND_H;
    let width = width.max(360.0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        out,
        r#"<title>heatmap step {} context {}</title>"#,
        h.step,
        escape(&h.context)
    );
    let _ = writeln!(out, r##"<g stroke="#555" stroke-width="1.5">"##);
    for line in &f.lines {
        let a = pts[f.node_index(&line.from).expect("validated line")];
        let b = pts[f.node_index(&line.to).expect("validated line")];
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
            a.0, a.1, b.0, b.1
        );
    }
    let _ = writeln!(out, "</g>");

    for (i, node) in f.nodes.iter().enumerate() {
        let (x, y) = pts[i];
        let entry = h.entry(&node.id);
        let (color, label) = match entry {
            Some(e) => (
                fill(e.color),
                format!(
                    "{} fraction {:.3} ({}/{})",
                    node.id, e.fraction, e.n_stable, e.n_samples
                ),
            ),
            None if f.is_substation(&node.id) => (SUBSTATION_FILL, format!("{} substation", node.id)),
            None => (UNEVALUATED_FILL, node.id.clone()),
        };
        let _ = writeln!(
            out,
            r##"<circle class="node" data-node="{}" cx="{x:.2}" cy="{y:.2}" r="{RADIUS}" fill="{color}" stroke="#222"><title>{}</title></circle>"##,
            escape(&node.id),
            escape(&label)
        );
        if node.id == h.context {
            let s = RADIUS * 1.8;
            let _ = writeln!(
                out,
                r##"<rect class="performance" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000" stroke-width="2"/>"##,
                x - s,
                y - s,
                2.0 * s,
                2.0 * s
            );
        }
    }

    let ly = height - LEGEND_H + 20.0;
    let pct = (threshold * 100.0 * 1e6).round() / 1e6;
    let items = [
        (Color::Blue, format!("≥ {pct}% stable")),
        (Color::Yellow, format!("< {pct}% stable")),
        (Color::Red, "no stable gain".to_string()),
        (Color::Grey, "placed".to_string()),
    ];
    let _ = writeln!(out, r#"<g class="legend" font-family="sans-serif" font-size="11">"#);
    for (k, (c, text)) in items.iter().enumerate() {
        let lx = MARGIN + k as f64 * 85.0;
        let _ = writeln!(
            out,
            r##"<rect x="{lx:.0}" y="{:.0}" width="12" height="12" fill="{}" stroke="#222"/><text x="{:.0}" y="{:.0}">{}</text>"##,
            ly,
            fill(*c),
            lx + 16.0,
            ly + 10.0,
            escape(text)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::HeatmapEntry;

    const CHAIN: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
        "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n2","phases":"A"}],
        "lines":[{"from":"s0","to":"n1","phases":"A","r":0.05,"x":0.1},
                 {"from":"n1","to":"n2","phases":"A","r":0.03,"x":0.06}]}"#;

    fn entry(node: &str, color: Color) -> HeatmapEntry {
        HeatmapEntry {
            node: node.into(),
            fraction: 0.5,
            n_stable: 50,
            n_samples: 100,
            color,
        }
    }

    #[test]
    fn chain_svg() {
        let f = Feeder::parse(CHAIN).unwrap();
        let h = Heatmap {
            step: 1,
            context: "n1".into(),
            entries: vec![entry("n1", Color::Blue), entry("n2", Color::Grey)],
        };
        let svg = export_heatmap_svg(&h, &f, 0.07);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(r#"data-node="n1" cx"#));
        assert!(svg.contains(fill(Color::Blue)));
        assert!(svg.contains(r##"fill="#9e9e9e""##));
        assert_eq!(svg.matches(r#"class="performance""#).count(), 1);
        assert!(svg.contains("7%"));
        assert_eq!(svg, export_heatmap_svg(&h, &f, 0.07));
    }

    #[test]
    fn tree_layout_is_layered() {
        let f = Feeder::parse(CHAIN).unwrap();
        let xy = layout(&f);
        assert_eq!(xy, vec![(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)]);
    }
}
