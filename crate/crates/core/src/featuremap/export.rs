//! CSV matrix and SVG heatmap renderings of a value map.

use std::fmt::Write;

use super::ValueMap;
use crate::cell::{Bounds, CellKey};

fn axes(map: &ValueMap) -> Option<Bounds> {
    map.bounds.or_else(|| Bounds::from_keys(map.cells.keys()))
}

fn bin_label(bin: u32, width: f64) -> String {
    format!("{:.3}", bin as f64 * width)
}

/// Rows are curvature bins (ascending), columns turn counts; empty cells
/// are left blank.
pub fn to_csv_matrix(map: &ValueMap) -> String {
    let mut out = String::from("curvature\\turns");
    let Some(b) = axes(map) else {
        out.push('\n');
        return out;
    };
    for t in b.turns.0..=b.turns.1 {
        write!(out, ",{t}").unwrap();
    }
    out.push('\n');
    for bin in b.curvature_bin.0..=b.curvature_bin.1 {
        out.push_str(&bin_label(bin, map.curvature_bin_width));
        for t in b.turns.0..=b.turns.1 {
            out.push(',');
            if let Some(c) = map.cells.get(&CellKey::new(t, bin)) {
                write!(out, "{}", c.value).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Green (0) to red (1), as `#rrggbb`.
pub fn color_for(value: f64) -> String {
    let v = value.clamp(0.0, 1.0);
    let r = (255.0 * v).round() as u8;
    let g = (255.0 * (1.0 - v)).round() as u8;
    format!("#{r:02x}{g:02x}00")
}

const CELL: u32 = 36;
const MARGIN_LEFT: u32 = 60;
const MARGIN_TOP: u32 = 40;
const MARGIN_BOTTOM: u32 = 40;

/// Heatmap with the highest curvature bin on top. Empty cells are drawn as
/// outlines only.
pub fn to_svg(map: &ValueMap, title: &str) -> String {
    let b = axes(map).unwrap_or(Bounds::of(CellKey::new(0, 0)));
    let cols = b.turns.1 - b.turns.0 + 1;
    let rows = b.curvature_bin.1 - b.curvature_bin.0 + 1;
    let width = MARGIN_LEFT + cols * CELL + 20;
    let height = MARGIN_TOP + rows * CELL + MARGIN_BOTTOM;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{MARGIN_LEFT}" y="20" font-size="14">{}</text>"#,
        escape(title)
    )
    .unwrap();
    for (ri, bin) in (b.curvature_bin.0..=b.curvature_bin.1).rev().enumerate() {
        let y = MARGIN_TOP + ri as u32 * CELL;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 4,
            y + CELL / 2 + 3,
            bin_label(bin, map.curvature_bin_width)
        )
        .unwrap();
        for (ci, t) in (b.turns.0..=b.turns.1).enumerate() {
            let x = MARGIN_LEFT + ci as u32 * CELL;
            match map.cells.get(&CellKey::new(t, bin)) {
                Some(c) => {
                    writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#444"/>"##,
                        color_for(c.value)
                    )
                    .unwrap();
                    writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#,
                        x + CELL / 2,
                        y + CELL / 2 + 3,
                        c.value
                    )
                    .unwrap();
                }
                None => {
                    writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="none" stroke="#ccc"/>"##
                    )
                    .unwrap();
                }
            }
        }
    }
    let base = MARGIN_TOP + rows * CELL;
    for (ci, t) in (b.turns.0..=b.turns.1).enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            MARGIN_LEFT + ci as u32 * CELL + CELL / 2,
            base + 14
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">turns</text>"#,
        MARGIN_LEFT + cols * CELL / 2,
        base + 32
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
