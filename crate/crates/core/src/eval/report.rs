use std::fmt::Write;

use super::{BinaryReport, ComputeReport, SegReport};

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

pub fn binary_table(r: &BinaryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>9} {:>7}", "class", "precision", "recall", "f1", "iou", "support");
    for c in [&r.pause, &r.gap] {
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>7}",
            c.state.as_str(),
            pct(c.precision),
            pct(c.recall),
            pct(c.f1),
            pct(c.iou),
            c.support
        );
    }
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>9} {:>7}", "macro", pct(r.precision), pct(r.recall), pct(r.f1), "", r.n);
    let _ = writeln!(out, "accuracy {}  excluded {}", pct(r.accuracy).trim(), r.excluded);
    out
}

pub fn seg_table(r: &SegReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "iou", "support");
    for c in &r.classes {
        let flag = if r.absent.contains(&c.state) { " (absent)" } else { "" };
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>8}{flag}",
            c.state.as_str(),
            pct(c.precision),
            pct(c.recall),
            pct(c.f1),
            pct(c.iou),
            c.support
        );
    }
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>9} {:>8}", "macro", "", "", pct(r.macro_f1), pct(r.macro_iou), r.frames);
    out
}

/// One row per mode: FLOPs split and segmentation quality.
pub fn compute_table(rows: &[(&ComputeReport, &SegReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<17} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}",
        "mode", "light GF", "heavy GF", "total GF", "GF/sample", "macro F1", "macro IoU"
    );
    for (c, s) in rows {
        let g = |x: u64| format!("{:.2}", x as f64 / 1e9);
        let _ = writeln!(
            out,
            "{:<17} {:>12} {:>12} {:>12} {:>12.3} {:>9} {:>9}",
            c.mode.as_str(),
            g(c.light_flops),
            g(c.heavy_flops),
            g(c.total_flops),
            c.flops_per_sample / 1e9,
            pct(s.macro_f1),
            pct(s.macro_iou)
        );
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of FLOPs per sample (log scale) next to macro IoU, one group per row.
pub fn flops_iou_svg(rows: &[(String, f64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 60.0;
    const BOTTOM: f64 = 300.0;
    const TOP: f64 = 40.0;
    let plot_h = BOTTOM - TOP;
    let max_log = rows.iter().map(|r| r.1.max(1.0).log10()).fold(1.0, f64::max).ceil();
    let group = (W - LEFT - 20.0) / rows.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">FLOPs per sample vs macro IoU</text>"#, W / 2.0);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{}" y2="{BOTTOM}" stroke="black"/>"#, W - 20.0);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#);
    for (i, (label, flops, iou)) in rows.iter().enumerate() {
        let x = LEFT + group * i as f64 + group * 0.15;
        let bar = group * 0.3;
        let fh = plot_h * flops.max(1.0).log10() / max_log;
        let ih = plot_h * iou.clamp(0.0, 1.0);
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bar:.1}" height="{fh:.1}" fill="#4c72b0"><title>{:.3e} FLOPs</title></rect>"##,
            BOTTOM - fh,
            flops
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{ih:.1}" fill="#dd8452"><title>IoU {:.4}</title></rect>"##,
            x + bar,
            BOTTOM - ih,
            iou
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x + bar, BOTTOM + 18.0, escape(label));
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="330" width="12" height="12" fill="#4c72b0"/><text x="{}" y="340">log10 FLOPs per sample (max {max_log})</text>"##,
        LEFT + 16.0
    );
    let _ = writeln!(svg, r##"<rect x="360" y="330" width="12" height="12" fill="#dd8452"/><text x="376" y="340">macro IoU</text>"##);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{binary_metrics, segmentation_metrics, TrackPair};
    use crate::labels::{FrameTrack, TurnState::*};

    #[test]
    fn tables_have_one_row_per_class() {
        let b = binary_metrics(&[Gap, Pause], &[Gap, Gap]).unwrap();
        assert_eq!(binary_table(&b).lines().count(), 5);
        let s = segmentation_metrics(&[TrackPair {
            sample_id: "a".into(),
            pred: FrameTrack::new(vec![SU, Gap]),
            truth: FrameTrack::new(vec![SU, SU]),
        }])
        .unwrap();
        let t = seg_table(&s);
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains("(absent)"));
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = flops_iou_svg(&[("a<b".into(), 1e9, 0.8), ("c".into(), 1e6, 0.5)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<rect").count(), 2 * 2 + 1 + 2);
    }
}
