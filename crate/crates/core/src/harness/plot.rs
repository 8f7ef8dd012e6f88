//! Standalone SVG figures: matched recall heatmaps and 2-D PCA scatters.

use std::fmt::Write as _;

use crate::core_affect::EmotionId;
use crate::metrics::{PcaProjection, RecallHeatmap};

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White-to-blue ramp for a value in [0, 1].
fn shade(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 - 222.0 * v).round() as u8;
    let g = (255.0 - 174.0 * v).round() as u8;
    let b = (255.0 - 100.0 * v).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Recall heatmap: rows are reference labels, columns the labels their
/// matched signs stand for, plus an "other" column.
pub fn heatmap_svg(h: &RecallHeatmap, title: &str) -> String {
    let n = h.recall.len();
    let cell = 44.0;
    let (left, top) = (90.0, 60.0);
    let width = left + cell * (n as f64 + 1.0) + 120.0;
    let height = top + cell * n as f64 + 70.0;
    let mut s = header(width, height);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"20\" font-size=\"14\">{}</text>", escape(title));
    let name = |i: usize| EmotionId::from_index(i).map_or_else(|| i.to_string(), |e| e.name().to_string());
    for r in 0..n {
        let y = top + cell * r as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            y + cell / 2.0 + 4.0,
            name(r)
        );
        let row: Vec<f64> = h.recall[r].iter().copied().chain([h.other[r]]).collect();
        for (c, v) in row.iter().enumerate() {
            let x = left + cell * c as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#ccc\"/>",
                shade(*v)
            );
            let colour = if *v > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{colour}\">{:.0}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                100.0 * v
            );
        }
    }
    for c in 0..=n {
        let label = if c == n { "other".to_string() } else { name(c) };
        let x = left + cell * c as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-45 {x} {})\">{label}</text>",
            top - 6.0,
            top - 6.0
        );
    }
    // Legend: colour ramp from 0 % to 100 % recall.
    let lx = left + cell * (n as f64 + 1.0) + 30.0;
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let y = top + cell * n as f64 * (1.0 - v) - 10.0;
        let _ = writeln!(s, "<rect x=\"{lx}\" y=\"{y}\" width=\"18\" height=\"{:.1}\" fill=\"{}\"/>", cell * n as f64 / 10.0, shade(v));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">100%</text>", lx + 24.0, top + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">0%</text>", lx + 24.0, top + cell * n as f64);
    let _ = writeln!(s, "<text x=\"{lx}\" y=\"{}\">recall</text>", top + cell * n as f64 + 30.0);
    s.push_str("</svg>\n");
    s
}

/// Scatter of a 2-D projection, coloured by reference label.
pub fn pca_svg(p: &PcaProjection, labels: &[usize], title: &str) -> String {
    let (w, h) = (560.0, 440.0);
    let (left, top, plot_w, plot_h) = (50.0, 40.0, 360.0, 360.0);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"22\" font-size=\"14\">{}</text>", escape(title));
    let xs: Vec<f64> = p.coords.column(0).iter().copied().collect();
    let ys: Vec<f64> = if p.coords.ncols() > 1 {
        p.coords.column(1).iter().copied().collect()
    } else {
        vec![0.0; xs.len()]
    };
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let _ = writeln!(s, "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#888\"/>");
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        let px = left + (x - x0) / (x1 - x0) * plot_w;
        let py = top + plot_h - (y - y0) / (y1 - y0) * plot_h;
        let colour = PALETTE[labels.get(i).copied().unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"{colour}\" fill-opacity=\"0.7\"/>");
    }
    let ev = |i: usize| p.explained_variance_ratio.get(i).copied().unwrap_or(0.0) * 100.0;
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">PC1 ({:.1}%)</text>", left + plot_w / 2.0, top + plot_h + 28.0, ev(0));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">PC2 ({:.1}%)</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        ev(1)
    );
    if p.degenerate {
        let _ = writeln!(s, "<text x=\"{left}\" y=\"{}\" fill=\"#b00\">degenerate covariance</text>", h - 8.0);
    }
    let lx = left + plot_w + 24.0;
    for (i, e) in EmotionId::ALL.iter().enumerate() {
        let y = top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(s, "<circle cx=\"{lx}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/>", PALETTE[i]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 12.0, y + 4.0, e.name());
    }
    s.push_str("</svg>\n");
    s
}
