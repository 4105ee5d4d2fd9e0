//! Plain SVG figures: heatmaps, a labelled scatter and bar charts.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::DMatrix;
use repspace_core::geometry::EmbeddingCoords;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(w: f64, h: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"##
    );
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"##,
        w / 2.0,
        esc(title)
    );
    s
}

/// Diverging blue-white-red for signed data, white-to-red otherwise.
fn color(v: f64, lo: f64, hi: f64) -> String {
    if !v.is_finite() {
        return "#cccccc".into();
    }
    let (r, g, b) = if lo < 0.0 && hi > 0.0 {
        let m = lo.abs().max(hi);
        let t = (v / m).clamp(-1.0, 1.0);
        if t >= 0.0 {
            (1.0, 1.0 - t, 1.0 - t)
        } else {
            (1.0 + t, 1.0 + t, 1.0)
        }
    } else {
        let t = if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (1.0, 1.0 - t, 1.0 - 0.8 * t)
    };
    format!(
        "rgb({},{},{})",
        (r * 255.0) as u8,
        (g * 255.0) as u8,
        (b * 255.0) as u8
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

pub fn heatmap(
    title: &str,
    rows: &[String],
    cols: &[String],
    m: &DMatrix<f64>,
    row_axis: &str,
    col_axis: &str,
) -> String {
    let cell = (480.0 / rows.len().max(cols.len()).max(1) as f64).clamp(6.0, 40.0);
    let label_w = 12.0 + 7.0 * rows.iter().chain(cols).map(|s| s.len()).max().unwrap_or(1) as f64;
    let (x0, y0) = (label_w + 30.0, label_w + 40.0);
    let w = x0 + cell * cols.len() as f64 + 110.0;
    let h = y0 + cell * rows.len() as f64 + 30.0;
    let (lo, hi) = range(m.iter().copied());
    let mut s = open(w, h, title);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}"><title>{} / {}: {}</title></rect>"##,
                x0 + j as f64 * cell,
                y0 + i as f64 * cell,
                color(m[(i, j)], lo, hi),
                esc(&rows[i]),
                esc(&cols[j]),
                m[(i, j)]
            );
        }
    }
    let fs = (cell * 0.7).clamp(6.0, 12.0);
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="{fs:.1}" text-anchor="end" dominant-baseline="middle">{}</text>"##,
            x0 - 4.0,
            y0 + (i as f64 + 0.5) * cell,
            esc(r)
        );
    }
    for (j, c) in cols.iter().enumerate() {
        let (x, y) = (x0 + (j as f64 + 0.5) * cell, y0 - 4.0);
        let _ = writeln!(
            s,
            r##"<text x="{x:.1}" y="{y:.1}" font-size="{fs:.1}" transform="rotate(-60 {x:.1} {y:.1})">{}</text>"##,
            esc(c)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="12" y="{:.1}" font-size="12" transform="rotate(-90 12 {:.1})" text-anchor="middle">{}</text>"##,
        y0 + cell * rows.len() as f64 / 2.0,
        y0 + cell * rows.len() as f64 / 2.0,
        esc(row_axis)
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="40" font-size="12" text-anchor="middle">{}</text>"##,
        x0 + cell * cols.len() as f64 / 2.0,
        esc(col_axis)
    );
    // colour bar
    let bx = x0 + cell * cols.len() as f64 + 20.0;
    let bh = (cell * rows.len() as f64).max(60.0);
    for k in 0..50 {
        let v = hi - (hi - lo) * k as f64 / 49.0;
        let _ = writeln!(
            s,
            r##"<rect x="{bx:.1}" y="{:.1}" width="14" height="{:.2}" fill="{}"/>"##,
            y0 + bh * k as f64 / 50.0,
            bh / 50.0 + 0.5,
            color(v, lo, hi)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="10">{hi:.3}</text>"##,
        bx + 18.0,
        y0 + 8.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="10">{lo:.3}</text>"##,
        bx + 18.0,
        y0 + bh
    );
    s.push_str("</svg>\n");
    s
}

/// First two coordinates, coloured by model group, with each group's layers
/// joined in layer order.
pub fn scatter(
    title: &str,
    coords: &EmbeddingCoords,
    groups: &[String],
    layers: &[Option<u32>],
) -> String {
    let n = coords.ids.len();
    let xs: Vec<f64> = (0..n).map(|i| coords.coords[(i, 0)]).collect();
    let ys: Vec<f64> = (0..n)
        .map(|i| {
            if coords.coords.ncols() > 1 {
                coords.coords[(i, 1)]
            } else {
                0.0
            }
        })
        .collect();
    let (w, h, pad) = (640.0, 520.0, 60.0);
    let (xlo, xhi) = range(xs.iter().copied());
    let (ylo, yhi) = range(ys.iter().copied());
    let span = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let ((xlo, xhi), (ylo, yhi)) = (span(xlo, xhi), span(ylo, yhi));
    let plot_w = w - 2.0 * pad - 120.0;
    let px = |x: f64| pad + (x - xlo) / (xhi - xlo) * plot_w;
    let py = |y: f64| h - pad - (y - ylo) / (yhi - ylo) * (h - 2.0 * pad);

    let mut group_color: BTreeMap<&str, &str> = BTreeMap::new();
    for g in groups {
        let next = PALETTE[group_color.len() % PALETTE.len()];
        group_color.entry(g.as_str()).or_insert(next);
    }
    let mut s = open(w, h, title);
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{plot_w}" height="{}" fill="none" stroke="#999"/>"##,
        h - 2.0 * pad
    );
    if xlo < 0.0 && xhi > 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{pad}" x2="{0:.1}" y2="{1}" stroke="#ddd"/>"##,
            px(0.0),
            h - pad
        );
    }
    if ylo < 0.0 && yhi > 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{pad}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#ddd"/>"##,
            py(0.0),
            pad + plot_w
        );
    }
    for (g, c) in &group_color {
        let mut members: Vec<(u32, usize)> = (0..n)
            .filter(|&i| groups[i] == *g)
            .filter_map(|i| layers[i].map(|l| (l, i)))
            .collect();
        if members.len() < 2 {
            continue;
        }
        members.sort();
        let pts: Vec<String> = members
            .iter()
            .map(|&(_, i)| format!("{:.1},{:.1}", px(xs[i]), py(ys[i])))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.2" opacity="0.6"/>"##,
            pts.join(" ")
        );
    }
    for i in 0..n {
        let c = group_color[groups[i].as_str()];
        let _ = writeln!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="5" fill="{c}"><title>{}</title></circle>"##,
            px(xs[i]),
            py(ys[i]),
            esc(&coords.ids[i])
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"##,
            px(xs[i]) + 7.0,
            py(ys[i]) - 5.0,
            esc(&coords.ids[i])
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">MDS dim 1</text>"##,
        pad + plot_w / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{0:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {0:.1})">MDS dim 2</text>"##,
        h / 2.0
    );
    for (k, (g, c)) in group_color.iter().enumerate() {
        let y = pad + 10.0 + 18.0 * k as f64;
        let x = pad + plot_w + 15.0;
        let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{c}"/>"##);
        let label = if g.is_empty() { "(no group)" } else { g };
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" dominant-baseline="middle">{}</text>"##,
            x + 10.0,
            y,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn bars(
    title: &str,
    labels: &[String],
    values: &[f64],
    y_axis: &str,
    y_max: Option<f64>,
) -> String {
    let n = labels.len().max(1);
    let bw = (520.0 / n as f64).clamp(6.0, 40.0);
    let (pad, bottom) = (60.0, 90.0);
    let w = pad * 2.0 + bw * n as f64;
    let h = 420.0;
    let top = y_max
        .unwrap_or_else(|| {
            values
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .fold(0.0, f64::max)
        })
        .max(f64::MIN_POSITIVE);
    let plot_h = h - pad - bottom;
    let mut s = open(w.max(300.0), h, title);
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{:.1}" stroke="#333"/>"##,
        pad + plot_h
    );
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#333"/>"##,
        pad + plot_h,
        pad + bw * n as f64
    );
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let bh = (v.max(0.0) / top).min(1.0) * plot_h;
        let x = pad + i as f64 * bw;
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"><title>{}: {v}</title></rect>"##,
            x + 1.0,
            pad + plot_h - bh,
            (bw - 2.0).max(1.0),
            PALETTE[0],
            esc(l)
        );
        let (lx, ly) = (x + bw / 2.0, pad + plot_h + 10.0);
        let _ = writeln!(
            s,
            r##"<text x="{lx:.1}" y="{ly:.1}" font-size="10" transform="rotate(60 {lx:.1} {ly:.1})">{}</text>"##,
            esc(l)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{top}</text>"##,
        pad - 4.0,
        pad + 4.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">0</text>"##,
        pad - 4.0,
        pad + plot_h
    );
    let _ = writeln!(
        s,
        r##"<text x="16" y="{0:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"##,
        pad + plot_h / 2.0,
        esc(y_axis)
    );
    s.push_str("</svg>\n");
    s
}
