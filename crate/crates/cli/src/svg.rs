//! Minimal SVG output: heatmaps and line charts built from rect and path elements.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Rows are action dimensions, columns are bands; values in [0, 1].
pub fn heatmap(title: &str, rows: &[Vec<f64>], col_labels: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let n_rows = rows.len().max(1) as f64;
    let n_cols = col_labels.len().max(1) as f64;
    let cw = (W - 2.0 * MARGIN) / n_cols;
    let ch = (H - 2.0 * MARGIN) / n_rows;
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({shade},{shade},255)\"><title>{v:.4}</title></rect>",
                MARGIN + c as f64 * cw,
                MARGIN + r as f64 * ch,
                cw,
                ch
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">dim{r}</text>",
            MARGIN - 4.0,
            MARGIN + (r as f64 + 0.5) * ch
        );
    }
    for (c, label) in col_labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{}</text>",
            MARGIN + (c as f64 + 0.5) * cw,
            H - MARGIN + 14.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Named polylines over a shared x axis.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        out.push_str("</svg>\n");
        return out;
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let _ = writeln!(
        out,
        "<path d=\"M{MARGIN} {} L{} {} M{MARGIN} {MARGIN} L{MARGIN} {}\" stroke=\"black\" fill=\"none\"/>",
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{x0:.3}</text>\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{x1:.3}</text>\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{y0:.3}</text>\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{y1:.3}</text>",
        H - MARGIN + 14.0,
        W - MARGIN,
        H - MARGIN + 14.0,
        MARGIN - 4.0,
        H - MARGIN,
        MARGIN - 4.0,
        MARGIN + 8.0
    );
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let mut d = String::new();
        for (j, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if j == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(out, "<path d=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"/>", d.trim_end());
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{}</text>",
            W - MARGIN + 4.0,
            MARGIN + 12.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let s = heatmap("t", &[vec![1.0, 0.0], vec![0.5, 0.5]], &["a".into(), "b".into()]);
        assert_eq!(s.matches("<rect x=").count(), 4);
        assert!(s.contains("rgb(0,0,255)"));
        assert!(s.ends_with("</svg>\n"));
    }

    #[test]
    fn chart_escapes_and_handles_empty() {
        let s = line_chart("a<b", &[("x&y".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
        assert!(s.contains("<path d=\"M50.00"));
        assert!(line_chart("e", &[]).ends_with("</svg>\n"));
    }
}
