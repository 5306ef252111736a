//! Minimal SVG histogram emitter (fixed 30-bin convention) for parameter
//! marginals and overlay comparisons. Output is plain SVG text with stable
//! number formatting, so identical inputs yield identical bytes.

pub const BINS: usize = 30;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 50.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 45.0;

pub struct HistSeries<'a> {
    pub label: &'a str,
    /// CSS color, e.g. "#d4a017".
    pub color: &'a str,
    pub values: &'a [f64],
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Overlayed density histograms of one or more series on shared bins.
/// Heights are per-series shares, so series of different sizes compare
/// directly.
pub fn histogram_svg(series: &[HistSeries<'_>], title: &str, x_label: &str) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let bin_w = (hi - lo) / BINS as f64;

    // Per-series bin shares.
    let mut shares: Vec<Vec<f64>> = Vec::new();
    let mut max_share = 0.0f64;
    for s in series {
        let mut counts = vec![0usize; BINS];
        let mut n = 0usize;
        for &v in s.values {
            if !v.is_finite() {
                continue;
            }
            let b = (((v - lo) / bin_w) as usize).min(BINS - 1);
            counts[b] += 1;
            n += 1;
        }
        let share: Vec<f64> = counts
            .iter()
            .map(|&c| if n > 0 { c as f64 / n as f64 } else { 0.0 })
            .collect();
        for &v in &share {
            max_share = max_share.max(v);
        }
        shares.push(share);
    }
    if max_share <= 0.0 {
        max_share = 1.0;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x_of = |v: f64| MARGIN_L + (v - lo) / (hi - lo) * plot_w;
    let y_of = |share: f64| MARGIN_T + (1.0 - share / max_share) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt(WIDTH / 2.0),
        xml_escape(title)
    ));

    for (s, share) in series.iter().zip(shares.iter()) {
        for (b, &v) in share.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let x0 = x_of(lo + b as f64 * bin_w);
            let x1 = x_of(lo + (b + 1) as f64 * bin_w);
            let y = y_of(v);
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" \
                 fill-opacity=\"0.45\" stroke=\"{}\" stroke-width=\"0.5\"/>\n",
                fmt(x0),
                fmt(y),
                fmt(x1 - x0),
                fmt(MARGIN_T + plot_h - y),
                s.color,
                s.color
            ));
        }
    }

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h),
        fmt(MARGIN_L + plot_w),
        fmt(MARGIN_T + plot_h)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h)
    ));
    for (v, anchor) in [(lo, "start"), (0.5 * (lo + hi), "middle"), (hi, "end")] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"{anchor}\">{}</text>\n",
            fmt(x_of(v)),
            fmt(MARGIN_T + plot_h + 16.0),
            fmt(v)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 12.0),
        xml_escape(x_label)
    ));

    // Legend.
    let mut ly = MARGIN_T + 6.0;
    for s in series {
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\" \
             fill-opacity=\"0.45\"/>\n",
            fmt(MARGIN_L + plot_w - 150.0),
            fmt(ly),
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            fmt(MARGIN_L + plot_w - 132.0),
            fmt(ly + 10.0),
            xml_escape(s.label)
        ));
        ly += 18.0;
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
