//! Self-contained SVG renderings of the report tables.
//!
//! Everything is hand-built string assembly: fixed canvas, inline styling,
//! no scripts, no external assets. Numeric output goes through one
//! formatter so identical inputs yield identical bytes. Degenerate inputs
//! (no points, all-empty counts) render a labeled placeholder instead of
//! failing, so a partial bundle still produces a viewable report.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 42.0;
const BOTTOM: f64 = 52.0;

/// Escapes text for XML attribute and element content.
fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Short deterministic number label: four significant decimals, trailing
/// zeros trimmed.
fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return "?".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 10000.0 || a < 0.001 {
        format!("{v:.3e}")
    } else {
        let mut s = format!("{v:.4}");
        while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
            s.pop();
        }
        s
    };
    s
}

/// Pixel coordinate with sub-pixel stability.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Affine map from data ranges onto the plot rectangle (y flipped).
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    /// Widens zero-extent ranges so every finite input maps somewhere
    /// sensible.
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if lo < hi {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        (lo - pad, lo + pad)
    }
}

fn finite_min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for v in values.filter(|v| v.is_finite()) {
        range = Some(match range {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        });
    }
    range
}

fn open_svg(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
            "<text x=\"{tx}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\" ",
            "fill=\"#202020\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = esc(title),
    )
}

/// Frame border, five ticks per axis, and axis labels.
fn axes(f: &Frame, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#404040\"/>\n",
        px(LEFT),
        px(TOP),
        px(WIDTH - LEFT - RIGHT),
        px(HEIGHT - TOP - BOTTOM),
    ));
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let xp = f.sx(xv);
        let yp = f.sy(yv);
        s.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"#404040\"/>\n",
            x = px(xp),
            b = px(HEIGHT - BOTTOM),
            b2 = px(HEIGHT - BOTTOM + 5.0),
        ));
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" text-anchor=\"middle\" \
             fill=\"#404040\">{v}</text>\n",
            x = px(xp),
            y = px(HEIGHT - BOTTOM + 18.0),
            v = fmt_num(xv),
        ));
        s.push_str(&format!(
            "<line x1=\"{l2}\" y1=\"{y}\" x2=\"{l}\" y2=\"{y}\" stroke=\"#404040\"/>\n",
            l = px(LEFT),
            l2 = px(LEFT - 5.0),
            y = px(yp),
        ));
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" text-anchor=\"end\" \
             fill=\"#404040\">{v}</text>\n",
            x = px(LEFT - 8.0),
            y = px(yp + 4.0),
            v = fmt_num(yv),
        ));
    }
    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"middle\" \
         fill=\"#202020\">{v}</text>\n",
        x = px(LEFT + (WIDTH - LEFT - RIGHT) / 2.0),
        y = px(HEIGHT - 14.0),
        v = esc(xlabel),
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{y}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#202020\" \
         transform=\"rotate(-90 16 {yr})\">{v}</text>\n",
        y = px(TOP + (HEIGHT - TOP - BOTTOM) / 2.0),
        yr = px(TOP + (HEIGHT - TOP - BOTTOM) / 2.0),
        v = esc(ylabel),
    ));
    s
}

fn placeholder(title: &str) -> String {
    let mut s = open_svg(title);
    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"14\" text-anchor=\"middle\" \
         fill=\"#808080\">no data</text>\n",
        x = WIDTH / 2.0,
        y = HEIGHT / 2.0,
    ));
    s.push_str("</svg>\n");
    s
}

/// Monotone two-color ramp; `t` in [0, 1] maps dark blue to warm yellow,
/// every channel nondecreasing in `t`.
fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(28.0, 253.0), lerp(48.0, 231.0), lerp(108.0, 37.0))
}

/// Effect curve with a pointwise band and a zero reference line.
pub fn line_band(
    title: &str,
    xlabel: &str,
    x: &[f64],
    estimate: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> String {
    let n = x.len();
    if n == 0 || estimate.len() != n || lower.len() != n || upper.len() != n {
        return placeholder(title);
    }
    let xr = finite_min_max(x.iter().copied());
    let yr = finite_min_max(
        estimate.iter().chain(lower).chain(upper).copied().chain(std::iter::once(0.0)),
    );
    let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) else {
        return placeholder(title);
    };
    let f = Frame::new(x0, x1, y0, y1);

    let mut s = open_svg(title);
    let mut band = String::from("<polygon fill=\"#9db8e8\" fill-opacity=\"0.5\" points=\"");
    for i in 0..n {
        band.push_str(&format!("{},{} ", px(f.sx(x[i])), px(f.sy(upper[i]))));
    }
    for i in (0..n).rev() {
        band.push_str(&format!("{},{} ", px(f.sx(x[i])), px(f.sy(lower[i]))));
    }
    band.push_str("\"/>\n");
    s.push_str(&band);

    s.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{y}\" x2=\"{r}\" y2=\"{y}\" stroke=\"#909090\" \
         stroke-dasharray=\"4 3\"/>\n",
        l = px(LEFT),
        r = px(WIDTH - RIGHT),
        y = px(f.sy(0.0)),
    ));

    let mut line = String::from(
        "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.8\" points=\"",
    );
    for i in 0..n {
        line.push_str(&format!("{},{} ", px(f.sx(x[i])), px(f.sy(estimate[i]))));
    }
    line.push_str("\"/>\n");
    s.push_str(&line);

    s.push_str(&axes(&f, xlabel, "effect on yield"));
    s.push_str("</svg>\n");
    s
}

/// Filled-cell rendering of a matrix over two ascending axes. `values` is
/// row-major with rows indexed by `ys` and columns by `xs`. When
/// `zero_boundary` is set, cell borders where the sign flips between
/// neighbors are overdrawn, tracing the zero contour.
fn cell_grid(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    xs: &[f64],
    ys: &[f64],
    values: &[f64],
    zero_boundary: bool,
) -> String {
    if xs.is_empty() || ys.is_empty() || values.len() != xs.len() * ys.len() {
        return placeholder(title);
    }
    let Some((vmin, vmax)) = finite_min_max(values.iter().copied()) else {
        return placeholder(title);
    };
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let xr = finite_min_max(xs.iter().copied());
    let yr = finite_min_max(ys.iter().copied());
    let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) else {
        return placeholder(title);
    };
    let f = Frame::new(x0, x1, y0, y1);

    // Cell boundaries at midpoints between axis values; outer cells get the
    // neighboring half step.
    let bounds = |axis: &[f64], lo: f64, hi: f64| -> Vec<f64> {
        let m = axis.len();
        let mut b = Vec::with_capacity(m + 1);
        if m == 1 {
            return vec![lo, hi];
        }
        b.push(axis[0] - (axis[1] - axis[0]) / 2.0);
        for w in axis.windows(2) {
            b.push((w[0] + w[1]) / 2.0);
        }
        b.push(axis[m - 1] + (axis[m - 1] - axis[m - 2]) / 2.0);
        b
    };
    let xb = bounds(xs, f.x0, f.x1);
    let yb = bounds(ys, f.y0, f.y1);

    let mut s = open_svg(title);
    let at = |i: usize, j: usize| values[i * xs.len() + j];
    for i in 0..ys.len() {
        for j in 0..xs.len() {
            let v = at(i, j);
            let t = if v.is_finite() { (v - vmin) / span } else { 0.0 };
            let xl = f.sx(xb[j]);
            let xr = f.sx(xb[j + 1]);
            let yt = f.sy(yb[i + 1]);
            let yb_ = f.sy(yb[i]);
            s.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{c}\"/>\n",
                x = px(xl),
                y = px(yt),
                w = px(xr - xl),
                h = px(yb_ - yt),
                c = shade(t),
            ));
        }
    }

    if zero_boundary {
        let flips = |a: f64, b: f64| a.is_finite() && b.is_finite() && (a <= 0.0) != (b <= 0.0);
        for i in 0..ys.len() {
            for j in 0..xs.len() {
                if j + 1 < xs.len() && flips(at(i, j), at(i, j + 1)) {
                    s.push_str(&format!(
                        "<line x1=\"{x}\" y1=\"{y1}\" x2=\"{x}\" y2=\"{y2}\" \
                         stroke=\"#d43d3d\" stroke-width=\"2\"/>\n",
                        x = px(f.sx(xb[j + 1])),
                        y1 = px(f.sy(yb[i])),
                        y2 = px(f.sy(yb[i + 1])),
                    ));
                }
                if i + 1 < ys.len() && flips(at(i, j), at(i + 1, j)) {
                    s.push_str(&format!(
                        "<line x1=\"{x1}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" \
                         stroke=\"#d43d3d\" stroke-width=\"2\"/>\n",
                        x1 = px(f.sx(xb[j])),
                        x2 = px(f.sx(xb[j + 1])),
                        y = px(f.sy(yb[i + 1])),
                    ));
                }
            }
        }
    }

    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" fill=\"#404040\">low {lo}</text>\n",
        x = px(WIDTH - RIGHT - 170.0),
        y = px(TOP - 8.0),
        lo = fmt_num(vmin),
    ));
    s.push_str(&format!(
        "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{c}\"/>\n",
        x = px(WIDTH - RIGHT - 186.0),
        y = px(TOP - 18.0),
        c = shade(0.0),
    ));
    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" fill=\"#404040\">high {hi}</text>\n",
        x = px(WIDTH - RIGHT - 60.0),
        y = px(TOP - 8.0),
        hi = fmt_num(vmax),
    ));
    s.push_str(&format!(
        "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{c}\"/>\n",
        x = px(WIDTH - RIGHT - 76.0),
        y = px(TOP - 18.0),
        c = shade(1.0),
    ));

    s.push_str(&axes(&f, xlabel, ylabel));
    s.push_str("</svg>\n");
    s
}

/// Effect surface over two covariates.
pub fn heatmap(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    xs: &[f64],
    ys: &[f64],
    values: &[f64],
) -> String {
    cell_grid(title, xlabel, ylabel, xs, ys, values, false)
}

/// Worst-case lower bound over the confounding-strength grid, with the
/// sign-flip frontier traced.
pub fn contour(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    xs: &[f64],
    ys: &[f64],
    values: &[f64],
) -> String {
    cell_grid(title, xlabel, ylabel, xs, ys, values, true)
}

/// Per-arm histogram over shared bin edges: paired bars per bin.
pub fn grouped_histogram(
    title: &str,
    xlabel: &str,
    edges: &[f64],
    treated: &[usize],
    control: &[usize],
) -> String {
    let bins = treated.len();
    if bins == 0 || control.len() != bins || edges.len() != bins + 1 {
        return placeholder(title);
    }
    let top = treated.iter().chain(control).copied().max().unwrap_or(0);
    if top == 0 {
        return placeholder(title);
    }
    let f = Frame::new(edges[0], edges[bins], 0.0, top as f64);
    let mut s = open_svg(title);
    for b in 0..bins {
        let xl = f.sx(edges[b]);
        let xr = f.sx(edges[b + 1]);
        let w = (xr - xl).max(1.0);
        let half = w / 2.0;
        let base = f.sy(0.0);
        let yt = f.sy(treated[b] as f64);
        let yc = f.sy(control[b] as f64);
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#d98836\" \
             fill-opacity=\"0.85\"/>\n",
            x = px(xl),
            y = px(yt),
            w = px(half),
            h = px(base - yt),
        ));
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#3566b0\" \
             fill-opacity=\"0.85\"/>\n",
            x = px(xl + half),
            y = px(yc),
            w = px(half),
            h = px(base - yc),
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"#d98836\"/>\n\
         <text x=\"{tx}\" y=\"{ty}\" font-size=\"11\" fill=\"#404040\">reworked</text>\n",
        x = px(WIDTH - RIGHT - 190.0),
        y = px(TOP - 18.0),
        tx = px(WIDTH - RIGHT - 174.0),
        ty = px(TOP - 8.0),
    ));
    s.push_str(&format!(
        "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"#3566b0\"/>\n\
         <text x=\"{tx}\" y=\"{ty}\" font-size=\"11\" fill=\"#404040\">untouched</text>\n",
        x = px(WIDTH - RIGHT - 100.0),
        y = px(TOP - 18.0),
        tx = px(WIDTH - RIGHT - 84.0),
        ty = px(TOP - 8.0),
    ));
    s.push_str(&axes(&f, xlabel, "lots"));
    s.push_str("</svg>\n");
    s
}

/// Histogram of raw values with the two retained-interval endpoints marked,
/// showing what the trim step cut away.
pub fn annotated_histogram(
    title: &str,
    xlabel: &str,
    values: &[f64],
    bins: usize,
    cuts: (f64, f64),
) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return placeholder(title);
    }
    let Some((lo, hi)) = finite_min_max(finite.iter().copied()) else {
        return placeholder(title);
    };
    let (lo, hi) = widen(lo, hi);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &finite {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1);
    let f = Frame::new(lo, hi, 0.0, top as f64);

    let mut s = open_svg(title);
    for (b, &c) in counts.iter().enumerate() {
        let xl = f.sx(lo + b as f64 * width);
        let xr = f.sx(lo + (b + 1) as f64 * width);
        let yt = f.sy(c as f64);
        let base = f.sy(0.0);
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#7a9ccc\"/>\n",
            x = px(xl),
            y = px(yt),
            w = px((xr - xl).max(0.5)),
            h = px(base - yt),
        ));
    }
    for (cut, label) in [(cuts.0, "keep above"), (cuts.1, "keep below")] {
        if cut.is_finite() && cut >= f.x0 && cut <= f.x1 {
            let x = f.sx(cut);
            s.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" stroke=\"#c23b3b\" \
                 stroke-width=\"1.6\" stroke-dasharray=\"6 3\"/>\n",
                x = px(x),
                t = px(TOP),
                b = px(HEIGHT - BOTTOM),
            ));
            s.push_str(&format!(
                "<text x=\"{x}\" y=\"{y}\" font-size=\"10\" text-anchor=\"middle\" \
                 fill=\"#c23b3b\">{l} {v}</text>\n",
                x = px(x),
                y = px(TOP + 12.0),
                l = label,
                v = fmt_num(cut),
            ));
        }
    }
    s.push_str(&axes(&f, xlabel, "lots"));
    s.push_str("</svg>\n");
    s
}

/// Cheap structural well-formedness check: every opened element closes in
/// order. Plots are generated, never parsed, so this exists for sanity
/// checks in tests and report assembly.
pub fn well_formed(svg: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let bytes = svg.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let Some(end) = svg[i..].find('>').map(|e| i + e) else {
            return false;
        };
        let inner = &svg[i + 1..end];
        if let Some(name) = inner.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name.trim()) {
                return false;
            }
        } else if !inner.ends_with('/') && !inner.starts_with('?') && !inner.starts_with('!') {
            let name: String =
                inner.chars().take_while(|c| !c.is_whitespace() && *c != '>').collect();
            stack.push(name);
        }
        i = end + 1;
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_plot_kind_is_well_formed() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let est: Vec<f64> = x.iter().map(|v| (v * 3.0).sin() * 0.1).collect();
        let lo: Vec<f64> = est.iter().map(|v| v - 0.05).collect();
        let hi: Vec<f64> = est.iter().map(|v| v + 0.05).collect();
        let svgs = [
            line_band("curve", "z", &x, &est, &lo, &hi),
            heatmap("surface", "a", "b", &[0.0, 1.0], &[0.0, 1.0], &[1.0, 2.0, 3.0, 4.0]),
            contour("bounds", "a", "b", &[0.0, 1.0], &[0.0, 1.0], &[-1.0, 1.0, 2.0, 3.0]),
            grouped_histogram("overlap", "z", &[0.0, 0.5, 1.0], &[3, 1], &[2, 5]),
            annotated_histogram("trim", "z", &x, 8, (0.1, 0.9)),
            placeholder("nothing"),
        ];
        for svg in svgs {
            assert!(well_formed(&svg), "{svg}");
            assert!(svg.starts_with("<svg "));
            assert!(svg.trim_end().ends_with("</svg>"));
        }
    }

    #[test]
    fn constant_curve_with_zero_band_draws_coincident_lines() {
        let x = [0.0, 1.0, 2.0];
        let est = [0.25, 0.25, 0.25];
        let svg = line_band("flat", "z", &x, &est, &est, &est);
        // Band polygon top edge and the estimate polyline land on identical
        // pixel rows.
        let y = format!("{:.2}", Frame::new(0.0, 2.0, 0.0, 0.25).sy(0.25));
        assert!(svg.contains(&format!("0.00,{y}")) || svg.contains(&y), "{svg}");
        assert!(well_formed(&svg));
    }

    #[test]
    fn heatmap_color_ramp_is_monotone() {
        // 2x2 matrix with a strict ordering; fill shades must follow it.
        let svg = heatmap("m", "x", "y", &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0, 2.0, 3.0]);
        let fills: Vec<&str> = svg
            .match_indices("fill=\"#")
            .map(|(i, _)| &svg[i + 7..i + 13])
            .collect();
        // First four fills after the background/title are the cells in value
        // order 0,1,2,3; parse the red channel, which the ramp increases.
        let cells: Vec<u8> = fills
            .iter()
            .filter(|f| !f.starts_with("ffffff") && !f.starts_with("202020"))
            .take(4)
            .map(|f| u8::from_str_radix(&f[..2], 16).unwrap())
            .collect();
        assert_eq!(cells.len(), 4);
        assert!(cells.windows(2).all(|w| w[0] < w[1]), "{cells:?}");
    }

    #[test]
    fn empty_series_renders_a_placeholder() {
        let svg = line_band("empty", "z", &[], &[], &[], &[]);
        assert!(svg.contains("no data"));
        assert!(well_formed(&svg));
        let svg = grouped_histogram("empty", "z", &[0.0, 1.0], &[0], &[0]);
        assert!(svg.contains("no data"));
    }

    #[test]
    fn trim_histogram_marks_both_cut_points() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let svg = annotated_histogram("trim", "z", &values, 10, (0.05, 0.95));
        assert_eq!(svg.matches("stroke-dasharray=\"6 3\"").count(), 2);
        assert!(svg.contains("keep above 0.05"));
        assert!(svg.contains("keep below 0.95"));
    }

    #[test]
    fn escaping_keeps_markup_well_formed() {
        let svg = placeholder("a & b < c > \"d\"");
        assert!(well_formed(&svg));
        assert!(svg.contains("a &amp; b &lt; c &gt; &quot;d&quot;"));
    }
}
