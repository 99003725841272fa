//! Static line plots and histograms drawn as plain SVG.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn bounds<'a>(series: impl Iterator<Item = &'a [f64]>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &v in s.iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn frame(s: &mut String, title: &str, xlabel: &str, lo: f64, hi: f64) {
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="16" text-anchor="middle" font-size="13">{title}</text>
<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>
<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>
<text x="{}" y="{b}" text-anchor="end">{lo:.3}</text>
"#,
        W / 2.0,
        W / 2.0,
        H - 6.0,
        PAD - 4.0,
        PAD + 4.0,
        PAD - 4.0,
        b = H - PAD,
        r = W - PAD,
    );
}

fn legend(s: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let x = W - PAD - 110.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{l}</text>"#,
            x + 18.0,
            COLORS[i % COLORS.len()],
            x + 24.0,
            y + 4.0
        );
    }
}

/// Overlaid time series sharing one axis.
pub fn line_plot(title: &str, series: &[(&str, &[f64])]) -> String {
    let (lo, hi) = bounds(series.iter().map(|s| s.1));
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let mut s = String::new();
    frame(&mut s, title, "time step", lo, hi);
    let (pw, ph) = (W - 2.0 * PAD, H - 2.0 * PAD);
    for (i, (_, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, v)| {
                let x = PAD + pw * t as f64 / (n - 1) as f64;
                let y = H - PAD - ph * (v - lo) / (hi - lo);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, &series.iter().map(|s| s.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Normalized histogram counts of `x` over `bins` equal bins of `[lo, hi]`.
pub fn histogram(x: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    let mut n = 0.0;
    for &v in x.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        h[b] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        h.iter_mut().for_each(|c| *c /= n * width);
    }
    h
}

/// Step-outline histograms (densities) over a common range.
pub fn histogram_plot(title: &str, series: &[(&str, &[f64])], bins: usize) -> String {
    let (lo, hi) = bounds(series.iter().map(|s| s.1));
    let dens: Vec<Vec<f64>> = series.iter().map(|s| histogram(s.1, bins, lo, hi)).collect();
    let top = dens.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12);
    let mut s = String::new();
    frame(&mut s, title, "value", 0.0, top);
    let (pw, ph) = (W - 2.0 * PAD, H - 2.0 * PAD);
    for (i, d) in dens.iter().enumerate() {
        let mut pts = vec![format!("{PAD:.2},{:.2}", H - PAD)];
        for (b, v) in d.iter().enumerate() {
            let y = H - PAD - ph * v / top;
            let x0 = PAD + pw * b as f64 / bins as f64;
            let x1 = PAD + pw * (b + 1) as f64 / bins as f64;
            pts.push(format!("{x0:.2},{y:.2}"));
            pts.push(format!("{x1:.2},{y:.2}"));
        }
        pts.push(format!("{:.2},{:.2}", W - PAD, H - PAD));
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, &series.iter().map(|s| s.0).collect::<Vec<_>>());
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="start">{lo:.3}</text><text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, H - PAD + 14.0, W - PAD, H - PAD + 14.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_is_a_density() {
        let x: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let h = histogram(&x, 10, 0.0, 1.0);
        let area: f64 = h.iter().map(|v| v * 0.1).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plots_are_well_formed() {
        let a = [0.0, 1.0, 0.5, f64::NAN];
        let svg = line_plot("t", &[("data", &a), ("model", &[2.0, 2.0])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        let hs = histogram_plot("h", &[("data", &a)], 5);
        assert_eq!(hs.matches("<polyline").count(), 1);
        // constant input still gives a finite range
        assert!(!line_plot("c", &[("x", &[3.0, 3.0])]).contains("NaN"));
    }
}
