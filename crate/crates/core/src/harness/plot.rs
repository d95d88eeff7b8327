use std::fmt::Write as _;
use std::path::Path;

use super::{AggregatePoint, Axis};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Label of the series a point belongs to: every coordinate but `axis`.
fn series_label(p: &AggregatePoint, axis: Axis) -> String {
    let mut parts = vec![format!("{}/{}", p.algo, p.oracle)];
    for (a, value) in [
        (Axis::N, p.n as f64),
        (Axis::D, p.d as f64),
        (Axis::Eps, p.eps),
        (Axis::K, p.k),
    ] {
        if a != axis {
            parts.push(format!("{}={}", a.name(), value));
        }
    }
    parts.join(" ")
}

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Writes a log-log SVG of mean excess risk against `axis` with one
/// polyline per series and `±1` standard-error bars. Points with a
/// nonpositive mean cannot be placed on a log scale and are skipped.
pub fn emit_plot(points: &[AggregatePoint], axis: Axis, title: &str, path: &Path) -> Result<()> {
    let svg = render(points, axis, title)?;
    std::fs::write(path, svg)?;
    Ok(())
}

fn render(points: &[AggregatePoint], axis: Axis, title: &str) -> Result<String> {
    let shown: Vec<&AggregatePoint> = points.iter().filter(|p| p.mean > 0.0 && axis.value(p) > 0.0).collect();
    if shown.is_empty() {
        return Err(Error::Empty("plot records"));
    }
    let mut series: Vec<(String, Vec<&AggregatePoint>)> = Vec::new();
    for p in &shown {
        let label = series_label(p, axis);
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, members)) => members.push(p),
            None => series.push((label, vec![p])),
        }
    }
    let (x_lo, x_hi) = log_range(shown.iter().map(|p| axis.value(p)));
    let (y_lo, y_hi) = log_range(shown.iter().flat_map(|p| {
        let lower = p.mean - p.stderr;
        [if lower > 0.0 { lower } else { p.mean }, p.mean + p.stderr]
    }));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x.log10() - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y.max(10f64.powf(y_lo)).log10()) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    // Writing into a String cannot fail.
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for e in x_lo as i32..=x_hi as i32 {
        let x = sx(10f64.powi(e));
        let _ = writeln!(
            w,
            r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            TOP + plot_h
        );
        let _ = writeln!(
            w,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{e}</text>"#,
            TOP + plot_h + 15.0
        );
    }
    for e in y_lo as i32..=y_hi as i32 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"#,
            LEFT - 5.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        axis.name()
    );
    let _ = writeln!(
        w,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">excess risk</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, (label, members)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = members
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(axis.value(p)), sy(p.mean)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}"/>"#,
            coords.join(" ")
        );
        for p in members {
            let x = sx(axis.value(p));
            let lower = p.mean - p.stderr;
            let (y_top, y_bottom) = (sy(p.mean + p.stderr), sy(if lower > 0.0 { lower } else { p.mean }));
            let _ = writeln!(
                w,
                r#"<line x1="{x:.1}" y1="{y_top:.1}" x2="{x:.1}" y2="{y_bottom:.1}" stroke="{color}"/>"#
            );
            let _ = writeln!(
                w,
                r#"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sy(p.mean)
            );
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 10.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}"/>"#,
            lx + 15.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" font-size="9">{}</text>"#,
            lx + 20.0,
            ly + 3.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize, eps: f64, mean: f64) -> AggregatePoint {
        AggregatePoint {
            problem: "linear".into(),
            algo: "localized".into(),
            oracle: "central-l2".into(),
            n,
            d: 4,
            eps,
            delta: None,
            k: 2.0,
            trials: 10,
            mean,
            stderr: mean / 10.0,
        }
    }

    #[test]
    fn one_series_one_polyline_and_stable_bytes() {
        let pts = [point(256, 1.0, 0.5), point(512, 1.0, 0.3), point(1024, 1.0, 0.2)];
        let svg = render(&pts, Axis::N, "linear <test>").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(">n</text>") && svg.contains("excess risk"));
        assert!(svg.contains("linear &lt;test&gt;"));
        assert_eq!(svg, render(&pts, Axis::N, "linear <test>").unwrap());
        let two = [point(256, 1.0, 0.5), point(256, 2.0, 0.3)];
        assert_eq!(render(&two, Axis::N, "").unwrap().matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        assert!(emit_plot(&[], Axis::N, "t", &path).is_err());
        assert!(!path.exists());
        emit_plot(&[point(8, 1.0, 0.1)], Axis::N, "t", &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("<svg"));
        assert!(emit_plot(
            &[point(8, 1.0, 0.1)],
            Axis::N,
            "t",
            &dir.path().join("missing/plot.svg")
        )
        .is_err());
    }
}
