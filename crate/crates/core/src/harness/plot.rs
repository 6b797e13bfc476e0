//! Minimal SVG line chart of median SROCC against the test set size T.

use std::fmt::Write;

use super::ablation::MedianRow;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 190.0, 30.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// One polyline per arm, T on a log axis. Returns the SVG document.
pub fn srocc_vs_t_svg(medians: &[MedianRow]) -> Result<String> {
    if medians.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for m in medians {
        let name = format!("{} {}", m.variant, m.toggles);
        match series.iter_mut().find(|s| s.0 == name) {
            Some(s) => s.1.push((m.t, m.srocc)),
            None => series.push((name, vec![(m.t, m.srocc)])),
        }
    }
    series.iter_mut().for_each(|s| s.1.sort_by_key(|p| p.0));

    let ts: Vec<f64> = medians.iter().map(|m| (m.t as f64).ln()).collect();
    let (tmin, tmax) = (ts.iter().cloned().fold(f64::INFINITY, f64::min), ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let ys: Vec<f64> = medians.iter().map(|m| m.srocc).collect();
    let ymin = (ys.iter().cloned().fold(f64::INFINITY, f64::min) * 10.0).floor() / 10.0;
    let ymax = ((ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * 10.0).ceil() / 10.0).max(ymin + 0.1);
    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (WIDTH - l - r, HEIGHT - t - b);
    let x = |lt: f64| if tmax > tmin { l + (lt - tmin) / (tmax - tmin) * pw } else { l + pw / 2.0 };
    let y = |v: f64| t + (ymax - v) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let mut tick_ts: Vec<usize> = medians.iter().map(|m| m.t).collect();
    tick_ts.sort_unstable();
    tick_ts.dedup();
    for tv in tick_ts {
        let px = x((tv as f64).ln());
        let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{t}" x2="{px:.1}" y2="{:.1}" stroke="#ddd"/>"##, t + ph);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{tv}</text>"#, t + ph + 16.0);
    }
    let steps = ((ymax - ymin) * 10.0).round() as usize;
    for i in 0..=steps {
        let v = ymin + i as f64 / 10.0;
        let py = y(v);
        let _ = writeln!(s, r##"<line x1="{l}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##, l + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, l - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">set size T</text>"#, l + pw / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">median SROCC</text>"#,
        t + ph / 2.0,
        t + ph / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(tv, v)| format!("{:.1},{:.1}", x((tv as f64).ln()), y(v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, path.join(" "));
        for &(tv, v) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, x((tv as f64).ln()), y(v));
        }
        let ly = t + 10.0 + 18.0 * i as f64;
        let lx = l + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{name}</text>"#, lx + 24.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_ref::PrVariant;

    #[test]
    fn one_polyline_per_arm() {
        let rows: Vec<MedianRow> = [(2, 0.5), (5, 0.6), (10, 0.7)]
            .iter()
            .flat_map(|&(t, v)| {
                ["pr1-ssim1-pyr1", "pr0-ssim0-pyr0"].map(|tg| MedianRow {
                    variant: PrVariant::LocationWeight,
                    toggles: tg.into(),
                    t,
                    runs: 3,
                    lcc: v,
                    srocc: v,
                })
            })
            .collect();
        let svg = srocc_vs_t_svg(&rows).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(srocc_vs_t_svg(&[]).is_err());
    }
}
