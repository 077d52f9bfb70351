//! SVG line charts of metrics files: mean across runs with a ±1 standard deviation band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deeptemper::metrics::{read_metrics, MetricsRow};

/// One point of a summarized curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub iteration: u64,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub sd: f64,
}

/// Per-iteration mean and standard deviation of `(iteration, value)` series.
pub fn bands(series: &[Vec<(u64, f64)>]) -> Vec<BandPoint> {
    let mut by_iter: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for s in series {
        for &(it, x) in s {
            by_iter.entry(it).or_default().push(x);
        }
    }
    by_iter
        .into_iter()
        .map(|(iteration, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            BandPoint {
                iteration,
                mean,
                sd: var.sqrt(),
            }
        })
        .collect()
}

/// Collects `metrics.csv` files under directories; plain files are taken as given.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        for entry in walkdir::WalkDir::new(p).sort_by_file_name() {
            let entry = entry.with_context(|| format!("reading {}", p.display()))?;
            if entry.file_type().is_file() && entry.file_name() == "metrics.csv" {
                out.push(entry.into_path());
            }
        }
    }
    if out.is_empty() {
        bail!("no metrics files to plot");
    }
    Ok(out)
}

type Getter = Box<dyn Fn(&MetricsRow) -> Option<f64>>;

fn metrics(n_pairs: usize) -> Vec<(String, Getter)> {
    let mut m: Vec<(String, Getter)> = vec![
        ("test_ll_nats".into(), Box::new(|r: &MetricsRow| r.test_ll_nats)),
        ("dbn_bound_nats".into(), Box::new(|r: &MetricsRow| r.dbn_bound_nats)),
    ];
    for k in 0..n_pairs {
        m.push((
            format!("swap_rate_pair_{}", k + 1),
            Box::new(move |r: &MetricsRow| r.swap_rates[k]),
        ));
    }
    m
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders one chart with a curve per layer.
pub fn render_svg(title: &str, curves: &[(usize, Vec<BandPoint>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
    let points = curves.iter().flat_map(|(_, c)| c.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.iteration as f64);
        x1 = x1.max(p.iteration as f64);
        y0 = y0.min(p.mean - p.sd);
        y1 = y1.max(p.mean + p.sd);
    }
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    );
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{x}</text>"#,
            sx(x),
            h - bottom + 16.0
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">iteration</text>"#,
        (left + w - right) / 2.0,
        h - 12.0
    );
    for (k, (layer, curve)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if curve.len() == 1 {
            let p = curve[0];
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(p.iteration as f64),
                sy(p.mean)
            );
        } else {
            let upper = curve.iter().map(|p| format!("{:.2},{:.2}", sx(p.iteration as f64), sy(p.mean + p.sd)));
            let lower = curve.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.iteration as f64), sy(p.mean - p.sd)));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
            let line: Vec<String> = curve
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.iteration as f64), sy(p.mean)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">layer {layer}</text>"#,
            w - right - 60.0,
            top + 14.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one SVG per metric into `out_dir`; returns the files written.
pub fn plot(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = collect_inputs(inputs)?;
    let mut tables = Vec::new();
    let mut n_pairs = None;
    for f in &files {
        let (pairs, rows) = read_metrics(f).with_context(|| format!("reading {}", f.display()))?;
        match n_pairs {
            None => n_pairs = Some(pairs),
            Some(p) if p != pairs => bail!(
                "schema mismatch: {} has {pairs} swap-rate columns, earlier files have {p}",
                f.display()
            ),
            _ => {}
        }
        tables.push(rows);
    }
    if tables.iter().all(Vec::is_empty) {
        bail!("metrics files contain no rows");
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let layers: std::collections::BTreeSet<usize> = tables.iter().flatten().map(|r| r.layer).collect();
    let mut written = Vec::new();
    for (name, get) in metrics(n_pairs.unwrap_or(0)) {
        let curves: Vec<(usize, Vec<BandPoint>)> = layers
            .iter()
            .map(|&layer| {
                let series: Vec<Vec<(u64, f64)>> = tables
                    .iter()
                    .map(|rows| {
                        rows.iter()
                            .filter(|r| r.layer == layer)
                            .filter_map(|r| get(r).map(|x| (r.iteration, x)))
                            .collect()
                    })
                    .collect();
                (layer, bands(&series))
            })
            .filter(|(_, c)| !c.is_empty())
            .collect();
        if curves.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&path, render_svg(&name, &curves)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
