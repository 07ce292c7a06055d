//! Distribution comparisons between the true-best and achieved RSRP, and the
//! report files built from a sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::{ModelKind, SearchOutcome};
use crate::scalar::Real;

pub const REPORT_PERCENTILES: [f64; 4] = [50.0, 90.0, 95.0, 99.0];

fn sorted_f64<F: Real>(v: &[F]) -> Vec<f64> {
    let mut s: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// 1-Wasserstein distance between two empirical distributions.
///
/// Equal sizes use the mean absolute difference of order statistics; unequal
/// sizes integrate `|F_a - F_b|` exactly over the merged support.
pub fn wasserstein1<F: Real>(a: &[F], b: &[F]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("wasserstein1 needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Argument("wasserstein1 input contains NaN".into()));
    }
    let (sa, sb) = (sorted_f64(a), sorted_f64(b));
    if sa.len() == sb.len() {
        let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(sum / sa.len() as f64);
    }
    Ok(cdf_distance(&step_cdf(&sa), &step_cdf(&sb)))
}

/// Collapses sorted samples into (value, cumulative fraction) pairs.
fn step_cdf(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = f,
            _ => out.push((*v, f)),
        }
    }
    out
}

/// Integral of `|F_a - F_b|` for right-continuous step CDFs given as sorted
/// (value, F) points.
pub fn cdf_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if let Some(px) = prev {
            total += (fa - fb).abs() * (x - px);
        }
        while i < a.len() && a[i].0 == x {
            fa = a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb = b[j].1;
            j += 1;
        }
        prev = Some(x);
    }
    total
}

/// Right-continuous empirical CDF: sorted distinct values with the fraction
/// of samples at or below each.
pub fn cdf_points<F: Real>(samples: &[F]) -> Result<Vec<(F, f64)>> {
    if samples.is_empty() {
        return Err(Error::Argument("cdf of an empty sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp_real(b));
    let n = s.len() as f64;
    let mut out: Vec<(F, f64)> = Vec::new();
    for (i, v) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = f,
            _ => out.push((*v, f)),
        }
    }
    Ok(out)
}

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th smallest value.
pub fn nearest_rank<F: Real>(values: &[F], q: f64) -> Result<F> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Argument(format!("percentile {q} outside [0, 100]")));
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp_real(b));
    let rank = ((q / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Ok(s[rank - 1])
}

pub fn gap_percentiles<F: Real>(outcomes: &[SearchOutcome<F>], percentiles: &[f64]) -> Result<Vec<(f64, F)>> {
    let gaps: Vec<F> = outcomes.iter().map(|o| o.gap).collect();
    percentiles.iter().map(|&q| Ok((q, nearest_rank(&gaps, q)?))).collect()
}

/// Metrics for one (model, p, k) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport<F> {
    pub model: ModelKind,
    pub p: f64,
    pub k: usize,
    pub n: usize,
    pub w1: f64,
    pub mean_gap: f64,
    pub gap_percentiles: Vec<(f64, F)>,
    pub true_best: Vec<F>,
    pub achieved: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<F> {
    pub models: Vec<ModelKind>,
    pub ps: Vec<f64>,
    pub ks: Vec<usize>,
    /// Ordered by model, then p, then k.
    pub cells: Vec<CellReport<F>>,
}

impl<F: Real> EvalReport<F> {
    pub fn cell(&self, model: ModelKind, p: f64, k: usize) -> Option<&CellReport<F>> {
        self.cells.iter().find(|c| c.model == model && c.p == p && c.k == k)
    }
}

/// Groups outcomes into the requested factorial and computes every metric.
pub fn build_report<F: Real>(outcomes: &[SearchOutcome<F>], ks: &[usize], ps: &[f64], models: &[ModelKind]) -> Result<EvalReport<F>> {
    let mut groups: BTreeMap<(ModelKind, u64, usize), Vec<&SearchOutcome<F>>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.model, o.p.to_bits(), o.k)).or_default().push(o);
    }
    let mut cells = Vec::with_capacity(models.len() * ps.len() * ks.len());
    for &model in models {
        for &p in ps {
            for &k in ks {
                let group = groups
                    .get(&(model, p.to_bits(), k))
                    .ok_or_else(|| Error::Report(format!("no outcomes for model {model}, p = {p}, k = {k}")))?;
                let true_best: Vec<F> = group.iter().map(|o| o.true_best_rsrp).collect();
                let achieved: Vec<F> = group.iter().map(|o| o.achieved_rsrp).collect();
                let gaps: Vec<F> = group.iter().map(|o| o.gap).collect();
                let gap_percentiles = REPORT_PERCENTILES
                    .iter()
                    .map(|&q| Ok((q, nearest_rank(&gaps, q)?)))
                    .collect::<Result<Vec<_>>>()?;
                cells.push(CellReport {
                    model,
                    p,
                    k,
                    n: group.len(),
                    w1: wasserstein1(&true_best, &achieved)?,
                    mean_gap: gaps.iter().map(|g| g.as_f64()).sum::<f64>() / gaps.len() as f64,
                    gap_percentiles,
                    true_best,
                    achieved,
                });
            }
        }
    }
    Ok(EvalReport {
        models: models.to_vec(),
        ps: ps.to_vec(),
        ks: ks.to_vec(),
        cells,
    })
}

pub fn cdf_csv_path(dir: &Path, model: ModelKind, p: f64) -> PathBuf {
    dir.join(format!("cdf_{model}_{p}.csv"))
}

pub fn cdf_svg_path(dir: &Path, model: ModelKind, p: f64) -> PathBuf {
    dir.join(format!("cdf_{model}_{p}.svg"))
}

pub fn w1_table_path(dir: &Path, p: f64) -> PathBuf {
    dir.join(format!("w1_table_{p}.csv"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `w1.csv`, `percentiles.csv`, one W1 table per masking fraction
/// (rows k, columns models) and the CDF data and plot for every (model, p).
pub fn write_report<F: Real>(report: &EvalReport<F>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut w1 = String::from("model,p,k,w1_db,n\n");
    let mut pct = String::from("model,p,k,n,mean_gap_db");
    for q in REPORT_PERCENTILES {
        let _ = write!(pct, ",p{q}_db");
    }
    pct.push('\n');
    for c in &report.cells {
        let _ = writeln!(w1, "{},{},{},{},{}", c.model, c.p, c.k, c.w1, c.n);
        let _ = write!(pct, "{},{},{},{},{}", c.model, c.p, c.k, c.n, c.mean_gap);
        for (_, v) in &c.gap_percentiles {
            let _ = write!(pct, ",{v}");
        }
        pct.push('\n');
    }
    for (name, text) in [("w1.csv", &w1), ("percentiles.csv", &pct)] {
        let path = dir.join(name);
        write_file(&path, text)?;
        written.push(path);
    }

    for &p in &report.ps {
        let mut t = String::from("k");
        for m in &report.models {
            let _ = write!(t, ",{m}");
        }
        t.push('\n');
        for &k in &report.ks {
            let _ = write!(t, "{k}");
            for &m in &report.models {
                let c = report.cell(m, p, k).expect("cell built above");
                let _ = write!(t, ",{:.4}", c.w1);
            }
            t.push('\n');
        }
        let path = w1_table_path(dir, p);
        write_file(&path, &t)?;
        written.push(path);
    }

    for &model in &report.models {
        for &p in &report.ps {
            let cells: Vec<&CellReport<F>> = report.ks.iter().filter_map(|&k| report.cell(model, p, k)).collect();
            let mut series: Vec<(String, Vec<(F, f64)>)> = vec![("true_best".into(), cdf_points(&cells[0].true_best)?)];
            for c in &cells {
                series.push((format!("k{}", c.k), cdf_points(&c.achieved)?));
            }
            let mut csv = String::from("series,value,cdf\n");
            for (name, pts) in &series {
                for (v, f) in pts {
                    let _ = writeln!(csv, "{name},{v},{f}");
                }
            }
            let path = cdf_csv_path(dir, model, p);
            write_file(&path, &csv)?;
            written.push(path);
            let path = cdf_svg_path(dir, model, p);
            write_file(&path, &render_cdf_svg(&format!("{model}, p = {p}"), &series))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Parses a CDF CSV back into named series.
pub fn read_cdf_csv(path: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::format(path, format!("line {}", i + 1));
        let mut parts = line.split(',');
        let (name, v, f) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
        let v: f64 = v.parse().map_err(|_| bad())?;
        let f: f64 = f.parse().map_err(|_| bad())?;
        out.entry(name.to_string()).or_default().push((v, f));
    }
    Ok(out)
}

const PALETTE: [&str; 8] = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

/// Step-function CDF overlay as a standalone SVG document.
pub fn render_cdf_svg<F: Real>(title: &str, series: &[(String, Vec<(F, f64)>)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 45.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let values = series.iter().flat_map(|(_, p)| p.iter().map(|(v, _)| v.as_f64()));
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let sx = |v: f64| left + (v - lo) / (hi - lo) * pw;
    let sy = |f: f64| top + (1.0 - f) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"##);
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"##, left + pw / 2.0, xml_escape(title));
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#555555"/>"##);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let v = lo + f * (hi - lo);
        let (x, y) = (sx(v), sy(f));
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#555555"/>"##, top + ph, top + ph + 4.0);
        let _ = writeln!(s, r##"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"##, top + ph + 16.0);
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="#555555"/>"##, left - 4.0);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{f:.1}</text>"##, left - 7.0, y + 4.0);
    }
    let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">L1-RSRP (dBm)</text>"##, left + pw / 2.0, h - 8.0);
    let _ = writeln!(s, r##"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">CDF</text>"##, top + ph / 2.0, top + ph / 2.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        let mut f_prev = 0.0;
        for (j, (v, f)) in pts.iter().enumerate() {
            let x = sx(v.as_f64());
            if j == 0 {
                let _ = write!(path, "{:.2},{:.2} ", sx(lo), sy(0.0));
            }
            let _ = write!(path, "{x:.2},{:.2} {x:.2},{:.2} ", sy(f_prev), sy(*f));
            f_prev = *f;
        }
        let _ = write!(path, "{:.2},{:.2}", sx(hi), sy(f_prev));
        let dash = if i == 0 { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(s, r##"<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"##);
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r##"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/>"##, lx + 22.0);
        let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}">{}</text>"##, lx + 28.0, ly + 4.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
