//! Aggregation of trace files into best-so-far statistics and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use tlopt_core::io;

use crate::pipeline::Method;

/// Best-so-far curves of all repeats of one method on one pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub pattern: usize,
    /// `(repeat, best_so_far)` sorted by repeat.
    pub runs: Vec<(usize, Vec<f64>)>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    /// Sorted by pattern, then method.
    pub curves: Vec<Curve>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Report {
    pub fn patterns(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.curves.iter().map(|c| c.pattern).collect();
        p.dedup();
        p
    }

    pub fn curve(&self, method: Method, pattern: usize) -> Option<&Curve> {
        self.curves.iter().find(|c| c.method == method && c.pattern == pattern)
    }

    /// Final best value of every run of `method`, on one pattern or all.
    pub fn final_bests(&self, method: Method, pattern: Option<usize>) -> Vec<f64> {
        self.curves
            .iter()
            .filter(|c| c.method == method && pattern.is_none_or(|p| p == c.pattern))
            .flat_map(|c| c.runs.iter().filter_map(|(_, b)| b.last().copied()))
            .collect()
    }

    pub fn mean_final(&self, method: Method, pattern: Option<usize>) -> Option<f64> {
        let v = self.final_bests(method, pattern);
        (!v.is_empty()).then(|| mean_std(&v).0)
    }
}

/// Parses `method__pNN__rNN.csv`.
fn parse_stem(name: &str) -> Option<(Method, usize, usize)> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.split("__");
    let method = Method::from_name(parts.next()?)?;
    let pattern = parts.next()?.strip_prefix('p')?.parse().ok()?;
    let repeat = parts.next()?.strip_prefix('r')?.parse().ok()?;
    parts.next().is_none().then_some((method, pattern, repeat))
}

fn read_best_so_far(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,y,best_so_far") {
        bail!("{}: unexpected header", path.display());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 || cols[0].parse::<usize>().ok() != Some(i + 1) {
                bail!("{}: malformed row {}", path.display(), i + 2);
            }
            cols[2].parse::<f64>().with_context(|| format!("{}: row {}", path.display(), i + 2))
        })
        .collect()
}

/// Reads every complete trace in `dir`. Partial traces of failed runs are ignored.
pub fn aggregate(dir: &Path) -> anyhow::Result<Report> {
    let mut groups: BTreeMap<(usize, Method), Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((method, pattern, repeat)) = parse_stem(&name) {
            groups.entry((pattern, method)).or_default().push((repeat, read_best_so_far(&entry.path())?));
        }
    }
    let mut curves = Vec::with_capacity(groups.len());
    for ((pattern, method), mut runs) in groups {
        runs.sort_by_key(|(r, _)| *r);
        let len = runs[0].1.len();
        if runs.iter().any(|(_, b)| b.len() != len) || len == 0 {
            bail!("traces of {} on pattern {pattern} have different or zero lengths", method.name());
        }
        let (mean, std) = (0..len)
            .map(|k| mean_std(&runs.iter().map(|(_, b)| b[k]).collect::<Vec<_>>()))
            .unzip();
        curves.push(Curve { method, pattern, runs, mean, std });
    }
    Ok(Report { curves })
}

pub fn report_csv(rep: &Report) -> String {
    let mut out = String::from("method,pattern,step,n,mean_best_so_far,std_best_so_far\n");
    for c in &rep.curves {
        for (k, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{m},{s}", c.method.name(), c.pattern, k + 1, c.runs.len());
        }
    }
    out
}

pub fn summary_csv(rep: &Report) -> String {
    let mut out = String::from("method,pattern,n,mean_final_best,std_final_best\n");
    let mut row = |method: Method, pattern: Option<usize>| {
        let v = rep.final_bests(method, pattern);
        if !v.is_empty() {
            let (m, s) = mean_std(&v);
            let label = pattern.map_or_else(|| "all".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{},{label},{},{m},{s}", method.name(), v.len());
        }
    };
    for p in rep.patterns() {
        for m in Method::ALL {
            row(m, Some(p));
        }
    }
    for m in Method::ALL {
        row(m, None);
    }
    out
}

fn color(method: Method) -> &'static str {
    match method {
        Method::AnpBo => "#d62728",
        Method::Random => "#7f7f7f",
        Method::GpUcb => "#1f77b4",
    }
}

/// Mean best-so-far per method with a ±1 std band.
pub fn curves_svg(rep: &Report, pattern: usize) -> String {
    let curves: Vec<&Curve> = rep.curves.iter().filter(|c| c.pattern == pattern).collect();
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 20.0, 30.0, 50.0);
    let steps = curves.iter().map(|c| c.mean.len()).max().unwrap_or(1).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !(hi > lo) {
        (lo, hi) = (lo - 1.0, lo + 1.0);
    }
    let px = |k: usize| left + (w - left - right) * k as f64 / (steps - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for (v, y) in [(hi, py(hi)), (lo, py(lo))] {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#, left - 4.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{left}" y="{:.2}" font-size="11">1</text>"#, h - bottom + 14.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{steps}</text>"#, w - right, h - bottom + 14.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">trial</text>"#, (w + left) / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="{left}" y="18" font-size="12">pattern {pattern}: best-so-far (mean ± std)</text>"#);
    for (i, c) in curves.iter().enumerate() {
        let upper: Vec<String> = c.mean.iter().zip(&c.std).enumerate().map(|(k, (m, s))| format!("{:.2},{:.2}", px(k), py(m + s))).collect();
        let lower: Vec<String> = c.mean.iter().zip(&c.std).enumerate().rev().map(|(k, (m, s))| format!("{:.2},{:.2}", px(k), py(m - s))).collect();
        let line: Vec<String> = c.mean.iter().enumerate().map(|(k, m)| format!("{:.2},{:.2}", px(k), py(*m))).collect();
        let col = color(c.method);
        let _ = writeln!(svg, r#"<polygon points="{} {}" fill="{col}" fill-opacity="0.15" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="2"/>"#, line.join(" "));
        let ly = h - bottom - 12.0 - 16.0 * i as f64;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{col}" text-anchor="end">{}</text>"#, w - right - 6.0, c.method.name());
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_report(rep: &Report, out: &Path) -> anyhow::Result<()> {
    let put = |name: String, text: String| {
        let path = out.join(&name);
        io::write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    };
    put("report.csv".into(), report_csv(rep))?;
    put("summary.csv".into(), summary_csv(rep))?;
    for p in rep.patterns() {
        put(format!("curves_p{p:02}.svg"), curves_svg(rep, p))?;
    }
    Ok(())
}
