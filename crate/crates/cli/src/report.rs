//! Figure-shaped outputs: an SVG plus the CSV it was drawn from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cotrain::corruptions::CorruptionGroup;
use cotrain::image::{encode_png_gray, ImageArray};
use cotrain::reconstruction::load_reconstruction;
use cotrain::robustness::{regress_robustness, robustness_score, AccuracyTable, ModelRecord, RobustnessReport};
use cotrain::saliency::{records_from_csv, saliency_comparison};
use cotrain::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::file_digest;
use crate::pipeline::SeedSummary;
use crate::svg::{padded_range, Panel, Svg, PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ReportKind {
    RobustnessCurves,
    GroupBars,
    CorrelationScatter,
    ReconstructionGrid,
    SaliencyScatter,
}

impl ReportKind {
    pub fn name(self) -> &'static str {
        match self {
            ReportKind::RobustnessCurves => "robustness_curves",
            ReportKind::GroupBars => "group_bars",
            ReportKind::CorrelationScatter => "correlation_scatter",
            ReportKind::ReconstructionGrid => "reconstruction_grid",
            ReportKind::SaliencyScatter => "saliency_scatter",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Baseline accuracy table for the correlation study.
    pub baseline: Option<PathBuf>,
    pub model_a: Option<String>,
    pub model_b: Option<String>,
}

/// Summary of what a report drew, for callers and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub svg: PathBuf,
    pub csv: PathBuf,
    pub panels: usize,
    pub points: usize,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::data_file(path, e.to_string()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Expand directories into the files with the given extension, sorted.
fn expand(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == ext))
                .collect();
            v.sort();
            out.extend(v);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Error::data_file(p, "report input does not exist"));
        }
    }
    if out.is_empty() {
        return Err(Error::data(format!("no .{ext} inputs for the report")));
    }
    Ok(out)
}

fn is_seed_file(path: &Path) -> bool {
    let s = stem(path);
    s.rsplit_once("_s").is_some_and(|(_, n)| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

fn lineage(files: &[PathBuf]) -> Result<String> {
    let mut m = BTreeMap::new();
    for f in files {
        m.insert(f.display().to_string(), file_digest(f)?);
    }
    Ok(serde_json::to_string(&m).expect("json"))
}

fn emit(out: &Path, kind: ReportKind, svg: Svg, csv: String, inputs: &[PathBuf], panels: usize, points: usize) -> Result<ReportSummary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let svg_path = out.join(format!("{}.svg", kind.name()));
    let csv_path = out.join(format!("{}.csv", kind.name()));
    std::fs::write(&svg_path, svg.finish(&lineage(inputs)?)).map_err(|e| Error::io(&svg_path, e))?;
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(ReportSummary { svg: svg_path, csv: csv_path, panels, points })
}

pub fn report(kind: ReportKind, inputs: &[PathBuf], opts: &ReportOptions, out: &Path) -> Result<ReportSummary> {
    match kind {
        ReportKind::RobustnessCurves => robustness_curves(inputs, out),
        ReportKind::GroupBars => group_bars(inputs, out),
        ReportKind::CorrelationScatter => correlation_scatter(inputs, opts, out),
        ReportKind::ReconstructionGrid => reconstruction_grid(inputs, out),
        ReportKind::SaliencyScatter => saliency_scatter(inputs, opts, out),
    }
}

/// One panel per corruption: mean accuracy over seeds against severity,
/// one line per model (merged tables, one CSV per model).
fn robustness_curves(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    let files: Vec<PathBuf> = expand(inputs, "csv")?.into_iter().filter(|f| !is_seed_file(f)).collect();
    let mut models = Vec::new();
    for f in &files {
        let t = AccuracyTable::from_csv(&read(f)?).map_err(|e| Error::data_file(f, e.to_string()))?;
        t.check_complete().map_err(|e| Error::data_file(f, e.to_string()))?;
        models.push((stem(f), t));
    }
    let kinds = models[0].1.kinds();
    let levels = models[0].1.levels();
    let cols = 4usize;
    let rows = kinds.len().div_ceil(cols);
    let (pw, ph) = (170.0, 120.0);
    let mut svg = Svg::new(cols as f64 * (pw + 50.0) + 20.0, rows as f64 * (ph + 50.0) + 30.0 + 14.0 * models.len() as f64);
    let mut csv = String::from("model,kind,level,mean_accuracy\n");
    let mut points = 0;
    let lmin = *levels.first().expect("levels") as f64;
    let lmax = *levels.last().expect("levels") as f64;
    for (i, &kind) in kinds.iter().enumerate() {
        let panel = Panel {
            x: 50.0 + (i % cols) as f64 * (pw + 50.0),
            y: 30.0 + (i / cols) as f64 * (ph + 50.0),
            w: pw,
            h: ph,
            xr: (lmin, lmax.max(lmin + 1.0)),
            yr: (0.0, 1.0),
        };
        panel.frame(&mut svg, kind.name());
        for (m, (name, t)) in models.iter().enumerate() {
            let seeds = t.seeds();
            let pts: Vec<(f64, f64)> = levels
                .iter()
                .filter_map(|&l| {
                    let v: Vec<f64> = seeds.iter().filter_map(|&s| t.get(kind, l, s)).collect();
                    (!v.is_empty()).then(|| (l as f64, v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            let color = PALETTE[m % PALETTE.len()];
            svg.polyline(&pts.iter().map(|&(x, y)| (panel.px(x), panel.py(y))).collect::<Vec<_>>(), color);
            for &(x, y) in &pts {
                svg.circle(panel.px(x), panel.py(y), 2.0, color);
                let _ = writeln!(csv, "{name},{kind},{x},{y}");
                points += 1;
            }
        }
    }
    let ly = 30.0 + rows as f64 * (ph + 50.0);
    for (m, (name, _)) in models.iter().enumerate() {
        let y = ly + 14.0 * m as f64;
        svg.rect(20.0, y - 8.0, 10.0, 8.0, PALETTE[m % PALETTE.len()]);
        svg.text(36.0, y, 10.0, "start", name);
    }
    emit(out, ReportKind::RobustnessCurves, svg, csv, &files, kinds.len(), points)
}

/// Group scores per model from robustness report JSON files.
fn group_bars(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    let files = expand(inputs, "json")?;
    let mut reports = Vec::new();
    for f in &files {
        let r: RobustnessReport = serde_json::from_str(&read(f)?).map_err(|e| Error::data_file(f, e.to_string()))?;
        reports.push((stem(f), r));
    }
    let groups = CorruptionGroup::ALL;
    let ymax = reports
        .iter()
        .flat_map(|(_, r)| r.groups.values().copied())
        .fold(1.2_f64, f64::max);
    let panel = Panel { x: 50.0, y: 30.0, w: 480.0, h: 220.0, xr: (0.0, groups.len() as f64), yr: (0.0, ymax * 1.05) };
    let mut svg = Svg::new(560.0, 300.0 + 14.0 * reports.len() as f64);
    panel.frame(&mut svg, "robustness score by corruption group");
    svg.line(panel.px(0.0), panel.py(1.0), panel.px(groups.len() as f64), panel.py(1.0), "gray", true);
    let mut csv = String::from("model,group,score\n");
    let bw = 0.8 / reports.len() as f64;
    let mut points = 0;
    for (gi, g) in groups.iter().enumerate() {
        svg.text(panel.px(gi as f64 + 0.5), panel.py(0.0) + 22.0, 10.0, "middle", &g.to_string());
        for (m, (name, r)) in reports.iter().enumerate() {
            if let Some(v) = r.group(*g) {
                let x0 = gi as f64 + 0.1 + m as f64 * bw;
                svg.rect(panel.px(x0), panel.py(v), panel.px(x0 + bw) - panel.px(x0), panel.py(0.0) - panel.py(v), PALETTE[m % PALETTE.len()]);
                let _ = writeln!(csv, "{name},{g},{v}");
                points += 1;
            }
        }
    }
    for (m, (name, _)) in reports.iter().enumerate() {
        let y = 290.0 + 14.0 * m as f64;
        svg.rect(20.0, y - 8.0, 10.0, 8.0, PALETTE[m % PALETTE.len()]);
        svg.text(36.0, y, 10.0, "start", name);
    }
    emit(out, ReportKind::GroupBars, svg, csv, &files, 1, points)
}

/// Robustness against neural prediction quality for every (model, seed)
/// with a neural readout, plus the two-factor regression.
fn correlation_scatter(inputs: &[PathBuf], opts: &ReportOptions, out: &Path) -> Result<ReportSummary> {
    let baseline_path = opts
        .baseline
        .as_ref()
        .ok_or_else(|| Error::config("correlation_scatter needs a baseline accuracy table"))?;
    let baseline = AccuracyTable::from_csv(&read(baseline_path)?)?;
    let summaries = expand(inputs, "json")?;
    let mut csv = String::from("model,seed,batch_ratio,robustness,clean_accuracy,neural_correlation\n");
    let mut pool = Vec::new();
    let mut used = vec![baseline_path.clone()];
    for f in &summaries {
        let s: SeedSummary = serde_json::from_str(&read(f)?).map_err(|e| Error::data_file(f, e.to_string()))?;
        let Some(corr) = s.neural_correlation else { continue };
        let table_path = f.with_extension("csv");
        let table = AccuracyTable::from_csv(&read(&table_path)?)?;
        let score = robustness_score(&table, &baseline)?.score;
        let _ = writeln!(csv, "{},{},{},{score},{},{corr}", s.pipeline, s.seed, s.batch_ratio, s.clean_accuracy);
        pool.push(ModelRecord { robustness: score, clean_accuracy: s.clean_accuracy, neural_correlation: corr });
        used.push(f.clone());
        used.push(table_path);
    }
    if pool.is_empty() {
        return Err(Error::data("no per-seed summaries with neural correlation"));
    }
    let xr = padded_range(pool.iter().map(|r| r.neural_correlation));
    let yr = padded_range(pool.iter().map(|r| r.robustness));
    let panel = Panel { x: 60.0, y: 30.0, w: 360.0, h: 260.0, xr, yr };
    let mut svg = Svg::new(460.0, 340.0);
    panel.frame(&mut svg, "robustness vs neural prediction");
    svg.text(panel.x + panel.w / 2.0, panel.y + panel.h + 28.0, 10.0, "middle", "mean neuron correlation");
    for r in &pool {
        svg.circle(panel.px(r.neural_correlation), panel.py(r.robustness), 3.0, PALETTE[0]);
    }
    if pool.len() >= 4 {
        let reg = regress_robustness(&pool)?;
        // Display line at the mean clean accuracy.
        let mean_acc = pool.iter().map(|r| r.clean_accuracy).sum::<f64>() / pool.len() as f64;
        let at = |x: f64| reg.intercept.estimate + reg.clean_accuracy.estimate * mean_acc + reg.neural_correlation.estimate * x;
        svg.line(panel.px(xr.0), panel.py(at(xr.0)), panel.px(xr.1), panel.py(at(xr.1)), PALETTE[1], false);
        let reg_path = out.join("correlation_regression.json");
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        std::fs::write(&reg_path, serde_json::to_string_pretty(&reg).expect("json")).map_err(|e| Error::io(&reg_path, e))?;
    }
    let n = pool.len();
    emit(out, ReportKind::CorrelationScatter, svg, csv, &used, 1, n)
}

/// Reconstructed rasters laid out in a grid, min-max scaled per image.
fn reconstruction_grid(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    let files = expand(inputs, "f32")?;
    let cols = files.len().min(6);
    let rows = files.len().div_ceil(cols);
    let cell = 110.0;
    let mut svg = Svg::new(cols as f64 * cell + 10.0, rows as f64 * (cell + 16.0) + 10.0);
    let mut csv = String::from("file,height,width,norm\n");
    for (i, f) in files.iter().enumerate() {
        let img = load_reconstruction(f)?;
        let (lo, hi) = img.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let unit: ImageArray = img.map(|v| (v - lo) / span);
        let (x, y) = (10.0 + (i % cols) as f64 * cell, 10.0 + (i / cols) as f64 * (cell + 16.0));
        svg.png(x, y, cell - 10.0, cell - 10.0, &encode_png_gray(&unit));
        svg.text(x + (cell - 10.0) / 2.0, y + cell + 2.0, 9.0, "middle", &stem(f));
        let _ = writeln!(csv, "{},{},{},{}", stem(f), img.height(), img.width(), img.norm());
    }
    let n = files.len();
    emit(out, ReportKind::ReconstructionGrid, svg, csv, &files, n, n)
}

/// One panel per norm constraint: ρ̄ of model A against model B with the
/// diagonal for reference.
fn saliency_scatter(inputs: &[PathBuf], opts: &ReportOptions, out: &Path) -> Result<ReportSummary> {
    let files = expand(inputs, "csv")?;
    let mut records = Vec::new();
    for f in &files {
        records.extend(records_from_csv(&read(f)?).map_err(|e| Error::data_file(f, e.to_string()))?);
    }
    let (a, b) = match (&opts.model_a, &opts.model_b) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => return Err(Error::config("saliency_scatter needs --model-a and --model-b")),
    };
    let cmp = saliency_comparison(&records, &a, &b)?;
    let radii: Vec<f64> = cmp.above_fraction.iter().map(|(r, _)| *r).collect();
    let lo = cmp.points.iter().flat_map(|p| [p.a, p.b]).fold(0.0_f64, f64::min);
    let range = (lo - 0.05, 1.05);
    let pw = 180.0;
    let mut svg = Svg::new(radii.len() as f64 * (pw + 50.0) + 30.0, pw + 80.0);
    let mut csv = String::from("image,radius,model_a,model_b\n");
    for (i, (&r, &(_, frac))) in radii.iter().zip(&cmp.above_fraction).enumerate() {
        let panel = Panel { x: 50.0 + i as f64 * (pw + 50.0), y: 30.0, w: pw, h: pw, xr: range, yr: range };
        panel.frame(&mut svg, &format!("r = {r} (above: {:.0}%)", frac * 100.0));
        svg.line(panel.px(range.0), panel.py(range.0), panel.px(range.1), panel.py(range.1), "gray", true);
        for p in cmp.points.iter().filter(|p| p.radius == r) {
            svg.circle(panel.px(p.b), panel.py(p.a), 2.5, PALETTE[0]);
            let _ = writeln!(csv, "{},{},{},{}", p.image, p.radius, p.a, p.b);
        }
    }
    svg.text(20.0, pw + 70.0, 10.0, "start", &format!("y: {a}, x: {b}"));
    let n = cmp.points.len();
    emit(out, ReportKind::SaliencyScatter, svg, csv, &files, radii.len(), n)
}
