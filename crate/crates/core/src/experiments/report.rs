//! CSV tables and PNG figures rendered from a results store.
//!
//! Rendering only reads the store; every file goes under the output directory.
//! Output is deterministic: rows are sorted, numbers use fixed precision and
//! heatmaps use a fixed color scale.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageFormat, Rgb, RgbImage};

use crate::training::{Role, RunRecord};

use super::config::Study;
use super::runner::SI_PREFIX;
use super::elimination::{electrode_importance, Elimination};
use super::stats::{wilcoxon_rank_sum, wilcoxon_signed_rank};
use super::store::{stable_mean, summarize, summary_csv, write_atomic, ResultsStore};
use super::{ExperimentError, Result};

/// Relative accuracy (points) mapped to the saturated ends of the heatmap scale.
pub const HEATMAP_SCALE: f64 = 10.0;
/// Side of one heatmap cell in pixels.
pub const CELL_PX: u32 = 24;

const MISSING: &str = "NA";
const MASKED: &str = "ns";
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GAP: Rgb<u8> = Rgb([200, 200, 200]);
const GRID: Rgb<u8> = Rgb([128, 128, 128]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const NEG: [f64; 3] = [33.0, 102.0, 172.0];
const POS: [f64; 3] = [178.0, 24.0, 43.0];

/// Report settings.
#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Cross-subject cells with a rank-sum p at or above this are masked.
    pub significance: f64,
    /// Studies to render; all stored studies when `None`.
    pub studies: Option<Vec<String>>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { significance: 0.05, studies: None }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| format!("{v:.4}"))
}

fn csv_text(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| ExperimentError::Report(e.to_string()))?;
    Ok(buf.into_inner())
}

/// File-name friendly form of a label.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect()
}

/// Color of a relative accuracy on the fixed diverging scale; `None` is white.
pub fn diverging_color(v: Option<f64>, scale: f64) -> Rgb<u8> {
    let Some(v) = v else { return WHITE };
    let t = (v / scale).clamp(-1.0, 1.0);
    let end = if t < 0.0 { NEG } else { POS };
    let a = t.abs();
    let mix = |i: usize| (255.0 + (end[i] - 255.0) * a).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

/// A grid of optional values; `None` cells are gaps (no data), masked cells
/// have data that is drawn blank.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, `rows * cols` entries.
    pub values: Vec<Option<f64>>,
    pub masked: Vec<bool>,
}

impl Heatmap {
    pub fn shape(&self) -> (usize, usize) {
        (self.row_labels.len(), self.col_labels.len())
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    /// Pixel size of the rendered image for a `rows x cols` grid.
    pub fn image_size(rows: usize, cols: usize) -> (u32, u32) {
        (cols as u32 * CELL_PX + 1, rows as u32 * CELL_PX + 1)
    }

    /// Cells in row-major order, each filled with one color inside a grid of
    /// 1-pixel lines. Gaps are light gray, masked cells white.
    pub fn render(&self) -> RgbImage {
        let (rows, cols) = self.shape();
        let (w, h) = Self::image_size(rows, cols);
        let mut img = RgbImage::from_pixel(w, h, GRID);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let color = match (self.values[i], self.masked[i]) {
                    (None, _) => GAP,
                    (Some(_), true) => WHITE,
                    (Some(v), false) => diverging_color(Some(v), HEATMAP_SCALE),
                };
                let (x0, y0) = (c as u32 * CELL_PX + 1, r as u32 * CELL_PX + 1);
                for y in y0..y0 + CELL_PX - 1 {
                    for x in x0..x0 + CELL_PX - 1 {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
        img
    }

    fn to_csv(&self) -> Result<String> {
        let cols = self.col_labels.len();
        let mut rows = vec![std::iter::once("teacher\\student".to_string()).chain(self.col_labels.iter().cloned()).collect()];
        for (r, label) in self.row_labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            for c in 0..cols {
                let i = r * cols + c;
                row.push(match (self.values[i], self.masked[i]) {
                    (None, _) => MISSING.to_string(),
                    (Some(_), true) => MASKED.to_string(),
                    (Some(v), false) => format!("{v:.4}"),
                });
            }
            rows.push(row);
        }
        csv_text(rows)
    }
}

fn accuracies(records: &[&RunRecord]) -> Vec<f64> {
    let mut v: Vec<f64> = records.iter().filter(|r| r.is_completed()).filter_map(|r| r.test_accuracy).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Report group of a record: the architecture pairing (or the teacher's own
/// architecture) and the montage.
fn group_of(r: &RunRecord) -> (String, String) {
    let pair = r.tags.get("pair").cloned().unwrap_or_else(|| r.architecture.clone());
    (pair, r.montage.clone())
}

fn cell_of(r: &RunRecord) -> String {
    r.tags.get("cell").cloned().unwrap_or_else(|| r.role.to_string())
}

/// Cells first by kind (teacher, baseline, the rest), then by name.
fn cell_order(cell: &str) -> (u8, String) {
    let rank = match cell {
        "teacher" => 0,
        "baseline" => 1,
        _ => 2,
    };
    (rank, cell.to_string())
}

/// Wide table: one row per (group, cell), one column per subject, then the
/// mean over subjects, its difference from the group's baseline and the
/// signed-rank p over subjects present in both.
pub fn study_table(records: &[RunRecord]) -> Result<String> {
    // Subject-independent teachers are reported through the grids that use them.
    let records: Vec<&RunRecord> = records.iter().filter(|r| !r.subject_id.starts_with(SI_PREFIX)).collect();
    let subjects: BTreeSet<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let mut groups: BTreeMap<(String, String), BTreeMap<(u8, String), Vec<&RunRecord>>> = BTreeMap::new();
    for &r in &records {
        groups.entry(group_of(r)).or_default().entry(cell_order(&cell_of(r))).or_default().push(r);
    }
    let mut header = vec!["pair".to_string(), "montage".to_string(), "cell".to_string()];
    header.extend(subjects.iter().cloned());
    header.extend(["mean", "delta_vs_baseline", "p_vs_baseline", "n_runs", "n_aborted"].map(String::from));
    let mut rows = vec![header];
    for ((pair, montage), cells) in &groups {
        let subject_means = |recs: &[&RunRecord]| -> BTreeMap<String, f64> {
            let mut out = BTreeMap::new();
            for s in &subjects {
                let of: Vec<&RunRecord> = recs.iter().copied().filter(|r| &r.subject_id == s).collect();
                if let Some(m) = stable_mean(&accuracies(&of)) {
                    out.insert(s.clone(), m);
                }
            }
            out
        };
        let baseline = cells.get(&cell_order("baseline")).map(|recs| subject_means(recs));
        for ((_, cell), recs) in cells {
            let means = subject_means(recs);
            let mut row = vec![pair.clone(), montage.clone(), cell.clone()];
            row.extend(subjects.iter().map(|s| fmt(means.get(s).copied())));
            let values: Vec<f64> = means.values().copied().collect();
            let mean = stable_mean(&values);
            row.push(fmt(mean));
            let (delta, p) = match &baseline {
                Some(b) if cell != "baseline" => {
                    let paired: Vec<(f64, f64)> = means.iter().filter_map(|(s, &m)| b.get(s).map(|&bm| (m, bm))).collect();
                    let bvals: Vec<f64> = b.values().copied().collect();
                    let delta = mean.zip(stable_mean(&bvals)).map(|(m, bm)| m - bm);
                    let p = if paired.is_empty() {
                        None
                    } else {
                        let (a, b): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
                        Some(wilcoxon_signed_rank(&a, &b)?.p_value)
                    };
                    (delta, p)
                }
                _ => (None, None),
            };
            row.push(fmt(delta));
            row.push(fmt(p));
            row.push(recs.len().to_string());
            row.push(recs.iter().filter(|r| !r.is_completed()).count().to_string());
            rows.push(row);
        }
    }
    csv_text(rows)
}

/// Cross-subject relative improvements of one (pair, montage) group.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSubjectGrid {
    pub pair: String,
    pub montage: String,
    /// Teacher subjects, subject-independent (`SI`) last; rows of `heatmap`.
    pub teachers: Vec<String>,
    /// Student subjects; columns of `heatmap`.
    pub students: Vec<String>,
    /// Mean distilled minus mean baseline accuracy, in points.
    pub heatmap: Heatmap,
    /// Rank-sum p of the distilled versus baseline accuracies over seeds.
    pub p_values: Vec<Option<f64>>,
}

/// Builds one grid per (pair, montage) from cross-subject records. Cells with
/// `p >= significance` are masked; cells without runs stay gaps.
pub fn cross_subject_grids(records: &[RunRecord], significance: f64) -> Result<Vec<CrossSubjectGrid>> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.role != Role::Teacher) {
        groups.entry(group_of(r)).or_default().push(r);
    }
    let mut grids = Vec::new();
    for ((pair, montage), recs) in groups {
        let students: Vec<String> = recs.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut teacher_set: BTreeSet<String> = students.iter().cloned().collect();
        teacher_set.extend(recs.iter().filter_map(|r| r.tags.get("teacher_subject").cloned()));
        let si = teacher_set.remove("SI");
        let mut teachers: Vec<String> = teacher_set.into_iter().collect();
        if si {
            teachers.push("SI".into());
        }
        let mut values = Vec::new();
        let mut masked = Vec::new();
        let mut p_values = Vec::new();
        for t in &teachers {
            for s in &students {
                let select = |cell: &str| -> Vec<f64> {
                    let of: Vec<&RunRecord> =
                        recs.iter().copied().filter(|r| &r.subject_id == s && cell_of(r) == cell).collect();
                    accuracies(&of)
                };
                let distilled = select(&format!("teacher={t}"));
                let baseline = select("baseline");
                let delta = stable_mean(&distilled).zip(stable_mean(&baseline)).map(|(d, b)| d - b);
                let p = if delta.is_some() { Some(wilcoxon_rank_sum(&distilled, &baseline)?.p_value) } else { None };
                masked.push(p.is_some_and(|p| !(p < significance)));
                values.push(delta);
                p_values.push(p);
            }
        }
        grids.push(CrossSubjectGrid {
            pair,
            montage,
            heatmap: Heatmap { row_labels: teachers.clone(), col_labels: students.clone(), values, masked },
            teachers,
            students,
            p_values,
        });
    }
    Ok(grids)
}

fn cross_subject_long_csv(grid: &CrossSubjectGrid) -> Result<String> {
    let mut rows = vec![["teacher", "student", "delta", "p_value", "significant"].map(String::from).to_vec()];
    let cols = grid.students.len();
    for (r, t) in grid.teachers.iter().enumerate() {
        for (c, s) in grid.students.iter().enumerate() {
            let i = r * cols + c;
            let sig = match grid.heatmap.values[i] {
                None => MISSING.to_string(),
                Some(_) => (!grid.heatmap.masked[i]).to_string(),
            };
            rows.push(vec![t.clone(), s.clone(), fmt(grid.heatmap.values[i]), fmt(grid.p_values[i]), sig]);
        }
    }
    csv_text(rows)
}

/// One stored elimination run with the parts of its artifact name.
#[derive(Debug, Clone)]
struct EliminationRun {
    architecture: String,
    subject: String,
    kd: String,
    seed: String,
    run: Elimination,
}

fn elimination_runs(store: &ResultsStore, study: &str) -> Result<Vec<EliminationRun>> {
    let mut out = Vec::new();
    for name in store.artifacts(study, "elim-")? {
        let rest = &name["elim-".len()..];
        let parts: Vec<&str> = rest.rsplitn(4, '-').collect();
        let [seed, kd, subject, architecture] = parts[..] else {
            return Err(ExperimentError::Report(format!("unrecognized elimination artifact {name}")));
        };
        let text = store.artifact(study, &name)?.expect("listed artifact exists");
        out.push(EliminationRun {
            architecture: architecture.into(),
            subject: subject.into(),
            kd: kd.into(),
            seed: seed.into(),
            run: Elimination::parse(&text)?,
        });
    }
    Ok(out)
}

fn kd_color(kd: &str) -> Rgb<u8> {
    match kd {
        "none" => Rgb([33, 102, 172]),
        "sk" => Rgb([178, 24, 43]),
        _ => Rgb([90, 90, 90]),
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = ((x0 + (x1 - x0) * t).round(), (y0 + (y1 - y0) * t).round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, color: Rgb<u8>) {
    for y in y0..(y0 + h).min(img.height()) {
        for x in x0..(x0 + w).min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

const PLOT_W: u32 = 480;
const PLOT_H: u32 = 320;
const MARGIN: u32 = 24;

fn axes(width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let (x0, y0) = (MARGIN as f64, (height - MARGIN) as f64);
    draw_line(&mut img, (x0, y0), ((width - MARGIN) as f64, y0), BLACK);
    draw_line(&mut img, (x0, y0), (x0, MARGIN as f64), BLACK);
    img
}

/// Mean elimination curve per KD mode on a fixed 0-100 accuracy axis, the full
/// channel set on the left.
fn curves_figure(curves: &BTreeMap<String, Vec<f64>>) -> RgbImage {
    let mut img = axes(PLOT_W, PLOT_H);
    let n = curves.values().map(Vec::len).max().unwrap_or(0);
    let span_x = (PLOT_W - 2 * MARGIN) as f64;
    let span_y = (PLOT_H - 2 * MARGIN) as f64;
    let at = |k: usize, v: f64| {
        let x = MARGIN as f64 + if n > 1 { span_x * k as f64 / (n - 1) as f64 } else { 0.0 };
        let y = (PLOT_H - MARGIN) as f64 - span_y * (v / 100.0).clamp(0.0, 1.0);
        (x, y)
    };
    for (kd, curve) in curves {
        let color = kd_color(kd);
        for (k, &v) in curve.iter().enumerate() {
            let p = at(k, v);
            fill_rect(&mut img, (p.0 as u32).saturating_sub(1), (p.1 as u32).saturating_sub(1), 3, 3, color);
            if k + 1 < curve.len() {
                draw_line(&mut img, p, at(k + 1, curve[k + 1]), color);
            }
        }
    }
    img
}

fn importance_figure(normalized: &[f64], color: Rgb<u8>) -> RgbImage {
    const BAR: u32 = 16;
    let width = 2 * MARGIN + BAR * normalized.len() as u32;
    let mut img = axes(width, PLOT_H);
    let span_y = (PLOT_H - 2 * MARGIN) as f64;
    for (i, &v) in normalized.iter().enumerate() {
        let h = (span_y * v.clamp(0.0, 1.0)).round() as u32;
        fill_rect(&mut img, MARGIN + 2 + BAR * i as u32, PLOT_H - MARGIN - h, BAR - 4, h, color);
    }
    img
}

/// Element-wise mean of curves of equal length.
fn mean_curve(curves: &[&[f64]]) -> Vec<f64> {
    let n = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..n)
        .map(|k| stable_mean(&curves.iter().map(|c| c[k]).collect::<Vec<_>>()).expect("at least one curve"))
        .collect()
}

struct Output<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Output<'_> {
    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        self.written.push(path);
        Ok(())
    }

    fn png(&mut self, name: &str, img: &RgbImage) -> Result<()> {
        let path = self.dir.join("figures").join(name);
        write_atomic(&path, &png_bytes(img)?)?;
        self.written.push(path);
        Ok(())
    }
}

fn render_elimination(store: &ResultsStore, study: &str, out: &mut Output<'_>) -> Result<()> {
    let runs = elimination_runs(store, study)?;
    let mut rows = vec![["architecture", "kd", "subject", "seed", "n_channels", "score"].map(String::from).to_vec()];
    let mut by_arch: BTreeMap<String, BTreeMap<String, Vec<&EliminationRun>>> = BTreeMap::new();
    for r in &runs {
        by_arch.entry(r.architecture.clone()).or_default().entry(r.kd.clone()).or_default().push(r);
        let n = r.run.channels.len();
        for (k, v) in r.run.curve.iter().enumerate() {
            rows.push(vec![
                r.architecture.clone(),
                r.kd.clone(),
                r.subject.clone(),
                r.seed.clone(),
                (n - k).to_string(),
                format!("{v:.4}"),
            ]);
        }
    }
    out.text("elimination_curves.csv", &csv_text(rows)?)?;

    let mut imp_rows = vec![["architecture", "kd", "channel", "raw", "normalized"].map(String::from).to_vec()];
    for (arch, kds) in &by_arch {
        let mut means = BTreeMap::new();
        for (kd, runs) in kds {
            let curves: Vec<&[f64]> = runs.iter().map(|r| r.run.curve.as_slice()).collect();
            means.insert(kd.clone(), mean_curve(&curves));
            let elims: Vec<Elimination> = runs.iter().map(|r| r.run.clone()).collect();
            let imp = electrode_importance(&elims, &elims[0].channels)?;
            for (i, ch) in imp.channels.iter().enumerate() {
                imp_rows.push(vec![arch.clone(), kd.clone(), ch.clone(), format!("{:.4}", imp.raw[i]), format!("{:.4}", imp.normalized[i])]);
            }
            out.png(&format!("importance-{}-{}.png", slug(arch), slug(kd)), &importance_figure(&imp.normalized, kd_color(kd)))?;
        }
        out.png(&format!("elimination-{}.png", slug(arch)), &curves_figure(&means))?;
    }
    out.text("electrode_importance.csv", &csv_text(imp_rows)?)?;
    Ok(())
}

/// Renders every requested study of `store` into `out_dir/<study>/` and
/// returns the written paths.
pub fn render_report(store: &ResultsStore, out_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    let mut studies = store.studies()?;
    if let Some(wanted) = &opts.studies {
        for w in wanted {
            if !studies.contains(w) {
                return Err(ExperimentError::Report(format!("study {w} has no results in {}", store.root().display())));
            }
        }
        studies.retain(|s| wanted.contains(s));
    }
    let mut written = Vec::new();
    for study in &studies {
        let records = store.records(study)?;
        let has_elims = !store.artifacts(study, "elim-")?.is_empty();
        if records.is_empty() && !has_elims {
            continue;
        }
        let dir = out_dir.join(study);
        let mut out = Output { dir: &dir, written: Vec::new() };
        out.text("summary.csv", &summary_csv(&summarize(&records))?)?;
        out.text("table.csv", &study_table(&records)?)?;
        match Study::from_str(study) {
            Ok(Study::CrossSubject) => {
                for grid in cross_subject_grids(&records, opts.significance)? {
                    let stem = format!("cross_subject-{}-{}", slug(&grid.pair), slug(&grid.montage));
                    out.text(&format!("{stem}.csv"), &grid.heatmap.to_csv()?)?;
                    out.text(&format!("{stem}-cells.csv"), &cross_subject_long_csv(&grid)?)?;
                    out.png(&format!("{stem}.png"), &grid.heatmap.render())?;
                }
            }
            Ok(Study::Elimination) => render_elimination(store, study, &mut out)?,
            _ => {}
        }
        written.extend(out.written);
    }
    if written.is_empty() {
        return Err(ExperimentError::Report(format!("no results in {}", store.root().display())));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_is_fixed_and_clamped() {
        assert_eq!(diverging_color(Some(0.0), HEATMAP_SCALE), WHITE);
        assert_eq!(diverging_color(Some(10.0), HEATMAP_SCALE), Rgb([178, 24, 43]));
        assert_eq!(diverging_color(Some(25.0), HEATMAP_SCALE), diverging_color(Some(10.0), HEATMAP_SCALE));
        assert_eq!(diverging_color(Some(-10.0), HEATMAP_SCALE), Rgb([33, 102, 172]));
        assert_eq!(diverging_color(None, HEATMAP_SCALE), WHITE);
    }

    #[test]
    fn artifact_names_split_from_the_right() {
        let parts: Vec<&str> = "SCCNet-S01-none-3".rsplitn(4, '-').collect();
        assert_eq!(parts, vec!["3", "none", "S01", "SCCNet"]);
    }

    #[test]
    fn mean_curve_uses_the_shortest_length() {
        assert_eq!(mean_curve(&[&[1.0, 2.0, 3.0], &[3.0, 4.0]]), vec![2.0, 3.0]);
    }
}
