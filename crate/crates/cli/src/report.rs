//! Stand-alone analyses (bounds, scaling fits) and the cross-run report tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lvkd_core::annotator_bounds::{corr_ceiling, fit_noise_mixture, parse_diffs_csv, rmse_floor};
use lvkd_core::io::fmt6;
use lvkd_core::reference::{GRID_DICE, GRID_MEAN_IOU, PHASE_METHODS};
use lvkd_core::scaling_laws::{
    fit_loglog, parse_points_csv, saturation_split, MetricKind, ScalingPoint,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{AfdSummary, CsvTable, SegSummary, AFD_SUMMARY_FILE, SEG_SUMMARY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsOutput {
    pub rmse_floor: f64,
    pub corr_ceiling: f64,
}

pub fn bounds(rmse: f64, corr: f64) -> Result<BoundsOutput> {
    Ok(BoundsOutput {
        rmse_floor: rmse_floor(rmse)?,
        corr_ceiling: corr_ceiling(corr)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitOutput {
    pub mixture_weight: f64,
    pub uniform_halfwidth: f64,
    pub laplace_scale: f64,
    pub expected_abs: f64,
    pub log_likelihood: f64,
    pub samples: usize,
    pub degenerate: bool,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn bounds_fit(diffs_path: &Path) -> Result<NoiseFitOutput> {
    let diffs = parse_diffs_csv(&read_text(diffs_path)?)?;
    let fit = fit_noise_mixture(&diffs)?;
    Ok(NoiseFitOutput {
        mixture_weight: fit.model.mixture_weight,
        uniform_halfwidth: fit.model.uniform_halfwidth,
        laplace_scale: fit.model.laplace_scale,
        expected_abs: fit.model.expected_abs(),
        log_likelihood: fit.log_likelihood,
        samples: diffs.len(),
        degenerate: fit.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingOutput {
    pub metric_kind: MetricKind,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Present when there are at least four points.
    pub knee: Option<u64>,
}

/// Fits one metric kind; mixed files need `kind` to pick one.
pub fn scaling_fit(
    points_path: &Path,
    kind: Option<MetricKind>,
) -> Result<(ScalingOutput, Vec<u8>)> {
    let all = parse_points_csv(&read_text(points_path)?)?;
    let kinds: std::collections::BTreeSet<String> =
        all.iter().map(|p| p.metric_kind.to_string()).collect();
    let points: Vec<ScalingPoint> = match kind {
        Some(k) => all.into_iter().filter(|p| p.metric_kind == k).collect(),
        None if kinds.len() > 1 => {
            return Err(CliError::Config(format!(
                "points file mixes metric kinds {kinds:?}; choose one with --kind"
            )))
        }
        None => all,
    };
    let metric_kind = points
        .first()
        .map(|p| p.metric_kind)
        .ok_or_else(|| CliError::Data("no scaling points of the requested kind".into()))?;
    let fit = fit_loglog(&points)?;
    let knee = if points.len() >= 4 {
        Some(saturation_split(&points, &[])?.knee)
    } else {
        None
    };
    let mut csv = CsvTable::new(&[
        "param_count",
        "metric_kind",
        "metric_value",
        "log_param_count",
        "neg_log_metric",
    ]);
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| {
        a.param_count
            .cmp(&b.param_count)
            .then(a.metric_value.total_cmp(&b.metric_value))
    });
    for p in &sorted {
        let (x, y) = p.transformed()?;
        csv.row([
            p.param_count.to_string(),
            p.metric_kind.to_string(),
            fmt6(p.metric_value),
            fmt6(x),
            fmt6(y),
        ]);
    }
    let out = ScalingOutput {
        metric_kind,
        points: points.len(),
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        knee,
    };
    Ok((out, csv.into_bytes()))
}

/// One evaluated model, gathered from a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_dir: PathBuf,
    pub model: String,
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub param_count: usize,
    pub mean_dice: Option<f64>,
    pub mean_iou: Option<f64>,
    pub afd_ed: Option<f64>,
    pub afd_es: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    serde_json::from_str(&read_text(path)?)
        .map(Some)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn collect_runs(dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for dir in dirs {
        let seg: Option<SegSummary> = read_json(&dir.join(SEG_SUMMARY_FILE))?;
        let afd: Option<AfdSummary> = read_json(&dir.join(AFD_SUMMARY_FILE))?;
        let info = seg
            .as_ref()
            .and_then(|s| s.model.clone())
            .or_else(|| afd.as_ref().and_then(|a| a.model.clone()))
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{} has no evaluation summary with model information",
                    dir.display()
                ))
            })?;
        rows.push(ReportRow {
            run_dir: dir.clone(),
            model: info.model,
            num_blocks: info.num_blocks,
            layers_per_block: info.layers_per_block,
            param_count: info.param_count,
            mean_dice: seg.as_ref().and_then(|s| finite(s.aggregate.mean_dice)),
            mean_iou: seg.as_ref().and_then(|s| finite(s.aggregate.mean_iou)),
            afd_ed: afd.as_ref().and_then(|a| finite(a.afd_ed)),
            afd_es: afd.as_ref().and_then(|a| finite(a.afd_es)),
        });
    }
    Ok(rows)
}

/// Rows `l1..l4`, columns `B1..B4`, values in percent; empty where no run exists.
pub fn grid_csv(rows: &[ReportRow], metric: impl Fn(&ReportRow) -> Option<f64>) -> Result<Vec<u8>> {
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in rows {
        if !(1..=4).contains(&r.num_blocks) || !(1..=4).contains(&r.layers_per_block) {
            return Err(CliError::Data(format!(
                "{} lies outside the 4x4 grid",
                r.model
            )));
        }
        if let Some(v) = metric(r) {
            if cells
                .insert((r.layers_per_block, r.num_blocks), 100.0 * v)
                .is_some()
            {
                return Err(CliError::Data(format!(
                    "two runs for grid cell {}",
                    r.model
                )));
            }
        }
    }
    let mut csv = CsvTable::new(&["layers", "B1", "B2", "B3", "B4"]);
    for l in 1..=4 {
        let mut row = vec![format!("l{l}")];
        row.extend((1..=4).map(|b| crate::pipeline::cell(cells.get(&(l, b)).copied())));
        csv.row(row);
    }
    Ok(csv.into_bytes())
}

pub fn reference_grid_csv(grid: &[[f64; 4]; 4]) -> Vec<u8> {
    let mut csv = CsvTable::new(&["layers", "B1", "B2", "B3", "B4"]);
    for (l, values) in grid.iter().enumerate() {
        let mut row = vec![format!("l{}", l + 1)];
        row.extend(values.iter().map(|v| fmt6(*v)));
        csv.row(row);
    }
    csv.into_bytes()
}

fn millions(count: usize) -> String {
    format!("{}M", fmt6(count as f64 / 1e6))
}

/// Published method rows followed by this run's models.
pub fn methods_csv(rows: &[ReportRow]) -> Vec<u8> {
    let mut csv = CsvTable::new(&["method", "params", "afd_ed", "afd_es", "source"]);
    for m in PHASE_METHODS {
        csv.row([
            m.method.to_string(),
            m.params.to_string(),
            fmt6(m.afd_ed),
            fmt6(m.afd_es),
            "published".into(),
        ]);
    }
    let mut own: Vec<&ReportRow> = rows.iter().collect();
    own.sort_by_key(|r| (r.param_count, r.model.clone()));
    for r in own {
        csv.row([
            format!("{} (phantom)", r.model),
            millions(r.param_count),
            crate::pipeline::cell(r.afd_ed),
            crate::pipeline::cell(r.afd_es),
            "this run".into(),
        ]);
    }
    csv.into_bytes()
}

/// Points in the `scaling-fit` input schema, one per run and metric.
pub fn scaling_points_csv(rows: &[ReportRow]) -> Vec<u8> {
    let mut csv = CsvTable::new(&["param_count", "metric_kind", "metric_value"]);
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.param_count, r.model.clone()));
    for r in sorted {
        let mut push = |kind: MetricKind, v: Option<f64>| {
            if let Some(v) = v {
                csv.row([r.param_count.to_string(), kind.to_string(), fmt6(v)]);
            }
        };
        push(
            MetricKind::AfdSum,
            r.afd_ed
                .zip(r.afd_es)
                .map(|(a, b)| a + b)
                .filter(|v| *v > 0.0),
        );
        push(
            MetricKind::OneMinusDice,
            r.mean_dice.map(|d| 1.0 - d).filter(|v| *v > 0.0),
        );
        push(
            MetricKind::OneMinusIou,
            r.mean_iou.map(|d| 1.0 - d).filter(|v| *v > 0.0),
        );
    }
    csv.into_bytes()
}

pub const GRID_DICE_FILE: &str = "grid_dice.csv";
pub const GRID_IOU_FILE: &str = "grid_iou.csv";
pub const GRID_REFERENCE_DICE_FILE: &str = "grid_reference_dice.csv";
pub const GRID_REFERENCE_IOU_FILE: &str = "grid_reference_iou.csv";
pub const METHODS_FILE: &str = "methods.csv";
pub const SCALING_POINTS_FILE: &str = "scaling_points.csv";

pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<(Vec<ReportRow>, RunManifest)> {
    if run_dirs.is_empty() {
        return Err(CliError::Config(
            "report needs at least one run directory".into(),
        ));
    }
    let rows = collect_runs(run_dirs)?;
    let mut run = RunManifest::standalone("report");
    for d in run_dirs {
        run.input(d.join(SEG_SUMMARY_FILE));
        run.input(d.join(AFD_SUMMARY_FILE));
    }
    let files: [(&str, Vec<u8>); 6] = [
        (GRID_DICE_FILE, grid_csv(&rows, |r| r.mean_dice)?),
        (GRID_IOU_FILE, grid_csv(&rows, |r| r.mean_iou)?),
        (GRID_REFERENCE_DICE_FILE, reference_grid_csv(&GRID_DICE)),
        (GRID_REFERENCE_IOU_FILE, reference_grid_csv(&GRID_MEAN_IOU)),
        (METHODS_FILE, methods_csv(&rows)),
        (SCALING_POINTS_FILE, scaling_points_csv(&rows)),
    ];
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    for (name, bytes) in files {
        let path = out_dir.join(name);
        lvkd_core::io::write_atomic(&path, &bytes)?;
        run.output(path);
    }
    run.write(out_dir)?;
    Ok((rows, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(b: usize, l: usize, dice: f64) -> ReportRow {
        ReportRow {
            run_dir: PathBuf::from(format!("r{b}{l}")),
            model: format!("B{b}_l{l}"),
            num_blocks: b,
            layers_per_block: l,
            param_count: 1000 * b * l,
            mean_dice: Some(dice),
            mean_iou: Some(dice / (2.0 - dice)),
            afd_ed: Some(1.5),
            afd_es: Some(0.5),
        }
    }

    #[test]
    fn grid_has_table_layout() {
        let rows = vec![row(2, 1, 0.9), row(4, 3, 0.5)];
        let text = String::from_utf8(grid_csv(&rows, |r| r.mean_dice).unwrap()).unwrap();
        assert_eq!(
            text,
            "layers,B1,B2,B3,B4\nl1,,90,,\nl2,,,,\nl3,,,,50\nl4,,,,\n"
        );
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        let rows = vec![row(2, 1, 0.9), row(2, 1, 0.8)];
        assert!(grid_csv(&rows, |r| r.mean_dice).is_err());
    }

    #[test]
    fn reference_grid_round_numbers() {
        let text = String::from_utf8(reference_grid_csv(&GRID_DICE)).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("l1,78.92,86.5,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn methods_table_appends_own_rows() {
        let text = String::from_utf8(methods_csv(&[row(2, 1, 0.9)])).unwrap();
        assert_eq!(text.lines().count(), 1 + PHASE_METHODS.len() + 1);
        assert!(text.ends_with("B2_l1 (phantom),0.002M,1.5,0.5,this run\n"));
    }

    #[test]
    fn scaling_points_feed_the_fit() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ReportRow> = (1..=4).map(|b| row(b, 1, 0.8 + 0.02 * b as f64)).collect();
        let path = dir.path().join("points.csv");
        std::fs::write(&path, scaling_points_csv(&rows)).unwrap();
        let (fit, plot) = scaling_fit(&path, Some(MetricKind::OneMinusDice)).unwrap();
        assert_eq!(fit.points, 4);
        assert!(fit.slope > 0.0);
        assert!(fit.knee.is_some());
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 5);
        assert!(matches!(scaling_fit(&path, None), Err(CliError::Config(_))));
    }

    #[test]
    fn bounds_match_closed_forms() {
        let b = bounds(5.7, 0.801).unwrap();
        assert!((b.rmse_floor - 5.7 / 2f64.sqrt()).abs() < 1e-12);
        assert!((b.corr_ceiling - 0.801f64.sqrt()).abs() < 1e-12);
    }
}
