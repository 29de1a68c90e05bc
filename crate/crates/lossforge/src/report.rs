//! Run reports and their CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lossforge_core::trainer::TrainState;
use lossforge_core::tuneloss::TuneTrace;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{data_err, HarnessError, Result};
use crate::formats::{save_checkpoint, write_json, write_observations, write_trace_csv, TraceSidecar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based: training runs consumed, epochs, or observations, depending
    /// on the scenario.
    pub step: usize,
    pub val: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// Lowest validation metric so far, paired with the test metric of the
    /// model that achieved it (earliest on ties).
    pub fn best_so_far(&self) -> Vec<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        self.points
            .iter()
            .map(|p| {
                match best {
                    Some((v, _)) if !(p.val < v) => {}
                    _ => best = Some((p.val, p.test)),
                }
                best.expect("set on the first point")
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerSample {
    pub seed: u64,
    pub epoch: usize,
    pub x: f64,
    pub r: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SeedReport {
    pub seed: u64,
    pub curves: Vec<Curve>,
    pub trace: Option<TuneTrace>,
    pub regularizer: Vec<RegularizerSample>,
    pub metrics: BTreeMap<String, f64>,
    pub final_state: Option<TrainState>,
    /// Set when the seed's pipeline failed; everything above holds what was
    /// completed before the failure.
    pub error: Option<String>,
}

/// Feature names, the resolved feasible box and how random search samples
/// each coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSetup {
    pub feature_names: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub sampling: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub setup: Option<ResolvedSetup>,
    pub seeds: Vec<SeedReport>,
}

/// One line of `curves.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    pub step: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    pub best_so_far_val: f64,
    pub best_so_far_test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub algorithm: String,
    pub step: usize,
    pub seeds: usize,
    pub mean_best_val: f64,
    pub median_best_val: f64,
    pub mean_best_test: f64,
    pub median_best_test: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

impl RunReport {
    pub fn scenario_name(&self) -> &'static str {
        self.config.scenario.name()
    }

    pub fn curves(&self) -> impl Iterator<Item = &Curve> {
        self.seeds.iter().flat_map(|s| s.curves.iter())
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        curve_rows(self.scenario_name(), self.curves())
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.curve_rows())
    }

    /// Best-so-far validation metric at `step` for every seed that reached
    /// it.
    pub fn best_val_at(&self, algorithm: &str, step: usize) -> Vec<f64> {
        self.curves()
            .filter(|c| c.algorithm == algorithm && c.points.len() >= step && step >= 1)
            .map(|c| c.best_so_far()[step - 1].0)
            .collect()
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.seeds.iter().filter_map(|s| s.error.as_deref().map(|e| (s.seed, e))).collect()
    }
}

pub fn curve_rows<'a>(scenario: &str, curves: impl Iterator<Item = &'a Curve>) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for c in curves {
        for (p, (bv, bt)) in c.points.iter().zip(c.best_so_far()) {
            rows.push(CurveRow {
                scenario: scenario.to_string(),
                algorithm: c.algorithm.clone(),
                seed: c.seed,
                step: p.step,
                val_metric: p.val,
                test_metric: p.test,
                best_so_far_val: bv,
                best_so_far_test: bt,
            });
        }
    }
    rows
}

/// Groups rows back into curves, keeping first-seen order.
pub fn curves_from_rows(rows: &[CurveRow]) -> Vec<Curve> {
    let mut out: Vec<Curve> = Vec::new();
    for r in rows {
        let point = CurvePoint { step: r.step, val: r.val_metric, test: r.test_metric };
        match out.last_mut() {
            Some(c) if c.algorithm == r.algorithm && c.seed == r.seed => c.points.push(point),
            _ => out.push(Curve { algorithm: r.algorithm.clone(), seed: r.seed, points: vec![point] }),
        }
    }
    out
}

/// Mean and median over seeds of the best-so-far metrics, per algorithm
/// and step.
pub fn summarize(rows: &[CurveRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.scenario.clone(), r.algorithm.clone(), r.step)).or_default();
        g.0.push(r.best_so_far_val);
        g.1.push(r.best_so_far_test);
    }
    groups
        .into_iter()
        .map(|((scenario, algorithm, step), (v, t))| SummaryRow {
            scenario,
            algorithm,
            step,
            seeds: v.len(),
            mean_best_val: mean(&v),
            median_best_val: median(&v),
            mean_best_test: mean(&t),
            median_best_test: median(&t),
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => data_err(format!("{}: {other:?}", path.display())),
    }
}

pub const CURVES_HEADER: [&str; 8] =
    ["scenario", "algorithm", "seed", "step", "val_metric", "test_metric", "best_so_far_val", "best_so_far_test"];
pub const SUMMARY_HEADER: [&str; 8] =
    ["scenario", "algorithm", "step", "seeds", "mean_best_val", "median_best_val", "mean_best_test", "median_best_test"];
pub const REGULARIZER_HEADER: [&str; 5] = ["scenario", "seed", "epoch", "x", "r"];
pub const METRICS_HEADER: [&str; 4] = ["scenario", "seed", "metric", "value"];

#[derive(Serialize)]
struct RegularizerRow<'a> {
    scenario: &'a str,
    seed: u64,
    epoch: usize,
    x: f64,
    r: f64,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    scenario: &'a str,
    seed: u64,
    metric: &'a str,
    value: f64,
}

/// Writes `curves.csv`, `summary.csv`, `learned_regularizer.csv`,
/// `seed_metrics.csv`, `config.json` and `config.toml` into `out_dir`,
/// plus per-seed traces (and checkpoints or observations when enabled).
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let scenario = report.scenario_name();
    let rows = report.curve_rows();
    write_csv(&out_dir.join("curves.csv"), &CURVES_HEADER, &rows)?;
    write_csv(&out_dir.join("summary.csv"), &SUMMARY_HEADER, &summarize(&rows))?;
    let reg: Vec<RegularizerRow> = report
        .seeds
        .iter()
        .flat_map(|s| s.regularizer.iter())
        .map(|r| RegularizerRow { scenario, seed: r.seed, epoch: r.epoch, x: r.x, r: r.r })
        .collect();
    write_csv(&out_dir.join("learned_regularizer.csv"), &REGULARIZER_HEADER, &reg)?;
    let mut metrics: Vec<MetricRow> = Vec::new();
    for s in &report.seeds {
        for (k, v) in &s.metrics {
            metrics.push(MetricRow { scenario, seed: s.seed, metric: k, value: *v });
        }
        if s.error.is_some() {
            metrics.push(MetricRow { scenario, seed: s.seed, metric: "failed", value: 1.0 });
        }
    }
    write_csv(&out_dir.join("seed_metrics.csv"), &METRICS_HEADER, &metrics)?;

    let config_json = serde_json::to_value(&report.config).expect("configs serialize");
    let errors: BTreeMap<String, &str> = report.failures().into_iter().map(|(s, e)| (s.to_string(), e)).collect();
    write_json(
        &out_dir.join("config.json"),
        &serde_json::json!({ "config": config_json, "resolved": report.setup, "seeds": report.config.seeds(), "errors": errors }),
    )?;
    let toml_path = out_dir.join("config.toml");
    fs::write(&toml_path, report.config.to_toml()).map_err(|e| HarnessError::io(&toml_path, e))?;

    for s in &report.seeds {
        if let Some(trace) = &s.trace {
            let dir = out_dir.join("traces");
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            write_trace_csv(&dir.join(format!("seed_{}.csv", s.seed)), trace)?;
            let sidecar = TraceSidecar {
                scenario: scenario.to_string(),
                seed: s.seed,
                feature_names: trace.feature_names.clone(),
                initial_observations: trace.initial.len(),
                config: config_json.clone(),
            };
            write_json(&dir.join(format!("seed_{}.json", s.seed)), &sidecar)?;
            if report.config.save_observations {
                let dir = out_dir.join("observations");
                fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
                write_observations(&dir.join(format!("seed_{}.jsonl", s.seed)), &trace.observations())?;
            }
        }
        if let (true, Some(state)) = (report.config.save_checkpoints, &s.final_state) {
            let dir = out_dir.join("checkpoints");
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            save_checkpoint(&dir.join(format!("seed_{}.bin", s.seed)), state)?;
        }
    }
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
