//! On-disk formats: observation JSON lines, learn results, TuneLoss traces
//! and binary training checkpoints.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use lossforge_core::linalg::Matrix;
use lossforge_core::trainer::TrainState;
use lossforge_core::tuneloss::TuneTrace;
use lossforge_core::{Hypercube, LearnLossResult, Observation};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub ve: f64,
    pub fv: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_ve: Option<Vec<f64>>,
    /// Row-major, one row per model parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub model_id: String,
}

impl From<&Observation> for ObservationRecord {
    fn from(o: &Observation) -> Self {
        ObservationRecord {
            ve: o.ve(),
            fv: o.fv().to_vec(),
            grad_ve: o.gradients().map(|g| g.grad_ve.clone()),
            jacobian: o.gradients().map(|g| g.jacobian.to_rows()),
            model_id: o.model_id().to_string(),
        }
    }
}

impl ObservationRecord {
    pub fn into_observation(self) -> lossforge_core::Result<Observation> {
        let obs = Observation::new(self.ve, self.fv, self.model_id)?;
        match (self.grad_ve, self.jacobian) {
            (None, None) => Ok(obs),
            (Some(g), Some(rows)) => {
                let k = obs.num_features();
                obs.with_gradients(g, Matrix::from_rows(&rows, k)?)
            }
            _ => Err(lossforge_core::Error::Invalid("grad_ve and jacobian must be given together".into())),
        }
    }
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    let mut out = String::new();
    for o in observations {
        out.push_str(&serde_json::to_string(&ObservationRecord::from(o)).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

/// Reads one observation per non-blank line.
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObservationRecord =
            serde_json::from_str(&line).map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec.into_observation().map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnRecord {
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub argmin_index: usize,
    pub cost: f64,
    pub qp_attempts: usize,
}

impl From<&LearnLossResult> for LearnRecord {
    fn from(r: &LearnLossResult) -> Self {
        LearnRecord { lambda: r.lambda.clone(), alpha: r.alpha, argmin_index: r.argmin_index, cost: r.cost_value, qp_attempts: r.qp_attempts }
    }
}

/// Parses `lo:hi` (or a single pinned value) per coordinate, comma
/// separated. A single entry applies to all `k` coordinates.
pub fn parse_feasible(spec: &str, k: usize) -> Result<Hypercube> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for p in &parts {
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| config_err(format!("bad number {s:?} in feasible spec")));
        match p.split_once(':') {
            Some((a, b)) => {
                lo.push(num(a)?);
                hi.push(num(b)?);
            }
            None => {
                let v = num(p)?;
                lo.push(v);
                hi.push(v);
            }
        }
    }
    if lo.len() == 1 && k > 1 {
        lo = vec![lo[0]; k];
        hi = vec![hi[0]; k];
    }
    if lo.len() != k {
        return Err(config_err(format!("feasible spec has {} coordinates, observations have {k} features", lo.len())));
    }
    Hypercube::new(lo, hi).map_err(|e| config_err(format!("feasible spec: {e}")))
}

/// `iteration, ve, train_loss, lambda_0..lambda_{k-1}, wall_ms`.
pub fn write_trace_csv(path: &Path, trace: &TuneTrace) -> Result<()> {
    let k = trace.feature_names.len();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_err(path, e))?;
    let mut header = vec!["iteration".to_string(), "ve".into(), "train_loss".into()];
    header.extend((0..k).map(|j| format!("lambda_{j}")));
    header.push("wall_ms".into());
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    for r in &trace.records {
        let mut row = vec![r.iteration.to_string(), r.ve.to_string(), r.train_loss.to_string()];
        row.extend(r.lambda.iter().map(f64::to_string));
        row.push(r.wall_ms.to_string());
        w.write_record(&row).map_err(|e| csv_write_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub ve: f64,
    pub train_loss: f64,
    pub lambda: Vec<f64>,
    pub wall_ms: f64,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let width = r.headers().map_err(|e| data_err(format!("{}: {e}", path.display())))?.len();
    if width < 4 {
        return Err(data_err(format!("{}: not a trace file", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| data_err(format!("{}: bad number {:?}", path.display(), &rec[i])));
        out.push(TraceRow {
            iteration: rec[0].parse().map_err(|_| data_err(format!("{}: bad iteration", path.display())))?,
            ve: num(1)?,
            train_loss: num(2)?,
            lambda: (3..width - 1).map(num).collect::<Result<_>>()?,
            wall_ms: num(width - 1)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub scenario: String,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub initial_observations: usize,
    pub config: serde_json::Value,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

fn csv_write_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => data_err(format!("{}: {other:?}", path.display())),
    }
}

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"LFCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// 16-byte header (magic, version, parameter count as little-endian u32),
/// then `theta`, `accumulators` as f64 and `epoch`, `rng_seed` as u64, all
/// little-endian.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let n = state.theta.len();
    let mut out = Vec::with_capacity(16 + 16 * n + 16);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in state.theta.iter().chain(&state.accumulators) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&state.epoch.to_le_bytes());
    out.extend_from_slice(&state.rng_seed.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(data_err("not a checkpoint (bad magic)"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != CHECKPOINT_VERSION {
        return Err(data_err(format!("unsupported checkpoint version {version}")));
    }
    let n = word(12) as usize;
    if bytes.len() != 16 + 16 * n + 16 {
        return Err(data_err(format!("checkpoint for {n} parameters has {} bytes", bytes.len())));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().expect("8 bytes"));
    let u = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let accumulators: Vec<f64> = (n..2 * n).map(f).collect();
    if accumulators.iter().any(|a| !(*a >= 0.0)) {
        return Err(data_err("checkpoint has negative or NaN accumulators"));
    }
    Ok(TrainState { theta: (0..n).map(f).collect(), accumulators, epoch: u(16 + 16 * n), rng_seed: u(24 + 16 * n) })
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&encode_checkpoint(state)).map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&fs::read(path).map_err(|e| HarnessError::io(path, e))?)
}
