//! Artifact reading and writing through the workspace manifest.

use ndarray::{Array2, ArrayView2};
use tdprobe_core::sae::SaeModel;
use tdprobe_core::store::{self, ActivationHeader, ActivationMatrix, Dtype, ReportTable, TrajectoryLog};

use crate::error::{CliError, Result};
use crate::manifest::Workspace;

pub fn read_actv(ws: &mut Workspace, path: &str) -> Result<ActivationMatrix> {
    let p = ws.require(path)?;
    Ok(store::read_activations(p)?)
}

pub fn read_trajectory(ws: &mut Workspace, path: &str) -> Result<TrajectoryLog> {
    let p = ws.require(path)?;
    Ok(store::load_trajectory(p)?)
}

pub fn read_sae(ws: &mut Workspace, path: &str) -> Result<SaeModel> {
    let p = ws.require(path)?;
    Ok(SaeModel::load(p)?)
}

pub fn write_actv(
    ws: &mut Workspace,
    rel: &str,
    values: &ArrayView2<f64>,
    run_id: &str,
    block: u32,
    source: &str,
    seed: u64,
) -> Result<()> {
    let mut header = ActivationHeader::for_matrix(values, Dtype::F64);
    header.run_id = run_id.to_string();
    header.block = block;
    header.source = source.to_string();
    header.seed = seed;
    store::write_activations(ws.prepare(rel)?, values, &header)?;
    ws.record(rel)
}

pub fn write_table(ws: &mut Workspace, rel: &str, table: &ReportTable) -> Result<()> {
    let text = table.to_csv_string()?;
    ws.write(rel, text.as_bytes())?;
    Ok(())
}

pub fn write_json(ws: &mut Workspace, rel: &str, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    ws.write(rel, text.as_bytes())?;
    Ok(())
}

/// Splits `a:b:c`-style arguments into exactly `n` parts.
pub fn split_arg<'a>(arg: &'a str, sep: char, n: usize, what: &str) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = arg.splitn(n, sep).collect();
    if parts.len() != n || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("expected {what}, got {arg:?}")));
    }
    Ok(parts)
}

/// Single-column view of a signal container as an `n x 1` matrix.
pub fn as_signal(m: &ActivationMatrix, path: &str) -> Result<Array2<f64>> {
    if m.dim() == 0 {
        return Err(CliError::Dependency(format!("{path} has no columns")));
    }
    Ok(m.values.clone())
}
