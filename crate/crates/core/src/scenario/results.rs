use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ppd::StaticSolution;
use crate::sim::SimulationResult;

/// Shortest round-trip representation, exponent form for very small or
/// large magnitudes.
pub(crate) fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Write a CSV file with `header` and pre-formatted `rows`.
pub fn write_trace_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `trace.csv` (one row per round), `timesteps.csv` (one row per load
/// timestep) and `summary.json` in `dir`.
pub fn write_results(result: &SimulationResult, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;

    let n_bus_cols = result
        .rounds
        .first()
        .and_then(|r| r.buses.as_ref())
        .map_or(0, |b| b.len());
    let mut header: Vec<String> = ["round", "timestep", "time_s", "mismatch_norm", "n_active"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 1..=n_bus_cols {
        header.extend([format!("v_{j}"), format!("q_{j}"), format!("lambda_{j}")]);
    }
    write_trace_csv(
        &dir.join("trace.csv"),
        &header,
        result.rounds.iter().map(|r| {
            let mut row = vec![
                r.round.to_string(),
                r.timestep.to_string(),
                num(r.time_s),
                num(r.mismatch_norm),
                r.n_active.to_string(),
            ];
            if let Some(b) = &r.buses {
                for x in b {
                    row.extend([num(x.v), num(x.q), num(x.lambda)]);
                }
            }
            row
        }),
    )?;

    let header: Vec<String> = [
        "timestep",
        "mean_mismatch",
        "final_mismatch",
        "headroom_kvar",
        "outage",
        "lin_ac_gap",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_trace_csv(
        &dir.join("timesteps.csv"),
        &header,
        result.timesteps.iter().map(|s| {
            vec![
                s.timestep.to_string(),
                num(s.mean_mismatch),
                num(s.final_mismatch),
                num(s.headroom_kvar),
                s.outage.to_string(),
                s.lin_ac_gap.map(num).unwrap_or_default(),
            ]
        }),
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        strategy: &'a str,
        seed: u64,
        rounds: usize,
        timesteps: usize,
        mean_mismatch: Option<f64>,
        outage_mean_mismatch: Option<f64>,
        max_lin_ac_gap: Option<f64>,
        final_state: &'a crate::sim::FinalState,
        config: &'a serde_json::Value,
    }
    let max_gap = result
        .timesteps
        .iter()
        .filter_map(|s| s.lin_ac_gap)
        .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))));
    write_json(
        &dir.join("summary.json"),
        &Summary {
            strategy: result.strategy.name(),
            seed: result.seed,
            rounds: result.rounds.len(),
            timesteps: result.timesteps.len(),
            mean_mismatch: result.average_mismatch(|_| true),
            outage_mean_mismatch: result.average_mismatch(|s| s.outage),
            max_lin_ac_gap: max_gap,
            final_state: &result.final_state,
            config: &result.config,
        },
    )
}

/// `trace.csv` of a static solve plus a caller-assembled `summary.json`.
pub fn write_static_results(
    solution: &StaticSolution,
    summary: &serde_json::Value,
    dir: &Path,
) -> Result<()> {
    ensure_dir(dir)?;
    let header: Vec<String> = ["k", "mismatch_norm", "r_v", "r_q", "r_lambda"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_trace_csv(
        &dir.join("trace.csv"),
        &header,
        solution.trace.iter().map(|r| {
            vec![
                r.k.to_string(),
                num(r.mismatch_norm),
                num(r.residuals.r_v),
                num(r.residuals.r_q),
                num(r.residuals.r_lambda),
            ]
        }),
    )?;
    write_json(&dir.join("summary.json"), summary)
}
