//! Metrics emission: RFC-4180 CSV (the primary contract) and an optional
//! JSON-lines mirror. Column order is fixed; float fields use the shortest
//! round-trip decimal rendering, so identical histories produce identical
//! bytes.

use std::fs;
use std::path::Path;

use fedcl_core::federation::RoundMetrics;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Serialize)]
struct Row<'a> {
    round: u64,
    training_state_index: usize,
    algorithm: &'a str,
    test_accuracy: f64,
    mean_client_loss: f64,
    generator_loss: f64,
    frozen_count: usize,
    wall_seconds: f64,
    seed: u64,
}

impl<'a> From<&'a RoundMetrics> for Row<'a> {
    fn from(m: &'a RoundMetrics) -> Self {
        Row {
            round: m.round,
            training_state_index: m.state_index,
            algorithm: m.algorithm.as_str(),
            test_accuracy: m.test_accuracy,
            mean_client_loss: m.mean_client_loss,
            generator_loss: m.generator_loss,
            frozen_count: m.frozen_count,
            wall_seconds: m.wall_seconds,
            seed: m.seed,
        }
    }
}

/// Renders a history as CSV text (header always present).
pub fn csv_string(history: &[RoundMetrics]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    if history.is_empty() {
        // serde-driven headers only appear with at least one record; write
        // them explicitly for the header-only case.
        writer.write_record([
            "round",
            "training_state_index",
            "algorithm",
            "test_accuracy",
            "mean_client_loss",
            "generator_loss",
            "frozen_count",
            "wall_seconds",
            "seed",
        ])?;
    }
    for m in history {
        writer.serialize(Row::from(m))?;
    }
    let bytes = writer.into_inner().expect("csv writer into_inner");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the CSV to `path`.
pub fn write_csv(history: &[RoundMetrics], path: &Path) -> Result<()> {
    fs::write(path, csv_string(history)?)?;
    Ok(())
}

/// Writes one JSON object per row.
pub fn write_jsonl(history: &[RoundMetrics], path: &Path) -> Result<()> {
    let mut out = String::new();
    for m in history {
        out.push_str(&serde_json::to_string(&Row::from(m))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
