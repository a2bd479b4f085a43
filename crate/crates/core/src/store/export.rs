use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{StorageBackend, StoreError};
use crate::fixed::Fixed;
use crate::gateway::SensorRecord;
use crate::nodes::{Field, RoomId};

/// One point of a chart series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp: u64,
    pub value: Fixed,
}

impl From<&SensorRecord> for SeriesPoint {
    fn from(r: &SensorRecord) -> Self {
        Self { timestamp: r.timestamp, value: r.value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format {other:?} (expected csv or json)")),
        }
    }
}

/// Simulation clock `H:MM:SS.mmm` for a millisecond timestamp.
pub fn clock(ms: u64) -> String {
    let (h, rest) = (ms / 3_600_000, ms % 3_600_000);
    format!("{h}:{:02}:{:02}.{:03}", rest / 60_000, rest % 60_000 / 1000, rest % 1000)
}

/// Writes the query result to `out`; returns the number of points.
/// CSV rows carry the raw millisecond timestamp, the same instant as a
/// simulation clock, and the value.
pub fn export(
    backend: &dyn StorageBackend,
    room: RoomId,
    field: Field,
    from: u64,
    to: u64,
    format: ExportFormat,
    out: &mut dyn Write,
) -> Result<usize, StoreError> {
    let records = backend.query(room, field, from, to)?;
    match format {
        ExportFormat::Csv => {
            let unit = field.unit();
            let mut text = String::from("timestamp,time,value\n");
            for r in &records {
                text.push_str(&format!("{},{},{}\n", r.timestamp, clock(r.timestamp), unit.render(r.value)));
            }
            out.write_all(text.as_bytes())?;
        }
        ExportFormat::Json => {
            let points: Vec<SeriesPoint> = records.iter().map(SeriesPoint::from).collect();
            serde_json::to_writer(&mut *out, &points).map_err(|e| StoreError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(records.len())
}
