use std::path::Path;

use serde::Serialize;

use super::RunError;
use crate::memory::MemoryFile;

/// Statistics of one component of one exported memory tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub tensor: String,
    pub dim: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-component statistics of a memory file written by `Memory::export`,
/// in either format. Empty files yield no rows.
pub fn memory_stats(path: impl AsRef<Path>) -> Result<Vec<ColumnStats>, RunError> {
    let file = MemoryFile::read(path)?;
    let mut out = Vec::new();
    for (name, _, batch) in &file.columns {
        let n = batch.rows();
        if n == 0 {
            continue;
        }
        for dim in 0..batch.cols() {
            let col: Vec<f64> = batch.iter_rows().map(|r| r[dim]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            out.push(ColumnStats {
                tensor: name.clone(),
                dim,
                mean,
                std: var.sqrt(),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(out)
}

pub fn write_memory_stats_csv(path: impl AsRef<Path>, stats: &[ColumnStats]) -> Result<(), RunError> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| RunError::Log(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for s in stats {
        w.serialize(s).map_err(to_err)?;
    }
    w.flush().map_err(RunError::io(path))
}
