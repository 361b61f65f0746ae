//! Columnar export of stored transitions.
//!
//! * CSV: one header row of `name[i]` columns (tensors in registration order),
//!   then one row per transition in storage order.
//! * Binary: the tensor checkpoint format, one `[transitions × dim]` tensor per
//!   memory tensor, named `name:dtype`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dtype, Memory, MemoryError};
use crate::batch::Batch;
use crate::tensor::{checkpoint, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Binary,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> ExportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ExportFormat::Csv,
            _ => ExportFormat::Binary,
        }
    }
}

/// Column-oriented contents of an exported memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFile {
    pub columns: Vec<(String, Dtype, Batch)>,
}

impl MemoryFile {
    pub fn transitions(&self) -> usize {
        self.columns.first().map_or(0, |(_, _, b)| b.rows())
    }

    /// Reads either format, detected from the file's leading bytes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let mut head = [0u8; 4];
        let n = File::open(path.as_ref())?.read(&mut head)?;
        if n == 4 && &head == checkpoint::MAGIC {
            Self::read_binary(path)
        } else {
            Self::read_csv(path)
        }
    }

    fn read_binary(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let tensors = checkpoint::load(path).map_err(|e| MemoryError::Format(e.to_string()))?;
        let columns = tensors
            .into_iter()
            .map(|(tagged, t)| {
                let (name, dtype) = tagged
                    .rsplit_once(':')
                    .and_then(|(n, d)| Dtype::parse(d).map(|d| (n.to_string(), d)))
                    .ok_or_else(|| MemoryError::Format(format!("bad column tag `{tagged}`")))?;
                let b = Batch::from_tensor(&t).map_err(|e| MemoryError::Format(e.to_string()))?;
                Ok((name, dtype, b))
            })
            .collect::<Result<_, MemoryError>>()?;
        Ok(Self { columns })
    }

    fn read_csv(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header = reader.headers().map_err(|e| MemoryError::Format(e.to_string()))?.clone();
        // group consecutive `name[i]` columns
        let mut layout: Vec<(String, usize)> = Vec::new();
        for h in header.iter() {
            let name = h
                .strip_suffix(']')
                .and_then(|s| s.rsplit_once('['))
                .map(|(n, _)| n)
                .ok_or_else(|| MemoryError::Format(format!("bad CSV column `{h}`")))?;
            match layout.last_mut() {
                Some((n, d)) if n == name => *d += 1,
                _ => layout.push((name.to_string(), 1)),
            }
        }
        let mut data: Vec<Vec<f64>> = layout.iter().map(|_| Vec::new()).collect();
        let mut rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| MemoryError::Format(e.to_string()))?;
            let mut fields = record.iter();
            for (col, (_, dim)) in data.iter_mut().zip(&layout) {
                for _ in 0..*dim {
                    let f = fields.next().ok_or_else(|| MemoryError::Format("short CSV row".into()))?;
                    col.push(f.parse().map_err(|_| MemoryError::Format(format!("bad number `{f}`")))?);
                }
            }
            rows += 1;
        }
        let columns = layout
            .into_iter()
            .zip(data)
            .map(|((name, dim), d)| (name, Dtype::F64, Batch::new(rows, dim, d)))
            .collect();
        Ok(Self { columns })
    }
}

impl Memory {
    pub fn to_file(&self) -> Result<MemoryFile, MemoryError> {
        if self.stored_count() == 0 {
            return Err(MemoryError::Empty);
        }
        let columns = self
            .tensors
            .iter()
            .map(|t| Ok((t.name.clone(), t.dtype, self.transitions(&t.name)?)))
            .collect::<Result<_, MemoryError>>()?;
        Ok(MemoryFile { columns })
    }

    pub fn export(&self, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), MemoryError> {
        let file = self.to_file()?;
        match format {
            ExportFormat::Binary => {
                let tensors: Vec<(String, Tensor)> = file
                    .columns
                    .iter()
                    .map(|(n, d, b)| (format!("{n}:{}", d.as_str()), b.to_tensor()))
                    .collect();
                checkpoint::save(path, &tensors).map_err(|e| MemoryError::Format(e.to_string()))
            }
            ExportFormat::Csv => {
                let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
                let header: Vec<String> = file
                    .columns
                    .iter()
                    .flat_map(|(n, _, b)| (0..b.cols()).map(move |i| format!("{n}[{i}]")))
                    .collect();
                w.write_record(&header).map_err(|e| MemoryError::Format(e.to_string()))?;
                for r in 0..file.transitions() {
                    let row: Vec<String> = file
                        .columns
                        .iter()
                        .flat_map(|(_, _, b)| b.row(r).iter().map(|v| v.to_string()))
                        .collect();
                    w.write_record(&row).map_err(|e| MemoryError::Format(e.to_string()))?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }

    /// Rebuilds a single-env memory holding exactly the exported transitions.
    pub fn import(path: impl AsRef<Path>, seed: u64) -> Result<Memory, MemoryError> {
        let file = MemoryFile::read(path)?;
        let n = file.transitions();
        if n == 0 {
            return Err(MemoryError::Empty);
        }
        let mut mem = Memory::new(n, 1, seed)?;
        for (name, dtype, b) in &file.columns {
            mem.create_tensor(name, b.cols(), *dtype)?;
            let slot = mem.index(name)?;
            mem.tensors[slot].data.copy_from_slice(b.data());
        }
        mem.filled = true;
        Ok(mem)
    }
}
