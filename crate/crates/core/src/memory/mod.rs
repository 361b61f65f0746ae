//! Named-tensor ring buffer used both as replay memory and rollout storage.
//!
//! Every registered tensor has geometry `[capacity × num_envs × dim]`. A call
//! to [`Memory::add_samples`] with `num_envs` rows fills one storage row; a
//! scoped writer may add fewer rows, which are placed at the current
//! environment offset, so several agents can fill one row together. The
//! write position therefore advances through flat `(row, env)` slots in
//! order, and valid transitions are always the flat prefix
//! `0..stored_count()` until the buffer wraps.

mod export;

use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;

pub use export::{ExportFormat, MemoryFile};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory capacity and num_envs must be positive")]
    Geometry,
    #[error("tensor `{0}` is already registered")]
    Duplicate(String),
    #[error("tensor `{name}` is registered with dim {existing} ({existing_dtype:?}), not {requested} ({requested_dtype:?})")]
    Conflict {
        name: String,
        existing: usize,
        existing_dtype: Dtype,
        requested: usize,
        requested_dtype: Dtype,
    },
    #[error("feature dim of `{0}` must be at least 1")]
    ZeroDim(String),
    #[error("unknown tensor `{0}`")]
    Unknown(String),
    #[error("batch is missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` batch has shape [{rows} x {cols}], expected [{expected_rows} x {expected_cols}]")]
    Shape {
        name: String,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("batch of {rows} rows does not fit the {free} env slots left in the current row")]
    Overflow { rows: usize, free: usize },
    #[error("memory is empty")]
    Empty,
    #[error("{0}")]
    Format(String),
    #[error("memory I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Storage interpretation of a tensor. Every value is held as `f64`;
/// booleans as 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    Bool,
    Int,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::Bool => "bool",
            Dtype::Int => "int",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "f64" => Some(Dtype::F64),
            "bool" => Some(Dtype::Bool),
            "int" => Some(Dtype::Int),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Storage {
    name: String,
    dim: usize,
    dtype: Dtype,
    data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Memory {
    capacity: usize,
    num_envs: usize,
    tensors: Vec<Storage>,
    cursor: usize,
    env_cursor: usize,
    filled: bool,
    rng: ChaCha8Rng,
}

/// A memory shared between agents. The synchronous trainer serializes access.
pub type SharedMemory = Arc<Mutex<Memory>>;

impl Memory {
    pub fn new(capacity: usize, num_envs: usize, seed: u64) -> Result<Self, MemoryError> {
        if capacity == 0 || num_envs == 0 {
            return Err(MemoryError::Geometry);
        }
        Ok(Self {
            capacity,
            num_envs,
            tensors: Vec::new(),
            cursor: 0,
            env_cursor: 0,
            filled: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn shared(self) -> SharedMemory {
        Arc::new(Mutex::new(self))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_filled(&self) -> bool {
        self.filled
    }

    /// Number of valid transitions.
    pub fn stored_count(&self) -> usize {
        if self.filled {
            self.capacity * self.num_envs
        } else {
            self.cursor * self.num_envs + self.env_cursor
        }
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn dim(&self, name: &str) -> Option<usize> {
        self.find(name).map(|i| self.tensors[i].dim)
    }

    pub fn dtype(&self, name: &str) -> Option<Dtype> {
        self.find(name).map(|i| self.tensors[i].dtype)
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    fn index(&self, name: &str) -> Result<usize, MemoryError> {
        self.find(name).ok_or_else(|| MemoryError::Unknown(name.to_string()))
    }

    /// Registers a zero-initialized tensor. Names must be unique.
    pub fn create_tensor(&mut self, name: &str, dim: usize, dtype: Dtype) -> Result<(), MemoryError> {
        if self.find(name).is_some() {
            return Err(MemoryError::Duplicate(name.to_string()));
        }
        if dim == 0 {
            return Err(MemoryError::ZeroDim(name.to_string()));
        }
        self.tensors.push(Storage {
            name: name.to_string(),
            dim,
            dtype,
            data: vec![0.0; self.capacity * self.num_envs * dim],
        });
        Ok(())
    }

    /// Registers `name` unless an identical registration exists; a
    /// registration with a different dim or dtype is an error. Used by agents
    /// that may share one memory.
    pub fn ensure_tensor(&mut self, name: &str, dim: usize, dtype: Dtype) -> Result<(), MemoryError> {
        match self.find(name) {
            None => self.create_tensor(name, dim, dtype),
            Some(i) => {
                let t = &self.tensors[i];
                if t.dim == dim && t.dtype == dtype {
                    Ok(())
                } else {
                    Err(MemoryError::Conflict {
                        name: name.to_string(),
                        existing: t.dim,
                        existing_dtype: t.dtype,
                        requested: dim,
                        requested_dtype: dtype,
                    })
                }
            }
        }
    }

    /// Writes one batch of transitions for every registered tensor.
    ///
    /// `batch` must name every registered tensor with `[k × dim]` rows where
    /// `k` fits the env slots left in the current storage row.
    pub fn add_samples(&mut self, batch: &[(&str, &Batch)]) -> Result<(), MemoryError> {
        let rows = batch.first().map(|(_, b)| b.rows()).ok_or(MemoryError::Empty)?;
        let free = self.num_envs - self.env_cursor;
        if rows == 0 || rows > free {
            return Err(MemoryError::Overflow { rows, free });
        }
        let mut sources = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let b = batch
                .iter()
                .find(|(n, _)| *n == t.name)
                .map(|(_, b)| *b)
                .ok_or_else(|| MemoryError::Missing(t.name.clone()))?;
            if b.rows() != rows || b.cols() != t.dim {
                return Err(MemoryError::Shape {
                    name: t.name.clone(),
                    rows: b.rows(),
                    cols: b.cols(),
                    expected_rows: rows,
                    expected_cols: t.dim,
                });
            }
            sources.push(b);
        }
        for (name, _) in batch {
            self.index(name)?;
        }
        let slot = self.cursor * self.num_envs + self.env_cursor;
        for (t, b) in self.tensors.iter_mut().zip(sources) {
            let dst = &mut t.data[slot * t.dim..(slot + rows) * t.dim];
            if t.dtype == Dtype::Bool {
                for (d, s) in dst.iter_mut().zip(b.data()) {
                    *d = if *s != 0.0 { 1.0 } else { 0.0 };
                }
            } else {
                dst.copy_from_slice(b.data());
            }
        }
        self.env_cursor += rows;
        if self.env_cursor == self.num_envs {
            self.env_cursor = 0;
            self.cursor += 1;
            if self.cursor == self.capacity {
                self.cursor = 0;
                self.filled = true;
            }
        }
        Ok(())
    }

    /// Raw storage of one tensor, `[capacity × num_envs × dim]` row-major.
    pub fn tensor(&self, name: &str) -> Result<&[f64], MemoryError> {
        Ok(&self.tensors[self.index(name)?].data)
    }

    /// Valid flat `(row, env)` slots drawn uniformly with replacement.
    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>, MemoryError> {
        let n = self.stored_count();
        if n == 0 {
            return Err(MemoryError::Empty);
        }
        Ok((0..batch_size).map(|_| self.rng.gen_range(0..n)).collect())
    }

    /// Gathers the given flat slots of each named tensor, in `names` order.
    pub fn gather(&self, names: &[&str], indices: &[usize]) -> Result<Vec<Batch>, MemoryError> {
        names
            .iter()
            .map(|name| {
                let t = &self.tensors[self.index(name)?];
                let mut data = Vec::with_capacity(indices.len() * t.dim);
                for &i in indices {
                    data.extend_from_slice(&t.data[i * t.dim..(i + 1) * t.dim]);
                }
                Ok(Batch::new(indices.len(), t.dim, data))
            })
            .collect()
    }

    /// Uniform sampling with replacement; the same slots are used for every
    /// requested tensor, so output row `j` is one transition across all of them.
    pub fn sample(&mut self, names: &[&str], batch_size: usize) -> Result<Vec<Batch>, MemoryError> {
        for name in names {
            self.index(name)?;
        }
        let idx = self.sample_indices(batch_size)?;
        self.gather(names, &idx)
    }

    /// A random permutation of all valid slots split into `num_minibatches`
    /// nearly equal parts (earlier parts take the remainder).
    pub fn sample_all_indices(&mut self, num_minibatches: usize) -> Result<Vec<Vec<usize>>, MemoryError> {
        let n = self.stored_count();
        if n == 0 {
            return Err(MemoryError::Empty);
        }
        let parts = num_minibatches.clamp(1, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut self.rng);
        let (base, extra) = (n / parts, n % parts);
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for p in 0..parts {
            let len = base + usize::from(p < extra);
            out.push(perm[start..start + len].to_vec());
            start += len;
        }
        Ok(out)
    }

    /// Every stored transition exactly once, shuffled into aligned minibatches.
    pub fn sample_all(&mut self, names: &[&str], num_minibatches: usize) -> Result<Vec<Vec<Batch>>, MemoryError> {
        for name in names {
            self.index(name)?;
        }
        self.sample_all_indices(num_minibatches)?
            .iter()
            .map(|idx| self.gather(names, idx))
            .collect()
    }

    /// All valid transitions of one tensor in storage order.
    pub fn transitions(&self, name: &str) -> Result<Batch, MemoryError> {
        let idx: Vec<usize> = (0..self.stored_count()).collect();
        Ok(self.gather(&[name], &idx)?.remove(0))
    }

    /// Forgets all stored transitions (rollout buffers reuse storage).
    pub fn clear(&mut self) {
        self.cursor = 0;
        self.env_cursor = 0;
        self.filled = false;
    }
}
