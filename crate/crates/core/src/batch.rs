use std::ops::Range;

use crate::tensor::{Tensor, TensorError};

/// Row-major `[rows × cols]` block of `f64` values.
///
/// The common currency between environments, memories and agents: one row
/// per sub-environment or per sampled transition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    /// Panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "batch of {rows}x{cols} needs {} values", rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    /// Builds a single-column batch.
    pub fn column(values: Vec<f64>) -> Self {
        let rows = values.len();
        Self::new(rows, 1, values)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Copies the rows in `range`.
    pub fn slice_rows(&self, range: Range<usize>) -> Batch {
        let rows = range.len();
        Batch::new(rows, self.cols, self.data[range.start * self.cols..range.end * self.cols].to_vec())
    }

    /// Stacks batches with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Batch]) -> Batch {
        let cols = parts.first().map_or(0, |b| b.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|b| b.data.len()).sum());
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "column mismatch in concat_rows");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Batch::new(rows, cols, data)
    }

    /// Gathers the given rows in order.
    pub fn select_rows(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Batch::new(indices.len(), self.cols, data)
    }

    /// First column interpreted as non-negative integer indices.
    pub fn indices(&self) -> Vec<usize> {
        self.iter_rows().map(|r| r[0] as usize).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.rows, self.cols], self.data.clone()).expect("batch geometry is consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Batch, TensorError> {
        match *t.shape() {
            [r, c] => Ok(Batch::new(r, c, t.data().to_vec())),
            [r] => Ok(Batch::new(r, 1, t.data().to_vec())),
            _ => Err(TensorError::Invalid {
                op: "batch",
                msg: format!("expected a 1-D or 2-D tensor, got {:?}", t.shape()),
            }),
        }
    }
}
