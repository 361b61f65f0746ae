use std::sync::Arc;

use super::{numel, ElementwiseDerivative, Op, Result, Tensor, TensorError};

/// How the two operands of a binary elementwise op line up with the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pairing {
    Same,
    LhsScalar,
    RhsScalar,
    /// rhs shape is a suffix of lhs; rhs repeats every `inner` elements.
    RhsInner(usize),
    LhsInner(usize),
}

impl Pairing {
    pub(crate) fn resolve(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<(Pairing, Vec<usize>)> {
        if lhs == rhs {
            return Ok((Pairing::Same, lhs.to_vec()));
        }
        if rhs.is_empty() {
            return Ok((Pairing::RhsScalar, lhs.to_vec()));
        }
        if lhs.is_empty() {
            return Ok((Pairing::LhsScalar, rhs.to_vec()));
        }
        if rhs.len() < lhs.len() && lhs.ends_with(rhs) {
            return Ok((Pairing::RhsInner(numel(rhs)), lhs.to_vec()));
        }
        if lhs.len() < rhs.len() && rhs.ends_with(lhs) {
            return Ok((Pairing::LhsInner(numel(lhs)), rhs.to_vec()));
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }

    #[inline]
    pub(crate) fn lhs_index(self, i: usize) -> usize {
        match self {
            Pairing::LhsScalar => 0,
            Pairing::LhsInner(n) => i % n,
            _ => i,
        }
    }

    #[inline]
    pub(crate) fn rhs_index(self, i: usize) -> usize {
        match self {
            Pairing::RhsScalar => 0,
            Pairing::RhsInner(n) => i % n,
            _ => i,
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]` with arbitrary element strides on both inputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (pairing, shape) = Pairing::resolve(op.name(), self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let data = match pairing {
            Pairing::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..numel(&shape))
                .map(|i| f(a[pairing.lhs_index(i)], b[pairing.rhs_index(i)]))
                .collect(),
        };
        Ok(Tensor::from_op(shape, data, op, &[self, other]))
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, op, &[self])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Minimum, f64::min)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), k, 1, other.data(), n, 1, &mut out);
        Ok(Tensor::from_op(vec![m, n], out, Op::MatMul, &[self, other]))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Op::Scale(c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp)
    }

    /// Natural logarithm; negative inputs are a domain error.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(&v) = self.data().iter().find(|v| **v < 0.0) {
            return Err(TensorError::Domain { op: "log", value: v });
        }
        Ok(self.unary(Op::Log, f64::ln))
    }

    pub fn square(&self) -> Tensor {
        self.unary(Op::Square, |x| x * x)
    }

    /// Square root; negative inputs are a domain error.
    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(&v) = self.data().iter().find(|v| **v < 0.0) {
            return Err(TensorError::Domain { op: "sqrt", value: v });
        }
        Ok(self.unary(Op::Sqrt, f64::sqrt))
    }

    /// Clamps into `[lo, hi]`. The derivative is 1 strictly inside and 0 elsewhere.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(TensorError::Invalid {
                op: "clamp",
                msg: format!("empty interval [{lo}, {hi}]"),
            });
        }
        Ok(self.unary(Op::Clamp { lo, hi }, |x| x.clamp(lo, hi)))
    }

    /// Applies `f` elementwise with the caller-supplied derivative `df(x, f(x))`.
    pub fn map_elementwise(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let rule: ElementwiseDerivative = Arc::new(df);
        self.unary(Op::Elementwise(rule), f)
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::Sum, &[self])
    }

    /// Mean of all elements, shape `[]`.
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "mean of an empty tensor".into(),
            });
        }
        let s: f64 = self.data().iter().sum::<f64>() / self.numel() as f64;
        Ok(Tensor::from_op(Vec::new(), vec![s], Op::Mean, &[self]))
    }

    fn last_dim(&self, op: &'static str) -> Result<usize> {
        match self.shape().last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(TensorError::Invalid {
                op,
                msg: format!("needs a non-empty last axis, got shape {:?}", self.shape()),
            }),
        }
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&self) -> Result<Tensor> {
        let n = self.last_dim("sum_last")?;
        let data = self.data().chunks(n).map(|r| r.iter().sum()).collect();
        let shape = self.shape()[..self.shape().len() - 1].to_vec();
        Ok(Tensor::from_op(shape, data, Op::SumLast, &[self]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let n = self.last_dim("softmax")?;
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - max).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= z);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Softmax, &[self]))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let n = self.last_dim("log_softmax")?;
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::LogSoftmax, &[self]))
    }

    /// Picks `self[i, indices[i]]` from a `[rows, cols]` tensor, giving shape `[rows]`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != indices.len() {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: s.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let cols = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {cols} columns"),
            });
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| self.data()[r * cols + c])
            .collect();
        Ok(Tensor::from_op(
            vec![s[0]],
            data,
            Op::GatherRows(indices.into()),
            &[self],
        ))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let rows = match first.shape() {
            [r, _] => *r,
            other => {
                return Err(TensorError::Invalid {
                    op: "concat",
                    msg: format!("expects 2-D inputs, got {other:?}"),
                })
            }
        };
        for p in parts {
            if p.shape().len() != 2 || p.shape()[0] != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let w = p.shape()[1];
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        Ok(Tensor::from_op(vec![rows, total], data, Op::Concat, parts))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (rows, cols) = match *self.shape() {
            [r, c] if start < end && end <= c => (r, c),
            _ => {
                return Err(TensorError::Invalid {
                    op: "slice_cols",
                    msg: format!("columns {start}..{end} of shape {:?}", self.shape()),
                })
            }
        };
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&self.data()[r * cols + start..r * cols + end]);
        }
        Ok(Tensor::from_op(vec![rows, w], data, Op::SliceCols { start }, &[self]))
    }

    /// Repeats `self` along new leading axes so that it takes `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let ok = shape.ends_with(self.shape()) || self.shape().is_empty();
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let inner = self.numel();
        let data = (0..numel(shape)).map(|i| self.data()[i % inner]).collect();
        Ok(Tensor::from_op(shape.to_vec(), data, Op::Broadcast, &[self]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape,
            &[self],
        ))
    }
}
