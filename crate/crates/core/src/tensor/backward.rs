use std::collections::{HashMap, HashSet};

use super::ops::{gemm, Pairing};
use super::{Op, Result, Tensor, TensorError, TensorId};

/// Gradients of the leaves reached by one backward pass, keyed by tensor id.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: HashMap<TensorId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros if the backward pass never reached it.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn add_into(slot: &mut HashMap<TensorId, Vec<f64>>, t: &Tensor, g: Vec<f64>) {
    match slot.get_mut(&t.id()) {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => {
            slot.insert(t.id(), g);
        }
    }
}

/// Sums a full-size adjoint back onto the operand's own shape.
fn reduce_to(full: Vec<f64>, target_len: usize, index: impl Fn(usize) -> usize) -> Vec<f64> {
    if full.len() == target_len {
        return full;
    }
    let mut out = vec![0.0; target_len];
    for (i, g) in full.into_iter().enumerate() {
        out[index(i)] += g;
    }
    out
}

impl Tensor {
    /// Back-propagates from this scalar through the recorded graph.
    ///
    /// Leaf gradients are added to each leaf's `grad` field and also returned.
    pub fn backward(&self) -> Result<Gradients> {
        if !self.shape().is_empty() {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return Ok(out);
        }

        // Reachable gradient-carrying tensors; ids are creation-ordered, so
        // descending id is a reverse topological order.
        let mut seen: HashSet<TensorId> = HashSet::new();
        let mut order: Vec<Tensor> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                stack.extend(node.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<TensorId, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in &order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    t.accumulate_grad(&g);
                    out.grads.insert(t.id(), g);
                }
                Some(node) => {
                    for (parent, pg) in node.parents.iter().zip(local_grads(t, &node.op, &node.parents, &g)) {
                        if let Some(pg) = pg {
                            if parent.requires_grad() {
                                add_into(&mut pending, parent, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Vector-Jacobian products of one node with respect to each parent.
fn local_grads(out: &Tensor, op: &Op, parents: &[Tensor], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let y = out.data();
    let want = |i: usize| parents.get(i).is_some_and(|p| p.requires_grad());
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Minimum => {
            let (a, b) = (&parents[0], &parents[1]);
            let (pairing, _) = Pairing::resolve(op.name(), a.shape(), b.shape())
                .expect("shapes validated during forward");
            let (ad, bd) = (a.data(), b.data());
            let ai = |i| pairing.lhs_index(i);
            let bi = |i| pairing.rhs_index(i);
            let da = want(0).then(|| {
                let full = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let (x, z) = (ad[ai(i)], bd[bi(i)]);
                        match op {
                            Op::Add | Op::Sub => gi,
                            Op::Mul => gi * z,
                            Op::Div => gi / z,
                            _ => {
                                if x <= z {
                                    gi
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                reduce_to(full, a.numel(), ai)
            });
            let db = want(1).then(|| {
                let full = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let (x, z) = (ad[ai(i)], bd[bi(i)]);
                        match op {
                            Op::Add => gi,
                            Op::Sub => -gi,
                            Op::Mul => gi * x,
                            Op::Div => -gi * x / (z * z),
                            _ => {
                                if x <= z {
                                    0.0
                                } else {
                                    gi
                                }
                            }
                        }
                    })
                    .collect();
                reduce_to(full, b.numel(), bi)
            });
            vec![da, db]
        }
        Op::MatMul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            // dA = G · Bᵀ, dB = Aᵀ · G
            let da = want(0).then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, n, 1, b.data(), 1, n, &mut d);
                d
            });
            let db = want(1).then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, a.data(), 1, k, g, n, 1, &mut d);
                d
            });
            vec![da, db]
        }
        Op::Neg => vec![Some(g.iter().map(|v| -v).collect())],
        Op::Scale(c) => vec![Some(g.iter().map(|v| c * v).collect())],
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::Tanh => vec![Some(g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect())],
        Op::Relu => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }).collect())]
        }
        Op::Exp => vec![Some(g.iter().zip(y).map(|(gi, yi)| gi * yi).collect())],
        Op::Log => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(gi, xi)| gi / xi).collect())]
        }
        Op::Square => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(gi, xi)| 2.0 * gi * xi).collect())]
        }
        Op::Sqrt => vec![Some(g.iter().zip(y).map(|(gi, yi)| gi / (2.0 * yi)).collect())],
        Op::Clamp { lo, hi } => {
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi > *lo && xi < *hi { *gi } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Elementwise(df) => {
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect(),
            )]
        }
        Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::Mean => {
            let n = parents[0].numel();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::SumLast => {
            let n = *parents[0].shape().last().expect("checked in forward");
            vec![Some(g.iter().flat_map(|&gi| std::iter::repeat(gi).take(n)).collect())]
        }
        Op::Softmax => {
            let n = *out.shape().last().expect("checked in forward");
            let mut d = Vec::with_capacity(y.len());
            for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                d.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
            }
            vec![Some(d)]
        }
        Op::LogSoftmax => {
            let n = *out.shape().last().expect("checked in forward");
            let mut d = Vec::with_capacity(y.len());
            for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
                let total: f64 = gr.iter().sum();
                d.extend(gr.iter().zip(yr).map(|(gi, yi)| gi - yi.exp() * total));
            }
            vec![Some(d)]
        }
        Op::GatherRows(idx) => {
            let cols = parents[0].shape()[1];
            let mut d = vec![0.0; parents[0].numel()];
            for (r, (&c, gi)) in idx.iter().zip(g).enumerate() {
                d[r * cols + c] += gi;
            }
            vec![Some(d)]
        }
        Op::Concat => {
            let rows = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            parents
                .iter()
                .map(|p| {
                    let w = p.shape()[1];
                    let d = p.requires_grad().then(|| {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        d
                    });
                    offset += w;
                    d
                })
                .collect()
        }
        Op::SliceCols { start } => {
            let (rows, cols) = (parents[0].shape()[0], parents[0].shape()[1]);
            let w = out.shape()[1];
            let mut d = vec![0.0; rows * cols];
            for r in 0..rows {
                d[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            vec![Some(d)]
        }
        Op::Broadcast => {
            let inner = parents[0].numel();
            vec![Some(reduce_to(g.to_vec(), inner, |i| i % inner))]
        }
    }
}
