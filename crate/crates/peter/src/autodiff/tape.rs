//! Wengert tape: operations are recorded in forward order and replayed in
//! reverse for the backward pass. Node inputs always precede the node, so a
//! single reverse sweep visits every node exactly once and accumulates (never
//! overwrites) gradients, which makes shared sub-expressions come out right.

use super::{AutodiffError, Tensor};

/// Handle to a tensor recorded on a tape. Only meaningful for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Transpose {
        x: TensorId,
    },
    /// Row-wise softmax; covers both the masked and unmasked case since the
    /// backward rule only needs the output (masked cells are exactly zero).
    RowSoftmax {
        x: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        /// Per-row (mean, 1/std) saved from the forward pass.
        row_stats: Vec<(f64, f64)>,
    },
    EmbeddingLookup {
        table: TensorId,
        ids: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<TensorId>,
    },
    ConcatCols {
        parts: Vec<TensorId>,
    },
    SliceRows {
        x: TensorId,
        start: usize,
    },
    RepeatRows {
        row: TensorId,
    },
    GatherPerRow {
        x: TensorId,
        cols: Vec<usize>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    AddN {
        parts: Vec<TensorId>,
    },
    Relu {
        x: TensorId,
    },
    Sigmoid {
        x: TensorId,
    },
    Log {
        x: TensorId,
    },
    Scale {
        x: TensorId,
        c: f64,
    },
    ClampMin {
        x: TensorId,
        c: f64,
    },
    Sum {
        x: TensorId,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
    tracked: bool,
}

/// Single-threaded reverse-mode tape. Create one per forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op, tracked: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            op,
            tracked,
        });
        id
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    /// Values of a recorded tensor.
    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.node(id).tensor
    }

    /// Scalar value convenience for shape-[1] nodes.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let t = self.value(id);
        debug_assert_eq!(t.numel(), 1);
        t.values()[0]
    }

    /// Gradient of a recorded tensor, populated by [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).tensor.grad()
    }

    /// Record a constant input; gradient is still computed but the node is
    /// not marked as a trainable parameter.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Leaf, false)
    }

    /// Record a trainable parameter by copying its current values.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        let copy = Tensor::new(t.shape().to_vec(), t.values().to_vec());
        self.push(copy, Op::Leaf, true)
    }

    pub fn is_tracked(&self, id: TensorId) -> bool {
        self.node(id).tracked
    }

    fn check_2d(&self, op: &'static str, id: TensorId) -> Result<(usize, usize), AutodiffError> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(AutodiffError::BadShape {
                op,
                expected: "a 2-d tensor",
                got: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        let (m, k) = self.check_2d("matmul", a)?;
        let (k2, n) = self.check_2d("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(
            self.value(a).values(),
            self.value(b).values(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::Matmul { a, b }, false))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let (r, c) = self.check_2d("transpose", x)?;
        let xv = self.value(x).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(Tensor::matrix(c, r, out), Op::Transpose { x }, false))
    }

    /// Row-wise softmax with an additive attention mask. A mask entry of 0
    /// allows attending; any non-zero entry (the `MASK_NEG` sentinel) forbids
    /// it and the corresponding weight is exactly 0. Rows are stabilized by
    /// subtracting the row max over allowed cells.
    pub fn masked_softmax(
        &mut self,
        scores: TensorId,
        mask: &Tensor,
    ) -> Result<TensorId, AutodiffError> {
        let (r, c) = self.check_2d("masked_softmax", scores)?;
        if mask.shape() != [r, c] {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_softmax",
                lhs: vec![r, c],
                rhs: mask.shape().to_vec(),
            });
        }
        let xv = self.value(scores).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mrow = &mask.values()[i * c..(i + 1) * c];
            softmax_row(row, Some(mrow), &mut out[i * c..(i + 1) * c])
                .map_err(|_| AutodiffError::FullyMaskedRow { row: i })?;
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::RowSoftmax { x: scores }, false))
    }

    /// Row-wise softmax without masking.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let (r, c) = self.check_2d("softmax_rows", x)?;
        let xv = self.value(x).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&xv[i * c..(i + 1) * c], None, &mut out[i * c..(i + 1) * c])
                .expect("unmasked row cannot be fully masked");
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::RowSoftmax { x }, false))
    }

    /// Per-row layer normalization followed by the elementwise affine
    /// transform `gain * x_hat + bias`. Denominator is ε-stabilized with
    /// ε = 1e-5.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, AutodiffError> {
        const EPS: f64 = 1e-5;
        let (r, c) = self.check_2d("layer_norm", x)?;
        for &p in &[gain, bias] {
            let s = self.value(p).shape();
            if s != [c] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![r, c],
                    rhs: s.to_vec(),
                });
            }
        }
        let xv = self.value(x).values();
        let g = self.value(gain).values();
        let b = self.value(bias).values();
        let mut out = vec![0.0; r * c];
        let mut row_stats = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + EPS).sqrt();
            for j in 0..c {
                out[i * c + j] = g[j] * ((row[j] - mean) * inv_std) + b[j];
            }
            row_stats.push((mean, inv_std));
        }
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                row_stats,
            },
            false,
        ))
    }

    /// Gather rows of `table` by index. The backward pass scatters gradient
    /// rows back into the touched table rows, accumulating repeats.
    pub fn embedding_lookup(
        &mut self,
        table: TensorId,
        ids: &[usize],
    ) -> Result<TensorId, AutodiffError> {
        let (rows, d) = self.check_2d("embedding_lookup", table)?;
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange { id, rows });
            }
        }
        let tv = self.value(table).values();
        let mut out = vec![0.0; ids.len() * d];
        for (k, &id) in ids.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), d, out),
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            false,
        ))
    }

    /// Stack 2-d tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        assert!(!parts.is_empty());
        let (_, c) = self.check_2d("concat_rows", parts[0])?;
        let mut total_rows = 0;
        for &p in parts {
            let (r, pc) = self.check_2d("concat_rows", p)?;
            if pc != c {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: vec![r, pc],
                });
            }
            total_rows += r;
        }
        let mut out = Vec::with_capacity(total_rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).values());
        }
        Ok(self.push(
            Tensor::matrix(total_rows, c, out),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            false,
        ))
    }

    /// Concatenate 2-d tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        assert!(!parts.is_empty());
        let (r, _) = self.check_2d("concat_cols", parts[0])?;
        let mut total_cols = 0;
        for &p in parts {
            let (pr, pc) = self.check_2d("concat_cols", p)?;
            if pr != r {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: vec![pr, pc],
                });
            }
            total_cols += pc;
        }
        let mut out = vec![0.0; r * total_cols];
        let mut col_off = 0;
        for &p in parts {
            let (_, pc) = self.check_2d("concat_cols", p)?;
            let pv = self.value(p).values();
            for i in 0..r {
                out[i * total_cols + col_off..i * total_cols + col_off + pc]
                    .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
            col_off += pc;
        }
        Ok(self.push(
            Tensor::matrix(r, total_cols, out),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            false,
        ))
    }

    /// Contiguous row slice `x[start..start+len]`.
    pub fn slice_rows(
        &mut self,
        x: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, AutodiffError> {
        let (r, c) = self.check_2d("slice_rows", x)?;
        if start + len > r {
            return Err(AutodiffError::BadShape {
                op: "slice_rows",
                expected: "slice range within row count",
                got: vec![start, len, r],
            });
        }
        let out = self.value(x).values()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::matrix(len, c, out), Op::SliceRows { x, start }, false))
    }

    /// Tile a length-m tensor (any shape with m elements) into n identical
    /// rows. The backward pass sums gradients over rows.
    pub fn repeat_rows(&mut self, row: TensorId, n: usize) -> Result<TensorId, AutodiffError> {
        let m = self.value(row).numel();
        let rv = self.value(row).values();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(rv);
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::RepeatRows { row }, false))
    }

    /// Pick one entry per row: `out[i] = x[i, cols[i]]`.
    pub fn gather_per_row(
        &mut self,
        x: TensorId,
        cols: &[usize],
    ) -> Result<TensorId, AutodiffError> {
        let (r, c) = self.check_2d("gather_per_row", x)?;
        if cols.len() != r {
            return Err(AutodiffError::BadShape {
                op: "gather_per_row",
                expected: "one column index per row",
                got: vec![cols.len(), r],
            });
        }
        for &j in cols {
            if j >= c {
                return Err(AutodiffError::IndexOutOfRange { id: j, rows: c });
            }
        }
        let xv = self.value(x).values();
        let out: Vec<f64> = cols.iter().enumerate().map(|(i, &j)| xv[i * c + j]).collect();
        Ok(self.push(
            Tensor::new(vec![r], out),
            Op::GatherPerRow {
                x,
                cols: cols.to_vec(),
            },
            false,
        ))
    }

    /// Elementwise addition. Shapes must match, or one operand must be a
    /// single element which is then broadcast over the other.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            let vals = av
                .values()
                .iter()
                .zip(bv.values())
                .map(|(x, y)| x + y)
                .collect();
            Tensor::new(av.shape().to_vec(), vals)
        } else if av.numel() == 1 {
            let s = av.values()[0];
            Tensor::new(bv.shape().to_vec(), bv.values().iter().map(|y| s + y).collect())
        } else if bv.numel() == 1 {
            let s = bv.values()[0];
            Tensor::new(av.shape().to_vec(), av.values().iter().map(|x| x + s).collect())
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        Ok(self.push(out, Op::Add { a, b }, false))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let vals = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::Mul { a, b }, false))
    }

    /// Sum of same-shape tensors, left to right.
    pub fn add_n(&mut self, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        assert!(!parts.is_empty());
        let shape = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let mut out = self.value(parts[0]).values().to_vec();
        for &p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(self.value(p).values()) {
                *o += v;
            }
        }
        Ok(self.push(
            Tensor::new(shape, out),
            Op::AddN {
                parts: parts.to_vec(),
            },
            false,
        ))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let xv = self.value(x);
        let vals = xv.values().iter().map(|v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::Relu { x }, false))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let xv = self.value(x);
        let vals = xv.values().iter().map(|v| sigmoid(*v)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::Sigmoid { x }, false))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let xv = self.value(x);
        for &v in xv.values() {
            if !(v > 0.0) {
                return Err(AutodiffError::LogDomain { value: v });
            }
        }
        let vals = xv.values().iter().map(|v| v.ln()).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::Log { x }, false))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId, AutodiffError> {
        let xv = self.value(x);
        let vals = xv.values().iter().map(|v| c * v).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::Scale { x, c }, false))
    }

    /// Elementwise `max(x, c)`; used to floor probabilities before `log`.
    pub fn clamp_min(&mut self, x: TensorId, c: f64) -> Result<TensorId, AutodiffError> {
        let xv = self.value(x);
        let vals = xv.values().iter().map(|v| v.max(c)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, vals), Op::ClampMin { x, c }, false))
    }

    /// Sum all entries into a scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let total = self.value(x).values().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum { x }, false))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, AutodiffError> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Propagate gradients from a scalar loss back through every recorded
    /// node. May be called once per tape.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::DetachedLoss);
        }
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.nodes[loss.0].tensor.shape().to_vec(),
            });
        }
        self.backward_done = true;
        self.nodes[loss.0].tensor.set_grad(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(d_out) = self.nodes[idx].tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            // Op data is moved out so `self` can be borrowed mutably below;
            // it is no longer needed once this node's VJP has run.
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_op(idx, &op, &d_out);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, grad: &[f64]) {
        let t = &mut self.nodes[id.0].tensor;
        debug_assert_eq!(grad.len(), t.numel());
        match &mut t.grad {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            None => t.grad = Some(grad.to_vec()),
        }
    }

    fn backward_op(&mut self, out_idx: usize, op: &Op, d_out: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1])
                };
                let n = self.value(*b).shape()[1];
                // dA = dOut · Bᵀ
                let mut d_a = vec![0.0; m * k];
                matmul_nt(d_out, self.value(*b).values(), &mut d_a, m, n, k);
                self.accumulate(*a, &d_a);
                // dB = Aᵀ · dOut
                let mut d_b = vec![0.0; k * n];
                matmul_tn(self.value(*a).values(), d_out, &mut d_b, m, k, n);
                self.accumulate(*b, &d_b);
            }
            Op::Transpose { x } => {
                let (r, c) = {
                    let s = self.value(*x).shape();
                    (s[0], s[1])
                };
                let mut d_x = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        d_x[j * c + i] = d_out[i * r + j];
                    }
                }
                self.accumulate(*x, &d_x);
            }
            Op::RowSoftmax { x } => {
                let (r, c) = {
                    let s = self.nodes[out_idx].tensor.shape();
                    (s[0], s[1])
                };
                let y = self.nodes[out_idx].tensor.values();
                let mut d_x = vec![0.0; r * c];
                for i in 0..r {
                    let yrow = &y[i * c..(i + 1) * c];
                    let drow = &d_out[i * c..(i + 1) * c];
                    let dot: f64 = yrow.iter().zip(drow).map(|(yv, dv)| yv * dv).sum();
                    for j in 0..c {
                        d_x[i * c + j] = yrow[j] * (drow[j] - dot);
                    }
                }
                self.accumulate(*x, &d_x);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                row_stats,
            } => {
                let (r, c) = {
                    let s = self.value(*x).shape();
                    (s[0], s[1])
                };
                let xv = self.value(*x).values().to_vec();
                let g = self.value(*gain).values().to_vec();
                let mut d_x = vec![0.0; r * c];
                let mut d_g = vec![0.0; c];
                let mut d_b = vec![0.0; c];
                for i in 0..r {
                    let (mean, inv_std) = row_stats[i];
                    let row = &xv[i * c..(i + 1) * c];
                    let drow = &d_out[i * c..(i + 1) * c];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = drow[j] * g[j];
                        d_g[j] += drow[j] * xhat;
                        d_b[j] += drow[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = drow[j] * g[j];
                        d_x[i * c + j] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                self.accumulate(*x, &d_x);
                self.accumulate(*gain, &d_g);
                self.accumulate(*bias, &d_b);
            }
            Op::EmbeddingLookup { table, ids } => {
                let (rows, d) = {
                    let s = self.value(*table).shape();
                    (s[0], s[1])
                };
                let mut d_t = vec![0.0; rows * d];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        d_t[id * d + j] += d_out[k * d + j];
                    }
                }
                self.accumulate(*table, &d_t);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let slice = d_out[offset..offset + n].to_vec();
                    self.accumulate(p, &slice);
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let total_cols = self.nodes[out_idx].tensor.shape()[1];
                let r = self.nodes[out_idx].tensor.shape()[0];
                let mut col_off = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    let mut d_p = vec![0.0; r * pc];
                    for i in 0..r {
                        d_p[i * pc..(i + 1) * pc].copy_from_slice(
                            &d_out[i * total_cols + col_off..i * total_cols + col_off + pc],
                        );
                    }
                    self.accumulate(p, &d_p);
                    col_off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let (r, c) = {
                    let s = self.value(*x).shape();
                    (s[0], s[1])
                };
                let mut d_x = vec![0.0; r * c];
                d_x[start * c..start * c + d_out.len()].copy_from_slice(d_out);
                self.accumulate(*x, &d_x);
            }
            Op::RepeatRows { row } => {
                let m = self.value(*row).numel();
                let n = d_out.len() / m;
                let mut d_r = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        d_r[j] += d_out[i * m + j];
                    }
                }
                self.accumulate(*row, &d_r);
            }
            Op::GatherPerRow { x, cols } => {
                let (r, c) = {
                    let s = self.value(*x).shape();
                    (s[0], s[1])
                };
                let mut d_x = vec![0.0; r * c];
                for (i, &j) in cols.iter().enumerate() {
                    d_x[i * c + j] += d_out[i];
                }
                self.accumulate(*x, &d_x);
            }
            Op::Add { a, b } => {
                for &(side, other) in &[(*a, *b), (*b, *a)] {
                    let n = self.value(side).numel();
                    if n == d_out.len() {
                        self.accumulate(side, d_out);
                    } else {
                        // broadcast scalar side: gradient is the sum
                        debug_assert_eq!(n, 1);
                        debug_assert!(self.value(other).numel() == d_out.len());
                        self.accumulate(side, &[d_out.iter().sum()]);
                    }
                }
            }
            Op::Mul { a, b } => {
                let d_a: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*b).values())
                    .map(|(d, v)| d * v)
                    .collect();
                let d_b: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*a).values())
                    .map(|(d, v)| d * v)
                    .collect();
                self.accumulate(*a, &d_a);
                self.accumulate(*b, &d_b);
            }
            Op::AddN { parts } => {
                for &p in parts {
                    self.accumulate(p, d_out);
                }
            }
            Op::Relu { x } => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*x).values())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(*x, &d_x);
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[out_idx].tensor.values();
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(y)
                    .map(|(d, yv)| d * yv * (1.0 - yv))
                    .collect();
                self.accumulate(*x, &d_x);
            }
            Op::Log { x } => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*x).values())
                    .map(|(d, v)| d / v)
                    .collect();
                self.accumulate(*x, &d_x);
            }
            Op::Scale { x, c } => {
                let d_x: Vec<f64> = d_out.iter().map(|d| c * d).collect();
                self.accumulate(*x, &d_x);
            }
            Op::ClampMin { x, c } => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*x).values())
                    .map(|(d, v)| if *v > *c { *d } else { 0.0 })
                    .collect();
                self.accumulate(*x, &d_x);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(*x, &vec![d_out[0]; n]);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stabilized exp-normalize of one row. Cells with a non-zero mask entry get
/// exactly zero weight and are excluded from the max/sum. Errs when every
/// cell is masked.
fn softmax_row(row: &[f64], mask: Option<&[f64]>, out: &mut [f64]) -> Result<(), ()> {
    let allowed = |j: usize| mask.map_or(true, |m| m[j] == 0.0);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if allowed(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if allowed(j) {
            let e = (v - max).exp();
            out[j] = e;
            sum += e;
        } else {
            out[j] = 0.0;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

// ── Raw matmul kernels (row-major) ──────────────────────────────────────

/// out[m×n] += a[m×k] · b[k×n]
fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += a[m×n] · b[k×n]ᵀ   (b given untransposed, k rows of length n)
fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
