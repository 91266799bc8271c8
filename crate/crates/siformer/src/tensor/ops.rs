//! Differentiable operations. Each constructor computes the forward
//! value eagerly and records a closure computing the vector-Jacobian
//! product for every parent.

use super::{Matrix, Tensor};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn raw_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

fn raw_transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Tensor {
    /// Leaf with entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform_param(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Tensor::param(Matrix::from_vec(rows, cols, data))
    }

    /// Leaf with entries drawn uniformly from `[0, 1)`.
    pub fn uniform01_param(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
        Tensor::param(Matrix::from_vec(rows, cols, data))
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![self.rows(), self.cols()],
                right: vec![other.rows(), other.cols()],
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let out = raw_matmul(&self.0.data.borrow(), &other.0.data.borrow(), m, k, n);
        let a = self.clone();
        let b = other.clone();
        let need_a = a.requires_grad();
        let need_b = b.requires_grad();
        Ok(Tensor::make(
            m,
            n,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |dy| {
                let da = need_a.then(|| {
                    // dA = dY * B^T
                    let bt = raw_transpose(&b.0.data.borrow(), k, n);
                    raw_matmul(dy, &bt, m, n, k)
                });
                let db = need_b.then(|| {
                    // dB = A^T * dY
                    let at = raw_transpose(&a.0.data.borrow(), m, k);
                    raw_matmul(&at, dy, k, m, n)
                });
                vec![da, db]
            }),
        ))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let out = raw_transpose(&self.0.data.borrow(), r, c);
        Tensor::make(
            c,
            r,
            out,
            vec![self.clone()],
            Box::new(move |dy| vec![Some(raw_transpose(dy, c, r))]),
        )
    }

    fn zip_same_shape(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        back: BackPair,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let a = self.0.data.borrow();
        let b = other.0.data.borrow();
        let out: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        drop(a);
        drop(b);
        let pa = self.clone();
        let pb = other.clone();
        Ok(Tensor::make(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |dy| back(dy, &pa, &pb)),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            other,
            "add",
            |x, y| x + y,
            Box::new(|dy, _, _| vec![Some(dy.to_vec()), Some(dy.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            other,
            "sub",
            |x, y| x - y,
            Box::new(|dy, _, _| {
                vec![
                    Some(dy.to_vec()),
                    Some(dy.iter().map(|g| -g).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            other,
            "mul",
            |x, y| x * y,
            Box::new(|dy, a, b| {
                let av = a.0.data.borrow();
                let bv = b.0.data.borrow();
                vec![
                    Some(dy.iter().zip(bv.iter()).map(|(g, y)| g * y).collect()),
                    Some(dy.iter().zip(av.iter()).map(|(g, x)| g * x).collect()),
                ]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.0.data.borrow().iter().map(|x| x * c).collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone()],
            Box::new(move |dy| vec![Some(dy.iter().map(|g| g * c).collect())]),
        )
    }

    /// Adds a `1 x n` row vector to every row of an `m x n` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: self.shape().to_vec(),
                right: row.shape().to_vec(),
            });
        }
        let (m, n) = (self.rows(), self.cols());
        let rv = row.0.data.borrow();
        let out: Vec<f64> = self
            .0
            .data
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv[i % n])
            .collect();
        drop(rv);
        Ok(Tensor::make(
            m,
            n,
            out,
            vec![self.clone(), row.clone()],
            Box::new(move |dy| {
                let mut drow = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        drow[c] += dy[r * n + c];
                    }
                }
                vec![Some(dy.to_vec()), Some(drow)]
            }),
        ))
    }

    /// Adds an `m x 1` column vector to every column of an `m x n` matrix.
    pub fn add_col(&self, col: &Tensor) -> Result<Tensor> {
        if col.cols() != 1 || col.rows() != self.rows() {
            return Err(Error::ShapeMismatch {
                op: "add_col",
                left: self.shape().to_vec(),
                right: col.shape().to_vec(),
            });
        }
        let (m, n) = (self.rows(), self.cols());
        let cv = col.0.data.borrow();
        let out: Vec<f64> = self
            .0
            .data
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + cv[i / n])
            .collect();
        drop(cv);
        Ok(Tensor::make(
            m,
            n,
            out,
            vec![self.clone(), col.clone()],
            Box::new(move |dy| {
                let mut dcol = vec![0.0; m];
                for r in 0..m {
                    for c in 0..n {
                        dcol[r] += dy[r * n + c];
                    }
                }
                vec![Some(dy.to_vec()), Some(dcol)]
            }),
        ))
    }

    pub fn relu(&self) -> Tensor {
        let xv = self.value();
        let out: Vec<f64> = xv.data.iter().map(|&x| x.max(0.0)).collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone()],
            Box::new(move |dy| {
                vec![Some(
                    dy.iter()
                        .zip(&xv.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn elu(&self) -> Tensor {
        let xv = self.value();
        let out: Vec<f64> = xv
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let yv = out.clone();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            vec![self.clone()],
            Box::new(move |dy| {
                vec![Some(
                    dy.iter()
                        .zip(xv.data.iter().zip(&yv))
                        .map(|(g, (&x, &y))| if x > 0.0 { *g } else { g * (y + 1.0) })
                        .collect(),
                )]
            }),
        )
    }

    /// Row-wise softmax, numerically stabilized by per-row max
    /// subtraction. Errors on non-finite input.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.softmax_rows_masked(None)
    }

    /// Row-wise softmax over the unmasked columns only; masked columns
    /// get exactly zero probability and zero gradient. `mask[j] = true`
    /// means column `j` participates.
    pub fn softmax_rows_masked(&self, mask: Option<&[bool]>) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "softmax_rows_masked",
                    left: vec![m, n],
                    right: vec![mask.len()],
                });
            }
        }
        let active: Vec<bool> = match mask {
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let x = self.0.data.borrow();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mut maxv = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if active[j] {
                    if !v.is_finite() {
                        return Err(Error::NonFinite("softmax_rows"));
                    }
                    maxv = maxv.max(v);
                }
            }
            if maxv == f64::NEG_INFINITY {
                return Err(Error::AllKeysMasked(r));
            }
            let mut sum = 0.0;
            for j in 0..n {
                if active[j] {
                    let e = (row[j] - maxv).exp();
                    out[r * n + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                out[r * n + j] /= sum;
            }
        }
        drop(x);
        let probs = out.clone();
        Ok(Tensor::make(
            m,
            n,
            out,
            vec![self.clone()],
            Box::new(move |dy| {
                // dx_j = p_j * (dy_j - sum_k dy_k p_k), per row.
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let p = &probs[r * n..(r + 1) * n];
                    let g = &dy[r * n..(r + 1) * n];
                    let dot: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
                    for j in 0..n {
                        dx[r * n + j] = p[j] * (g[j] - dot);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Per-row layer normalization with learnable gain/bias (`1 x n` each).
    pub fn layer_norm_rows(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if t.rows() != 1 || t.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: if name == "gamma" {
                        "layer_norm gamma"
                    } else {
                        "layer_norm beta"
                    },
                    left: vec![m, n],
                    right: t.shape().to_vec(),
                });
            }
        }
        let x = self.0.data.borrow();
        let g = gamma.0.data.borrow();
        let b = beta.0.data.borrow();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..n {
                let h = (row[c] - mean) * istd;
                xhat[r * n + c] = h;
                out[r * n + c] = g[c] * h + b[c];
            }
        }
        drop(x);
        drop(g);
        drop(b);
        let gamma_t = gamma.clone();
        Ok(Tensor::make(
            m,
            n,
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |dy| {
                let g = gamma_t.0.data.borrow();
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..m {
                    let h = &xhat[r * n..(r + 1) * n];
                    let gy = &dy[r * n..(r + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..n {
                        let dh = gy[c] * g[c];
                        sum_dh += dh;
                        sum_dh_h += dh * h[c];
                        dgamma[c] += gy[c] * h[c];
                        dbeta[c] += gy[c];
                    }
                    let inv_n = 1.0 / n as f64;
                    for c in 0..n {
                        let dh = gy[c] * g[c];
                        dx[r * n + c] =
                            inv_std[r] * (dh - inv_n * sum_dh - h[c] * inv_n * sum_dh_h);
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        ))
    }

    /// Mean over the rows selected by `rows_mask`, as a `1 x n` tensor.
    pub fn mean_rows_masked(&self, rows_mask: &[bool]) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if rows_mask.len() != m {
            return Err(Error::ShapeMismatch {
                op: "mean_rows_masked",
                left: vec![m, n],
                right: vec![rows_mask.len()],
            });
        }
        let count = rows_mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::invalid("mean_rows_masked: no rows selected"));
        }
        let x = self.0.data.borrow();
        let mut out = vec![0.0; n];
        for r in 0..m {
            if rows_mask[r] {
                for c in 0..n {
                    out[c] += x[r * n + c];
                }
            }
        }
        for v in &mut out {
            *v /= count as f64;
        }
        drop(x);
        let mask = rows_mask.to_vec();
        Ok(Tensor::make(
            1,
            n,
            out,
            vec![self.clone()],
            Box::new(move |dy| {
                let inv = 1.0 / count as f64;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    if mask[r] {
                        for c in 0..n {
                            dx[r * n + c] = dy[c] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Stacks tensors with equal column counts along the row axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let n = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows: empty input"))?
            .cols();
        let mut rows = 0;
        for p in parts {
            if p.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![parts[0].rows(), n],
                    right: p.shape().to_vec(),
                });
            }
            rows += p.rows();
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(&p.0.data.borrow());
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.rows() * n).collect();
        Ok(Tensor::make(
            rows,
            n,
            data,
            parts.to_vec(),
            Box::new(move |dy| {
                let mut offset = 0;
                sizes
                    .iter()
                    .map(|&sz| {
                        let piece = dy[offset..offset + sz].to_vec();
                        offset += sz;
                        Some(piece)
                    })
                    .collect()
            }),
        ))
    }

    /// Selects rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!(
                "gather_rows: index {bad} out of range for {m} rows"
            )));
        }
        let x = self.0.data.borrow();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&x[i * n..(i + 1) * n]);
        }
        drop(x);
        let idx = indices.to_vec();
        Ok(Tensor::make(
            indices.len(),
            n,
            data,
            vec![self.clone()],
            Box::new(move |dy| {
                let mut dx = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        dx[i * n + c] += dy[r * n + c];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Builds a `total x n` tensor whose rows at `indices` come from
    /// `self` (row `r` of `self` goes to `indices[r]`) and whose other
    /// rows all equal the `1 x n` `fill` row.
    pub fn assemble_rows(&self, indices: &[usize], fill: &Tensor, total: usize) -> Result<Tensor> {
        let n = self.cols();
        if fill.rows() != 1 || fill.cols() != n {
            return Err(Error::ShapeMismatch {
                op: "assemble_rows",
                left: vec![self.rows(), n],
                right: fill.shape().to_vec(),
            });
        }
        if indices.len() != self.rows() {
            return Err(Error::invalid(
                "assemble_rows: one index per selected row required",
            ));
        }
        let mut placed = vec![false; total];
        for &i in indices {
            if i >= total {
                return Err(Error::invalid(format!(
                    "assemble_rows: index {i} out of range for {total} rows"
                )));
            }
            placed[i] = true;
        }
        let x = self.0.data.borrow();
        let f = fill.0.data.borrow();
        let mut data = Vec::with_capacity(total * n);
        for flag in &placed {
            if !flag {
                data.extend_from_slice(&f);
            } else {
                data.extend_from_slice(&vec![0.0; n]);
            }
        }
        for (r, &i) in indices.iter().enumerate() {
            data[i * n..(i + 1) * n].copy_from_slice(&x[r * n..(r + 1) * n]);
        }
        drop(x);
        drop(f);
        let idx = indices.to_vec();
        Ok(Tensor::make(
            total,
            n,
            data,
            vec![self.clone(), fill.clone()],
            Box::new(move |dy| {
                let mut dsel = vec![0.0; idx.len() * n];
                for (r, &i) in idx.iter().enumerate() {
                    dsel[r * n..(r + 1) * n].copy_from_slice(&dy[i * n..(i + 1) * n]);
                }
                let mut dfill = vec![0.0; n];
                for r in 0..total {
                    if !placed[r] {
                        for c in 0..n {
                            dfill[c] += dy[r * n + c];
                        }
                    }
                }
                vec![Some(dsel), Some(dfill)]
            }),
        ))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.0.data.borrow().iter().sum();
        let numel = self.numel();
        Tensor::make(
            1,
            1,
            vec![s],
            vec![self.clone()],
            Box::new(move |dy| vec![Some(vec![dy[0]; numel])]),
        )
    }

    /// Stable cross-entropy of a `1 x C` logit row against a class id:
    /// `logsumexp(logits) - logits[label]`. Backward is the classic
    /// `softmax(logits) - onehot`.
    pub fn cross_entropy_logits(&self, label: usize) -> Result<Tensor> {
        if self.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_logits",
                left: self.shape().to_vec(),
                right: vec![1, self.cols()],
            });
        }
        let c = self.cols();
        if label >= c {
            return Err(Error::invalid(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let x = self.0.data.borrow();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cross_entropy_logits"));
        }
        let maxv = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = x.iter().map(|v| (v - maxv).exp()).sum();
        let loss = maxv + sum_exp.ln() - x[label];
        let probs: Vec<f64> = x.iter().map(|v| (v - maxv).exp() / sum_exp).collect();
        drop(x);
        Ok(Tensor::make(
            1,
            1,
            vec![loss],
            vec![self.clone()],
            Box::new(move |dy| {
                let mut dx = probs.clone();
                dx[label] -= 1.0;
                for v in &mut dx {
                    *v *= dy[0];
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Shifts rows down (`offset > 0`) or up (`offset < 0`), filling
    /// vacated rows with zeros. Used to express width-3 convolutions.
    pub fn shift_rows(&self, offset: i64) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let x = self.0.data.borrow();
        let mut data = vec![0.0; m * n];
        for r in 0..m as i64 {
            let src = r - offset;
            if src >= 0 && src < m as i64 {
                data[(r as usize) * n..(r as usize + 1) * n]
                    .copy_from_slice(&x[(src as usize) * n..(src as usize + 1) * n]);
            }
        }
        drop(x);
        Tensor::make(
            m,
            n,
            data,
            vec![self.clone()],
            Box::new(move |dy| {
                let mut dx = vec![0.0; m * n];
                for r in 0..m as i64 {
                    let src = r - offset;
                    if src >= 0 && src < m as i64 {
                        for c in 0..n {
                            dx[(src as usize) * n + c] += dy[(r as usize) * n + c];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Max-pooling along the row axis: window 3, stride 2, edge rows
    /// padded by clipping. An `L x n` input yields `ceil(L/2) x n`.
    pub fn max_pool_rows(&self) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if m < 2 {
            return Err(Error::invalid(
                "max_pool_rows requires at least 2 rows",
            ));
        }
        let out_rows = m.div_ceil(2);
        let x = self.0.data.borrow();
        let mut data = vec![0.0; out_rows * n];
        let mut argmax = vec![0usize; out_rows * n];
        for t in 0..out_rows {
            let center = 2 * t as i64;
            for c in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_r = 0usize;
                for off in -1..=1i64 {
                    let r = center + off;
                    if r < 0 || r >= m as i64 {
                        continue;
                    }
                    let v = x[(r as usize) * n + c];
                    if v > best {
                        best = v;
                        best_r = r as usize;
                    }
                }
                data[t * n + c] = best;
                argmax[t * n + c] = best_r;
            }
        }
        drop(x);
        Ok(Tensor::make(
            out_rows,
            n,
            data,
            vec![self.clone()],
            Box::new(move |dy| {
                let mut dx = vec![0.0; m * n];
                for t in 0..out_rows {
                    for c in 0..n {
                        dx[argmax[t * n + c] * n + c] += dy[t * n + c];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

type BackPair = Box<dyn Fn(&[f64], &Tensor, &Tensor) -> Vec<Option<Vec<f64>>>>;
