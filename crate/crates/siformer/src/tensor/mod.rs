//! Dense f64 matrices with a reverse-mode gradient engine.
//!
//! Every differentiable operation records its inputs and a backward
//! closure on the produced tensor; [`Tensor::backward`] replays the
//! recorded graph in reverse topological order and accumulates
//! gradients on every leaf created with [`Tensor::param`]. Repeated
//! backward calls without [`Tensor::zero_grad`] accumulate.
//!
//! Everything is 64-bit: the finite-difference checks in
//! [`grad_check`] at 1e-4 tolerance are not reliable in f32.
//!
//! A recorded graph is single-threaded (`Rc`-based); independent
//! graphs on separate threads share nothing.

mod grad_check;
mod ops;

pub use grad_check::{grad_check, GradCheckEntry, GradCheckReport};

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::{Error, Result};

/// Plain value matrix (row-major), shared by the non-differentiable
/// parts of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Backward closure: maps the output gradient to one gradient per
/// parent (`None` for parents that do not require grad).
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Inner {
    rows: usize,
    cols: usize,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
}

/// Handle to a node of the recorded computation. Cloning is cheap and
/// aliases the same node.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Inner>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("rows", &self.0.rows)
            .field("cols", &self.0.cols)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Constant leaf: participates in values only, never in gradients.
    pub fn constant(m: Matrix) -> Tensor {
        Tensor(Rc::new(Inner {
            rows: m.rows,
            cols: m.cols,
            data: RefCell::new(m.data),
            requires_grad: false,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward_fn: None,
        }))
    }

    /// Learnable leaf: gradients accumulate here on backward.
    pub fn param(m: Matrix) -> Tensor {
        Tensor(Rc::new(Inner {
            rows: m.rows,
            cols: m.cols,
            data: RefCell::new(m.data),
            requires_grad: true,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward_fn: None,
        }))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(Matrix::from_vec(1, 1, vec![v]))
    }

    pub(crate) fn make(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(rows * cols, data.len());
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let (parents, backward_fn) = if requires_grad {
            (parents, Some(backward_fn))
        } else {
            // Value-only path: no need to keep the graph alive.
            (Vec::new(), None)
        };
        Tensor(Rc::new(Inner {
            rows,
            cols,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward_fn,
        }))
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.0.rows, self.0.cols]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.0.rows * self.0.cols
    }

    /// Snapshot of the current values.
    pub fn value(&self) -> Matrix {
        Matrix {
            rows: self.0.rows,
            cols: self.0.cols,
            data: self.0.data.borrow().clone(),
        }
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Matrix> {
        self.0.grad.borrow().as_ref().map(|g| Matrix {
            rows: self.0.rows,
            cols: self.0.cols,
            data: g.clone(),
        })
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the stored values. Only meaningful on leaves; the
    /// optimizer and the finite-difference checker use it.
    pub fn set_data(&self, data: &[f64]) {
        assert_eq!(data.len(), self.numel());
        self.0.data.borrow_mut().copy_from_slice(data);
    }

    /// Adds `delta` to a single stored value (finite differences).
    pub fn nudge(&self, index: usize, delta: f64) {
        self.0.data.borrow_mut()[index] += delta;
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable tensor that requires grad; leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(vec![self.0.rows, self.0.cols]));
        }
        if self.0.backward_fn.is_none() {
            return Err(Error::DetachedLoss);
        }

        // Iterative post-order DFS: children first, node afterwards.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.0.requires_grad && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        // Gradients of interior nodes live only for this sweep; leaf
        // gradients accumulate persistently across sweeps.
        let mut sweep: std::collections::HashMap<*const Inner, Vec<f64>> =
            std::collections::HashMap::new();
        sweep.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(ref back) = node.0.backward_fn else { continue };
            let Some(grad_out) = sweep.remove(&node.key()) else { continue };
            let partials = back(&grad_out);
            debug_assert_eq!(partials.len(), node.0.parents.len());
            for (parent, partial) in node.0.parents.iter().zip(partials) {
                let Some(partial) = partial else { continue };
                if !parent.0.requires_grad {
                    continue;
                }
                if parent.0.backward_fn.is_none() {
                    parent.accumulate(&partial);
                } else {
                    sweep
                        .entry(parent.key())
                        .and_modify(|g| {
                            for (gi, pi) in g.iter_mut().zip(&partial) {
                                *gi += pi;
                            }
                        })
                        .or_insert(partial);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, partial: &[f64]) {
        debug_assert_eq!(partial.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, pi) in g.iter_mut().zip(partial) {
                    *gi += pi;
                }
            }
            None => *slot = Some(partial.to_vec()),
        }
    }
}
