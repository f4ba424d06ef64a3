//! Bank of per-step linear classifier blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// `rows x e` weights plus one bias per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(rows: usize, embed: usize) -> Self {
        Self {
            weight: Matrix::zeros(rows, embed),
            bias: vec![T::zero(); rows],
        }
    }

    /// Weights `N(0, std^2)` drawn row-major, zero biases.
    pub fn init(rows: usize, embed: usize, std: f64, rng: &mut RngStream) -> Self {
        let mut head = Self::zeros(rows, embed);
        head.weight
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.normal_scalar(0.0, std));
        head
    }

    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows(), self.weight.cols())
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            weight: self.weight.slice_rows(start, end),
            bias: self.bias[start..end].to_vec(),
        }
    }

    pub fn vstack(&self, other: &Self) -> Self {
        let mut bias = self.bias.clone();
        bias.extend_from_slice(&other.bias);
        Self {
            weight: self.weight.vstack(&other.weight),
            bias,
        }
    }
}

/// Classifier rows learned at one step. Row `r` is the `r`-th class id of
/// the step, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBlock<T> {
    pub step: usize,
    pub classes: Vec<u16>,
    pub head: LinearHead<T>,
    pub frozen: bool,
}

/// Rows reserved for classes that have not been learned yet. The first
/// `classes.len()` rows are bound to those ids in order; any further rows are
/// spare capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureBlock<T> {
    pub classes: Vec<u16>,
    pub head: LinearHead<T>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank<T> {
    blocks: Vec<ClassifierBlock<T>>,
    future: Option<FutureBlock<T>>,
}

impl<T: Scalar> ClassifierBank<T> {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            future: None,
        }
    }

    pub fn blocks(&self) -> &[ClassifierBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ClassifierBlock<T>] {
        &mut self.blocks
    }

    pub fn future(&self) -> Option<&FutureBlock<T>> {
        self.future.as_ref()
    }

    pub fn future_mut(&mut self) -> Option<&mut FutureBlock<T>> {
        self.future.as_mut()
    }

    /// Disjoint mutable access to the regular blocks and the future block.
    pub fn parts_mut(&mut self) -> (&mut [ClassifierBlock<T>], Option<&mut FutureBlock<T>>) {
        (&mut self.blocks, self.future.as_mut())
    }

    pub fn set_future(&mut self, future: Option<FutureBlock<T>>) {
        self.future = future;
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Rows of learned classes.
    pub fn regular_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.head.rows()).sum()
    }

    pub fn future_rows(&self) -> usize {
        self.future.as_ref().map_or(0, |f| f.head.rows())
    }

    pub fn classes(&self) -> Vec<u16> {
        self.blocks
            .iter()
            .flat_map(|b| b.classes.iter().copied())
            .collect()
    }

    pub fn contains(&self, class: u16) -> bool {
        self.blocks.iter().any(|b| b.classes.contains(&class))
    }

    /// Row segments in global row order, optionally followed by the future
    /// block.
    pub fn segments(&self, include_future: bool) -> Vec<&LinearHead<T>> {
        let mut segs: Vec<&LinearHead<T>> = self.blocks.iter().map(|b| &b.head).collect();
        if include_future {
            if let Some(f) = &self.future {
                segs.push(&f.head);
            }
        }
        segs
    }

    /// Appends a block. Its ids must be new and must continue the global
    /// class-id order (rows double as class ids).
    pub fn push_block(&mut self, block: ClassifierBlock<T>) -> Result<()> {
        if block.classes.len() != block.head.rows() {
            return Err(Error::Shape(format!(
                "block of step {} has {} ids but {} rows",
                block.step,
                block.classes.len(),
                block.head.rows()
            )));
        }
        if let Some(&dup) = block.classes.iter().find(|&&c| self.contains(c)) {
            return Err(Error::State(format!(
                "class {dup} already has a classifier row"
            )));
        }
        let next = self.regular_rows();
        for (i, &c) in block.classes.iter().enumerate() {
            if c as usize != next + i {
                return Err(Error::State(format!(
                    "class {c} would occupy row {} and break class-id row order",
                    next + i
                )));
            }
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Removes the first `n` future rows, returning them.
    pub fn take_future_rows(&mut self, n: usize) -> Option<LinearHead<T>> {
        let fut = self.future.as_mut()?;
        if n > fut.head.rows() {
            return None;
        }
        let taken = fut.head.slice_rows(0, n);
        fut.head = fut.head.slice_rows(n, fut.head.rows());
        let bound = n.min(fut.classes.len());
        fut.classes.drain(..bound);
        if fut.head.rows() == 0 {
            self.future = None;
        }
        Some(taken)
    }

    /// All learned rows stacked in class-id order.
    pub fn regular_head(&self) -> LinearHead<T> {
        let e = self.blocks.first().map_or(0, |b| b.head.weight.cols());
        self.blocks
            .iter()
            .fold(LinearHead::zeros(0, e), |acc, b| acc.vstack(&b.head))
    }
}
