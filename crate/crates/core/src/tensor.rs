//! Dense node × time × channel series with a missing-value mask.
//!
//! Layout is row-major and node-major: the `T·C` cells of one node are a
//! contiguous slice, time-major then channel. Missing cells carry a `false`
//! mask bit and a stored value of zero; every reduction skips them.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub n_channels: usize,
}

impl Shape {
    pub fn new(n_nodes: usize, n_steps: usize, n_channels: usize) -> Result<Self> {
        if n_nodes == 0 || n_steps == 0 || n_channels == 0 {
            return Err(Error::shape(format!(
                "dimensions must be positive, got N={n_nodes} T={n_steps} C={n_channels}"
            )));
        }
        Ok(Self {
            n_nodes,
            n_steps,
            n_channels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_nodes * self.n_steps * self.n_channels
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells per node (`T·C`).
    #[inline]
    pub fn node_len(&self) -> usize {
        self.n_steps * self.n_channels
    }

    #[inline]
    pub fn index(&self, node: usize, step: usize, channel: usize) -> usize {
        debug_assert!(node < self.n_nodes && step < self.n_steps && channel < self.n_channels);
        (node * self.n_steps + step) * self.n_channels + channel
    }

    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self { n_steps, ..*self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.n_nodes, self.n_steps, self.n_channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTensor<S> {
    shape: Shape,
    values: Vec<S>,
    mask: Vec<bool>,
}

impl<S: Scalar> SeriesTensor<S> {
    /// Builds a tensor from raw values; `NaN` marks a missing cell.
    pub fn from_values(shape: Shape, values: Vec<S>) -> Result<Self> {
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Self::with_mask(shape, values, mask)
    }

    pub fn with_mask(shape: Shape, mut values: Vec<S>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != shape.len() || mask.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} cells, got {} values and {} mask bits",
                shape.len(),
                values.len(),
                mask.len()
            )));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if !m {
                *v = S::zero();
            } else if !v.is_finite() {
                return Err(Error::contract(format!("observed cell {i} is not finite")));
            }
        }
        Ok(Self {
            shape,
            values,
            mask,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: Shape, value: S) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
            mask: vec![true; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> S) -> Result<Self> {
        let mut values = Vec::with_capacity(shape.len());
        for n in 0..shape.n_nodes {
            for t in 0..shape.n_steps {
                for c in 0..shape.n_channels {
                    values.push(f(n, t, c));
                }
            }
        }
        Self::from_values(shape, values)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Observed value at a cell, `None` when missing.
    pub fn get(&self, node: usize, step: usize, channel: usize) -> Option<S> {
        let i = self.shape.index(node, step, channel);
        self.mask[i].then(|| self.values[i])
    }

    #[inline]
    pub fn node(&self, node: usize) -> &[S] {
        let w = self.shape.node_len();
        &self.values[node * w..(node + 1) * w]
    }

    #[inline]
    pub fn node_mask(&self, node: usize) -> &[bool] {
        let w = self.shape.node_len();
        &self.mask[node * w..(node + 1) * w]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Values with missing cells rendered as `NaN`.
    pub fn values_with_nan(&self) -> Vec<S> {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { S::nan() })
            .collect()
    }

    /// Copies time steps `range` of every node and channel.
    pub fn slice_steps(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.n_steps {
            return Err(Error::shape(format!(
                "step range {range:?} outside 0..{}",
                self.shape.n_steps
            )));
        }
        let shape = self.shape.with_steps(range.len());
        let c = self.shape.n_channels;
        let mut values = Vec::with_capacity(shape.len());
        let mut mask = Vec::with_capacity(shape.len());
        for n in 0..self.shape.n_nodes {
            let lo = self.shape.index(n, range.start, 0);
            let hi = lo + range.len() * c;
            values.extend_from_slice(&self.values[lo..hi]);
            mask.extend_from_slice(&self.mask[lo..hi]);
        }
        Ok(Self {
            shape,
            values,
            mask,
        })
    }

    pub fn map(&self, mut f: impl FnMut(S) -> S) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn scale(&self, factor: S) -> Self {
        self.map(|v| v * factor)
    }

    /// Multiplies every cell of node `n` by `weights[n]`; the mask is copied.
    pub fn broadcast_scale(&self, weights: &NodeVector<S>) -> Result<Self> {
        if weights.len() != self.shape.n_nodes {
            return Err(Error::shape(format!(
                "node vector has {} entries, tensor has {} nodes",
                weights.len(),
                self.shape.n_nodes
            )));
        }
        let w = self.shape.node_len();
        let mut values = self.values.clone();
        for (chunk, &lambda) in values.chunks_exact_mut(w).zip(weights.as_slice()) {
            for v in chunk {
                *v *= lambda;
            }
        }
        Ok(Self {
            shape: self.shape,
            values,
            mask: self.mask.clone(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise combination; the output mask is the AND of both masks and
    /// missing cells store zero.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(S, S) -> S) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.values.len());
        for i in 0..self.values.len() {
            let m = self.mask[i] && other.mask[i];
            mask.push(m);
            values.push(if m {
                f(self.values[i], other.values[i])
            } else {
                S::zero()
            });
        }
        Ok(Self {
            shape: self.shape,
            values,
            mask,
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Converts to another scalar precision.
    pub fn cast<T: Scalar>(&self) -> SeriesTensor<T> {
        SeriesTensor {
            shape: self.shape,
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
            mask: self.mask.clone(),
        }
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub(crate) fn from_parts(shape: Shape, values: Vec<S>, mask: Vec<bool>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        debug_assert_eq!(mask.len(), shape.len());
        Self {
            shape,
            values,
            mask,
        }
    }
}

/// One scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> NodeVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("node vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("node vector entries must be finite"));
        }
        Ok(Self { values })
    }

    pub fn zeros(n_nodes: usize) -> Self {
        Self::filled(n_nodes, S::zero())
    }

    pub fn filled(n_nodes: usize, value: S) -> Self {
        Self {
            values: vec![value; n_nodes],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn cast<T: Scalar>(&self) -> NodeVector<T> {
        NodeVector {
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// Mean squared difference over cells observed in both tensors.
pub fn masked_mse<S: Scalar>(truth: &SeriesTensor<S>, pred: &SeriesTensor<S>) -> Result<S> {
    truth.check_same_shape(pred)?;
    let mut sum = S::zero();
    let mut count = 0usize;
    for i in 0..truth.values.len() {
        if truth.mask[i] && pred.mask[i] {
            let d = truth.values[i] - pred.values[i];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::degenerate("no cell observed in both tensors"));
    }
    Ok(sum / S::lit(count as f64))
}
