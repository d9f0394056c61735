use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result, Scalar};

/// Dense row-major tensor. Four-dimensional tensors use the (N, C, H, W) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::of(lo + (hi - lo) * rng.random::<f64>()))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", &self.shape, &[0, 0, 0, 0])),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One (C, H, W) item of a batch, as a (1, C, H, W) tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let (_, c, h, w) = self.dims4()?;
        let len = c * h * w;
        Ok(Self {
            shape: vec![1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        })
    }

    /// Stacks same-shaped (C, H, W) or (1, C, H, W) items into a batch.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or(Error::DataLength {
            shape: vec![0],
            len: 0,
        })?;
        let item_shape: Vec<usize> = match first.shape.len() {
            4 if first.shape[0] == 1 => first.shape[1..].to_vec(),
            _ => first.shape.clone(),
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.len() != first.len() {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&item_shape);
        Ok(Self { shape, data })
    }
}

/// Shape `b` expands to `target` by repeating along size-1 axes. Lower-rank
/// shapes are aligned to the trailing axes of `target`.
pub fn broadcastable(b: &[usize], target: &[usize]) -> bool {
    if b.len() > target.len() {
        return false;
    }
    let offset = target.len() - b.len();
    b.iter()
        .zip(&target[offset..])
        .all(|(&s, &t)| s == t || s == 1)
}

/// Element strides of `b` when viewed with shape `target`; 0 on expanded axes.
pub(crate) fn broadcast_strides(b: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - b.len();
    let mut strides = vec![0; target.len()];
    let mut acc = 1;
    for axis in (0..b.len()).rev() {
        strides[axis + offset] = if b[axis] == 1 { 0 } else { acc };
        acc *= b[axis];
    }
    strides
}

/// Calls `f(out_index, b_index)` for every element of `target` in row-major order.
pub(crate) fn for_each_broadcast(b: &[usize], target: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(b, target);
    let rank = target.len();
    let total: usize = target.iter().product();
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = target[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut out = 0;
    while out < total {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(out + j, base + j * inner_stride);
        }
        out += inner;
        // advance the outer multi-index
        let mut axis = rank - 1;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < target[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}
