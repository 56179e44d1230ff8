//! Dense row-major tensor.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::dim_err;
use crate::{Error, Result, Scalar};

/// Contiguous row-major array of `T` with an explicit shape.
///
/// Every dimension is at least 1, the rank is at least 1 and the data is
/// finite. Constructors enforce this; the kernels keep it.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(dim_err!("tensor rank must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(dim_err!("tensor dims must be >= 1, got {shape:?}"));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| dim_err!("tensor shape {shape:?} overflows usize"))
}

pub(crate) fn first_non_finite<T: Scalar>(data: &[T]) -> Option<usize> {
    data.iter().position(|v| !v.is_finite())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            ));
        }
        if let Some(i) = first_non_finite(&data) {
            return Err(Error::NonFinite {
                location: alloc::format!("tensor construction, flat index {i}"),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Skips the checks of [`Tensor::new`]; callers uphold the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Build a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Self::new(shape, vec![value; len])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Build from a function of the flat (row-major) index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Self::new(shape, (0..len).map(f).collect())
    }

    /// Row-major matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(dim_err!("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_f64([m, p], &data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
    }

    /// Normal entries with `std`, redrawn until they fall within two standard deviations.
    pub fn trunc_normal<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        })
    }

    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(dim_err!("expected a matrix, got shape {:?}", self.shape)),
        }
    }

    /// `(d0, d1, d2)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(dim_err!("expected a rank-3 tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &s) in idx.iter().zip(&self.shape) {
            assert!(i < s, "index {idx:?} out of bounds for {:?}", self.shape);
            flat = flat * s + i;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != self.len() {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    pub fn into_reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != self.len() {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Tensor::from_parts(shape, self.data))
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(self.len());
        for j in 0..c {
            out.extend((0..r).map(|i| self.data[i * c + j]));
        }
        Ok(Tensor::from_parts(alloc::vec![c, r], out))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "elementwise shape mismatch {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "comparison shape mismatch {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Reorder the rows (first axis) so that `out[i] = self[perm[i]]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rows();
        if perm.len() != r {
            return Err(dim_err!("permutation of length {} for {r} rows", perm.len()));
        }
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || core::mem::replace(&mut seen[p], true) {
                return Err(dim_err!("not a permutation: {perm:?}"));
            }
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(self.len());
        for &p in perm {
            data.extend_from_slice(&self.data[p * c..(p + 1) * c]);
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if width == 0 || start + width > c {
            return Err(dim_err!("column slice {start}..{} of {c} columns", start + width));
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + width]);
        }
        Ok(Tensor::from_parts(alloc::vec![r, width], data))
    }

    /// Write `src` into columns `start..` of this matrix.
    pub(crate) fn set_cols(&mut self, start: usize, src: &Self) {
        let c = self.shape[1];
        let (r, w) = (src.shape[0], src.shape[1]);
        for i in 0..r {
            self.data[i * c + start..i * c + start + w]
                .copy_from_slice(&src.data[i * w..(i + 1) * w]);
        }
    }

    /// `Err(NonFinite)` naming `what` if any element is NaN or infinite.
    pub(crate) fn ensure_finite(self, what: &str) -> Result<Self> {
        match first_non_finite(&self.data) {
            None => Ok(self),
            Some(i) => Err(Error::NonFinite {
                location: alloc::format!("{what}, flat index {i}"),
            }),
        }
    }
}
