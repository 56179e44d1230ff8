//! Dense building blocks of the transformer backbone, each with a
//! hand-written backward pass.

use rand::Rng;

use crate::error::dim_err;
use crate::ops::{add_row_vector, column_sums, matmul, matmul_at, matmul_bt};
use crate::{Result, Scalar, Tensor};

/// `y = x·weight + bias`, weight stored `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Result<Self> {
        Ok(Linear {
            weight: Tensor::trunc_normal([input, output], 0.02, rng)?,
            bias: if bias { Some(Tensor::zeros([output])?) } else { None },
        })
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = matmul(x, &self.weight)?;
        if let Some(b) = &self.bias {
            add_row_vector(&mut y, b);
        }
        Ok(y)
    }

    /// Returns `(dx, grads)` for the input that produced the forward pass.
    pub fn backward(&self, x: &Tensor<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let dx = matmul_bt(grad, &self.weight)?;
        let grads = Linear {
            weight: matmul_at(x, grad)?,
            bias: self.bias.as_ref().map(|_| column_sums(grad)),
        };
        Ok((dx, grads))
    }
}

/// Row-wise layer normalization with affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-row statistics kept for the backward pass.
pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    rstd: alloc::vec::Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: Tensor::full([dim], T::one())?,
            beta: Tensor::zeros([dim])?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn num_params(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        let (rows, cols) = x.dims2()?;
        if cols != self.gamma.len() {
            return Err(dim_err!("layer norm over {} features got {cols}", self.gamma.len()));
        }
        let n = T::from_usize(cols).unwrap();
        let eps = T::of(self.eps);
        let mut xhat = x.clone();
        let mut rstd = alloc::vec::Vec::with_capacity(rows);
        for row in xhat.data_mut().chunks_exact_mut(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
        }
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut y = xhat.clone();
        for row in y.data_mut().chunks_exact_mut(cols) {
            for ((v, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        Ok((y, LayerNormCache { xhat, rstd }))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let cols = self.gamma.len();
        if grad.shape() != cache.xhat.shape() {
            return Err(dim_err!("layer norm gradient has shape {:?}", grad.shape()));
        }
        let n = T::from_usize(cols).unwrap();
        let g = self.gamma.data();
        let mut dgamma = alloc::vec![T::zero(); cols];
        let mut dbeta = alloc::vec![T::zero(); cols];
        let mut dx = grad.clone();
        let rows = dx.data_mut().chunks_exact_mut(cols);
        for ((dx_row, xh), &r) in rows.zip(cache.xhat.data().chunks_exact(cols)).zip(&cache.rstd) {
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for j in 0..cols {
                let dy = dx_row[j];
                dgamma[j] += dy * xh[j];
                dbeta[j] += dy;
                let d = dy * g[j];
                sum_d += d;
                sum_dx += d * xh[j];
                dx_row[j] = d;
            }
            for j in 0..cols {
                dx_row[j] = r * (dx_row[j] - sum_d / n - xh[j] * sum_dx / n);
            }
        }
        let grads = LayerNorm {
            gamma: Tensor::from_parts(alloc::vec![cols], dgamma),
            beta: Tensor::from_parts(alloc::vec![cols], dbeta),
            eps: self.eps,
        };
        Ok((dx, grads))
    }
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct MlpCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::init(dim, hidden, true, rng)?,
            fc2: Linear::init(hidden, dim, true, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.fc1.num_params() + self.fc2.num_params()
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let pre = self.fc1.forward(x)?;
        let act = pre.map(gelu);
        let y = self.fc2.forward(&act)?;
        Ok((y, MlpCache { x: x.clone(), pre, act }))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, cache: &MlpCache<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (dact, fc2) = self.fc2.backward(&cache.act, grad)?;
        let dpre = dact.zip_map(&cache.pre, |g, p| g * gelu_derivative(p))?;
        let (dx, fc1) = self.fc1.backward(&cache.x, &dpre)?;
        Ok((dx, Mlp { fc1, fc2 }))
    }
}
