//! Agent bias: positional offsets `B1 ∈ R^{n×N}` (aggregation) and
//! `B2 ∈ R^{N×n}` (broadcast) assembled from column, row and block components.
//!
//! Column and row components are repeated across the missing spatial axis;
//! block components are bilinearly resized from `h0×w0` to `h×w`.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config_err, dim_err};
use crate::ops::{bilinear_resize, bilinear_resize_adjoint, resize_axis};
use crate::{Result, Scalar, Tensor};

/// Default block-bias base size along each axis.
pub const DEFAULT_BLOCK: usize = 7;
/// Standard deviation of the truncated-normal initialization.
pub const INIT_STD: f64 = 0.02;

/// The six learnable components of one head's agent bias.
///
/// Shapes (agent axis first for `B1`, last for `B2`):
/// `b1_col: n×1×w`, `b1_row: n×h×1`, `b1_block: n×h0×w0`,
/// `b2_col: 1×w×n`, `b2_row: h×1×n`, `b2_block: h0×w0×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBiasParams<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub h0: usize,
    pub w0: usize,
    pub b1_col: Tensor<T>,
    pub b1_row: Tensor<T>,
    pub b1_block: Tensor<T>,
    pub b2_col: Tensor<T>,
    pub b2_row: Tensor<T>,
    pub b2_block: Tensor<T>,
}

/// Component names in storage order.
pub const COMPONENT_NAMES: [&str; 6] = ["b1_col", "b1_row", "b1_block", "b2_col", "b2_row", "b2_block"];

fn component_shapes(n: usize, h: usize, w: usize, h0: usize, w0: usize) -> [[usize; 3]; 6] {
    [
        [n, 1, w],
        [n, h, 1],
        [n, h0, w0],
        [1, w, n],
        [h, 1, n],
        [h0, w0, n],
    ]
}

fn check_sizes(n: usize, h: usize, w: usize, h0: usize, w0: usize) -> Result<()> {
    if n == 0 || h == 0 || w == 0 || h0 == 0 || w0 == 0 {
        return Err(config_err!("agent bias sizes must be >= 1 (n={n}, h={h}, w={w}, h0={h0}, w0={w0})"));
    }
    if h0 > h || w0 > w {
        return Err(config_err!("block bias base {h0}x{w0} exceeds feature map {h}x{w}"));
    }
    Ok(())
}

pub(crate) fn isqrt_exact(n: usize) -> Option<usize> {
    let r = libm::sqrt(n as f64) as usize;
    (r.saturating_sub(1)..=r + 1).find(|&s| s * s == n)
}

/// `n×a×b` (agent axis first) to `a×b×n`.
fn agent_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, a, b) = x.dims3()?;
    x.reshape([n, a * b])?.transpose()?.into_reshape([a, b, n])
}

/// `a×b×n` (agent axis last) to `n×a×b`.
fn agent_first<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b, n) = x.dims3()?;
    x.reshape([a * b, n])?.transpose()?.into_reshape([n, a, b])
}

impl<T: Scalar> AgentBiasParams<T> {
    /// All-zero components; with these the biased kernels reduce to pure agent attention.
    pub fn zeros(n: usize, h: usize, w: usize, h0: usize, w0: usize) -> Result<Self> {
        check_sizes(n, h, w, h0, w0)?;
        let s = component_shapes(n, h, w, h0, w0);
        Ok(AgentBiasParams {
            n,
            h,
            w,
            h0,
            w0,
            b1_col: Tensor::zeros(s[0])?,
            b1_row: Tensor::zeros(s[1])?,
            b1_block: Tensor::zeros(s[2])?,
            b2_col: Tensor::zeros(s[3])?,
            b2_row: Tensor::zeros(s[4])?,
            b2_block: Tensor::zeros(s[5])?,
        })
    }

    /// Truncated-normal components with standard deviation [`INIT_STD`].
    pub fn trunc_normal<R: Rng + ?Sized>(
        n: usize,
        h: usize,
        w: usize,
        h0: usize,
        w0: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::random(n, h, w, h0, w0, |shape| Tensor::trunc_normal(shape, INIT_STD, rng))
    }

    pub(crate) fn random(
        n: usize,
        h: usize,
        w: usize,
        h0: usize,
        w0: usize,
        mut gen: impl FnMut([usize; 3]) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        check_sizes(n, h, w, h0, w0)?;
        let s = component_shapes(n, h, w, h0, w0);
        Ok(AgentBiasParams {
            n,
            h,
            w,
            h0,
            w0,
            b1_col: gen(s[0])?,
            b1_row: gen(s[1])?,
            b1_block: gen(s[2])?,
            b2_col: gen(s[3])?,
            b2_row: gen(s[4])?,
            b2_block: gen(s[5])?,
        })
    }

    /// Assemble from components in [`COMPONENT_NAMES`] order, checking every shape.
    pub fn from_components(n: usize, h: usize, w: usize, h0: usize, w0: usize, parts: [Tensor<T>; 6]) -> Result<Self> {
        check_sizes(n, h, w, h0, w0)?;
        let shapes = component_shapes(n, h, w, h0, w0);
        for ((t, want), name) in parts.iter().zip(&shapes).zip(COMPONENT_NAMES) {
            if t.shape() != want {
                return Err(dim_err!("{name} has shape {:?}, expected {want:?}", t.shape()));
            }
        }
        let [b1_col, b1_row, b1_block, b2_col, b2_row, b2_block] = parts;
        Ok(AgentBiasParams {
            n,
            h,
            w,
            h0,
            w0,
            b1_col,
            b1_row,
            b1_block,
            b2_col,
            b2_row,
            b2_block,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(self.n, self.h, self.w, self.h0, self.w0)?;
        let shapes = component_shapes(self.n, self.h, self.w, self.h0, self.w0);
        for ((t, want), name) in self.components().iter().zip(&shapes).zip(COMPONENT_NAMES) {
            if t.shape() != want {
                return Err(dim_err!("{name} has shape {:?}, expected {want:?}", t.shape()));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> [&Tensor<T>; 6] {
        [
            &self.b1_col,
            &self.b1_row,
            &self.b1_block,
            &self.b2_col,
            &self.b2_row,
            &self.b2_block,
        ]
    }

    pub(crate) fn components_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.b1_col,
            &mut self.b1_row,
            &mut self.b1_block,
            &mut self.b2_col,
            &mut self.b2_row,
            &mut self.b2_block,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.components().iter().map(|t| t.len()).sum()
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    /// `B1 ∈ R^{n×N}`: `B1[a][i·w+j] = col[a][j] + row[a][i] + block'[a][i][j]`.
    pub fn materialize_b1(&self) -> Result<Tensor<T>> {
        self.validate()?;
        let (n, h, w) = (self.n, self.h, self.w);
        let block = bilinear_resize(&agent_last(&self.b1_block)?, h, w)?;
        let (col, row, blk) = (self.b1_col.data(), self.b1_row.data(), block.data());
        let mut out = Vec::with_capacity(n * h * w);
        for a in 0..n {
            for i in 0..h {
                for j in 0..w {
                    out.push(col[a * w + j] + row[a * h + i] + blk[(i * w + j) * n + a]);
                }
            }
        }
        Ok(Tensor::from_parts(alloc::vec![n, h * w], out))
    }

    /// `B2 ∈ R^{N×n}`: `B2[i·w+j][a] = col[j][a] + row[i][a] + block'[i][j][a]`.
    pub fn materialize_b2(&self) -> Result<Tensor<T>> {
        self.validate()?;
        let (n, h, w) = (self.n, self.h, self.w);
        let block = bilinear_resize(&self.b2_block, h, w)?;
        let (col, row, blk) = (self.b2_col.data(), self.b2_row.data(), block.data());
        let mut out = Vec::with_capacity(n * h * w);
        for i in 0..h {
            for j in 0..w {
                for a in 0..n {
                    out.push(col[j * n + a] + row[i * n + a] + blk[(i * w + j) * n + a]);
                }
            }
        }
        Ok(Tensor::from_parts(alloc::vec![h * w, n], out))
    }

    /// Pull gradients with respect to `B1` and `B2` back onto the six components.
    pub fn backward(&self, db1: &Tensor<T>, db2: &Tensor<T>) -> Result<Self> {
        let (n, h, w, h0, w0) = (self.n, self.h, self.w, self.h0, self.w0);
        if db1.shape() != [n, h * w] || db2.shape() != [h * w, n] {
            return Err(dim_err!(
                "bias gradients have shapes {:?}/{:?}, expected [{n}, {}]/[{}, {n}]",
                db1.shape(),
                db2.shape(),
                h * w,
                h * w
            ));
        }
        let mut g = Self::zeros(n, h, w, h0, w0)?;
        let d1 = db1.data();
        let mut blk1 = alloc::vec![T::zero(); h * w * n];
        {
            let col = g.b1_col.data_mut();
            for a in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        col[a * w + j] += d1[a * h * w + i * w + j];
                    }
                }
            }
            let row = g.b1_row.data_mut();
            for a in 0..n {
                for i in 0..h {
                    row[a * h + i] = d1[a * h * w + i * w..a * h * w + (i + 1) * w].iter().copied().sum();
                    for j in 0..w {
                        blk1[(i * w + j) * n + a] = d1[a * h * w + i * w + j];
                    }
                }
            }
        }
        let blk1 = bilinear_resize_adjoint(&Tensor::from_parts(alloc::vec![h, w, n], blk1), h0, w0)?;
        g.b1_block = agent_first(&blk1)?;

        let d2 = db2.data();
        {
            let col = g.b2_col.data_mut();
            let row_len = n;
            for i in 0..h {
                for j in 0..w {
                    for a in 0..n {
                        col[j * row_len + a] += d2[(i * w + j) * n + a];
                    }
                }
            }
            let row = g.b2_row.data_mut();
            for i in 0..h {
                for j in 0..w {
                    for a in 0..n {
                        row[i * n + a] += d2[(i * w + j) * n + a];
                    }
                }
            }
        }
        g.b2_block = bilinear_resize_adjoint(&Tensor::from_parts(alloc::vec![h, w, n], d2.to_vec()), h0, w0)?;
        Ok(g)
    }

    /// Interpolate every component to a new agent count and feature-map size.
    ///
    /// Spatial axes are linearly resampled; the agent axis is resampled as a
    /// `√n×√n` grid when both the old and new counts are perfect squares and
    /// as a 1-D axis otherwise. The block base shrinks only if it would no
    /// longer fit the new map.
    pub fn resize_bias_for(&self, new_n: usize, new_h: usize, new_w: usize) -> Result<Self> {
        self.validate()?;
        if new_n == 0 || new_h == 0 || new_w == 0 {
            return Err(config_err!("resize target sizes must be >= 1, got n={new_n} h={new_h} w={new_w}"));
        }
        let new_h0 = self.h0.min(new_h);
        let new_w0 = self.w0.min(new_w);
        let sp = |t: &Tensor<T>, axis: usize, len: usize| -> Result<Tensor<T>> {
            if t.shape()[axis] == len {
                Ok(t.clone())
            } else {
                resize_axis(t, axis, len)
            }
        };
        let ag = |t: &Tensor<T>, axis: usize| resize_agent_axis(t, axis, self.n, new_n);

        let b1_col = ag(&sp(&self.b1_col, 2, new_w)?, 0)?;
        let b1_row = ag(&sp(&self.b1_row, 1, new_h)?, 0)?;
        let b1_block = ag(&sp(&sp(&self.b1_block, 1, new_h0)?, 2, new_w0)?, 0)?;
        let b2_col = ag(&sp(&self.b2_col, 1, new_w)?, 2)?;
        let b2_row = ag(&sp(&self.b2_row, 0, new_h)?, 2)?;
        let b2_block = ag(&sp(&sp(&self.b2_block, 0, new_h0)?, 1, new_w0)?, 2)?;
        Self::from_components(
            new_n,
            new_h,
            new_w,
            new_h0,
            new_w0,
            [b1_col, b1_row, b1_block, b2_col, b2_row, b2_block],
        )
    }
}

/// Resample the agent axis (`axis` is 0 or 2 of a rank-3 tensor).
fn resize_agent_axis<T: Scalar>(t: &Tensor<T>, axis: usize, n: usize, new_n: usize) -> Result<Tensor<T>> {
    if n == new_n {
        return Ok(t.clone());
    }
    let shape = t.shape().to_vec();
    match (isqrt_exact(n), isqrt_exact(new_n)) {
        (Some(g), Some(ng)) => {
            let rest: usize = shape.iter().product::<usize>() / n;
            let (grid, a0) = if axis == 0 {
                (t.reshape([g, g, rest])?, 0)
            } else {
                (t.reshape([rest, g, g])?, 1)
            };
            let r = resize_axis(&resize_axis(&grid, a0, ng)?, a0 + 1, ng)?;
            let mut out_shape = shape;
            out_shape[axis] = new_n;
            r.into_reshape(out_shape)
        }
        _ => resize_axis(t, axis, new_n),
    }
}
