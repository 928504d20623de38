//! Dense 4-D tensors in (batch, channel, height, width) layout and the
//! elementary differentiable operations of the engine.
//!
//! Everything is generic over [`Scalar`] so the whole engine runs in either
//! f32 (default) or f64 (gradient checking) without separate code paths.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{
    check, check_concat, check_conv2d, check_conv2d_1x1, check_depth_to_space,
    check_nearest_upsample, check_relu, GradCheckEntry, GradCheckReport,
};
pub use ops::{
    add, clamp_unit, concat_channels, concat_channels_backward, conv2d, conv2d_backward,
    conv2d_backward_raw, conv2d_raw, depth_to_space, depth_to_space_backward, nearest_upsample,
    nearest_upsample_backward, relu, relu_backward,
};
pub use tape::{GradTape, Gradients, VarId};

use rand::Rng;

use crate::error::{Error, Result};

/// Scalar type the engine runs in. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Dense 4-D array in row-major (n, c, h, w) order.
///
/// Extents of 0 are valid and yield an empty tensor. Tensors are immutable
/// in all forward paths; mutation is confined to construction and the
/// optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} (product {})",
                data.len(),
                dims,
                len
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![value; len],
        }
    }

    /// Uniform random tensor in `[lo, hi)`. Values are drawn as f64 so the
    /// f32 and f64 engines see the same stream for a given seed.
    pub fn random_uniform<R: Rng>(rng: &mut R, dims: [usize; 4], lo: f64, hi: f64) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
            .collect();
        Self { dims, data }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        let idx = t.index_of(n, c, y, x);
                        t.data[idx] = f(n, c, y, x);
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index_of(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index_of(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index_of(n, c, y, x);
        self.data[i] = v;
    }

    /// Reinterpret the extents without touching data. The element count must
    /// be preserved; layout is row-major either way.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        Ok(Self {
            dims,
            data: self.data,
        })
    }

    /// Copy out the spatial window `[y0, y0+h) x [x0, x0+w)` of every
    /// batch/channel plane.
    pub fn crop_spatial(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let [n, c, ih, iw] = self.dims;
        if y0 + h > ih || x0 + w > iw {
            return Err(Error::Shape(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                h, w, y0, x0, ih, iw
            )));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    let base = self.index_of(ni, ci, y0 + y, x0);
                    data.extend_from_slice(&self.data[base..base + w]);
                }
            }
        }
        Self::new([n, c, h, w], data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute elementwise difference; tensors must agree in dims.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "max_abs_diff dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Cast between engine precisions through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        }
    }
}

/// Parameters of one convolution: weight `(c_out, c_in, k, k)`, optional
/// bias of length `c_out`, zero padding, stride fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    weight: Tensor4<T>,
    bias: Option<Vec<T>>,
    pad: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Option<Vec<T>>, pad: usize) -> Result<Self> {
        let [c_out, _c_in, kh, kw] = weight.dims();
        if kh != kw {
            return Err(Error::Shape(format!(
                "kernel must be square, got {}x{}",
                kh, kw
            )));
        }
        if kh != 1 && kh != 3 {
            return Err(Error::Contract(format!(
                "kernel size {} unsupported (only 1 and 3)",
                kh
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::Shape(format!(
                    "bias length {} != c_out {}",
                    b.len(),
                    c_out
                )));
            }
        }
        Ok(Self { weight, bias, pad })
    }

    /// Convolution with all-zero weights (and bias when `with_bias`).
    pub fn zeros(c_out: usize, c_in: usize, k: usize, pad: usize, with_bias: bool) -> Result<Self> {
        Self::new(
            Tensor4::zeros([c_out, c_in, k, k]),
            with_bias.then(|| vec![T::zero(); c_out]),
            pad,
        )
    }

    /// 1x1 convolution that maps every channel to itself.
    pub fn identity_1x1(c: usize) -> Self {
        let mut weight = Tensor4::zeros([c, c, 1, 1]);
        for i in 0..c {
            weight.set(i, i, 0, 0, T::one());
        }
        Self {
            weight,
            bias: None,
            pad: 0,
        }
    }

    /// He-style uniform init: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn init_he<R: Rng>(
        rng: &mut R,
        c_out: usize,
        c_in: usize,
        k: usize,
        pad: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let fan_in = (c_in * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Tensor4::random_uniform(rng, [c_out, c_in, k, k], -bound, bound);
        let bias = with_bias.then(|| vec![T::zero(); c_out]);
        Self::new(weight, bias, pad)
    }

    #[inline]
    pub fn weight(&self) -> &Tensor4<T> {
        &self.weight
    }

    #[inline]
    pub fn weight_mut(&mut self) -> &mut Tensor4<T> {
        &mut self.weight
    }

    #[inline]
    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    #[inline]
    pub fn bias_mut(&mut self) -> Option<&mut Vec<T>> {
        self.bias.as_mut()
    }

    /// Split mutable borrow of weight and bias (the optimizer walks both).
    #[inline]
    pub fn weight_bias_mut(&mut self) -> (&mut Tensor4<T>, Option<&mut Vec<T>>) {
        (&mut self.weight, self.bias.as_mut())
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.weight.dims()[0]
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.weight.dims()[1]
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    #[inline]
    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(|b| {
                b.iter()
                    .map(|v| U::from_f64_lossy(v.to_f64().unwrap()))
                    .collect()
            }),
            pad: self.pad,
        }
    }
}
