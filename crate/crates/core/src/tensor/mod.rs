//! Reverse-mode differentiation over dense 5-axis tensors `(n, c, d, h, w)`.
//!
//! The op set is deliberately narrow: exactly what the segmentation supernet
//! needs, each with a hand-written backward rule. Everything is generic over
//! [`Real`] so that training runs in `f32` and gradient checks run in `f64`.

mod active;
mod adam;
mod conv;
mod elementwise;
pub mod gradcheck;
mod loss;
mod norm;
mod pool;
mod resize;
mod tape;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

pub use elementwise::sigmoid;
pub use active::ActivationKind;
pub use adam::{adam_step, AdamConfig, Moments};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::DICE_SMOOTHING;
pub use pool::PoolKind;
pub use resize::resize_tensor;
pub use tape::{Gradients, Tape, Var};

/// Floating-point element type of a tensor.
pub trait Real:
    num_traits::Float
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const NAME: &'static str;
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub const SCALAR: Shape5 = Shape5 {
        n: 1,
        c: 1,
        d: 1,
        h: 1,
        w: 1,
    };

    pub const fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape5 { n, c, d, h, w }
    }

    pub fn from_dims(dims: [usize; 5]) -> Self {
        Shape5::new(dims[0], dims[1], dims[2], dims[3], dims[4])
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.d, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.d * self.h * self.w
    }

    /// Voxels in one `(n, c)` plane.
    pub fn plane(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Shape5 { c, ..*self }
    }

    pub fn with_spatial(&self, s: [usize; 3]) -> Self {
        Shape5 {
            d: s[0],
            h: s[1],
            w: s[2],
            ..*self
        }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.d + d) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.c, self.d, self.h, self.w)
    }
}

/// Dense row-major `(n, c, d, h, w)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5<T> {
    shape: Shape5,
    data: Vec<T>,
}

impl<T: Real> Tensor5<T> {
    pub fn new(shape: Shape5, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            ));
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn zeros(shape: Shape5) -> Self {
        Tensor5 {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn filled(shape: Shape5, v: T) -> Self {
        Tensor5 {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape5, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor5 {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor5 {
            shape: Shape5::SCALAR,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, d, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the same buffer under a shape with equal element count.
    pub fn reshape(self, shape: Shape5) -> Result<Self> {
        Tensor5::new(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor5<U> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Copies the `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [T::zero(); 8];
    let mut xc = x.chunks_exact(8);
    let mut yc = y.chunks_exact(8);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += *a * *b;
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}

#[inline]
pub(crate) fn sum<T: Real>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut xc = x.chunks_exact(8);
    for a in &mut xc {
        for l in 0..8 {
            acc[l] += a[l];
        }
    }
    let mut tail = T::zero();
    for a in xc.remainder() {
        tail += *a;
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}
