//! Dense row-major tensors and the handful of numeric kernels the rest of
//! the crate is built on: matmul, 2-D cross-correlation, reductions and
//! elementwise maps.
//!
//! Every operation checks its output for NaN/Inf and surfaces an error
//! instead of letting a non-finite value propagate. Reductions accumulate
//! in `f64` regardless of the element type. Parallelism (rayon) is only
//! over disjoint output regions, so results are bit-identical no matter
//! the thread count.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]: `f32` for training speed, `f64` for
/// gradient-check headroom.
pub trait Scalar:
    Float + NumAssign + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const BYTES: usize;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Dense N-dimensional array, row-major, `N x C x H x W` for image data.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::ShapeMismatch(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape).expect("positive extents");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("positive extents");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("from_vec")?;
        Ok(t)
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n})",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data.iter().map(|&v| f(v)).collect();
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite("map_elementwise")?;
        Ok(t)
    }

    pub fn ew_add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "ew_add", |a, b| a + b)
    }

    pub fn ew_sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "ew_sub", |a, b| a - b)
    }

    pub fn ew_mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "ew_mul", |a, b| a * b)
    }

    /// Binary elementwise op. Shapes must match exactly, with one accepted
    /// broadcast: `other` may be a per-channel vector (length `C` against a
    /// rank-2 `N x C` or rank-4 `N x C x H x W` tensor).
    fn zip_with(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let data = if self.shape == other.shape {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect()
        } else if other.rank() == 1 && self.channel_extent() == Some(other.len()) {
            let c = other.len();
            let inner: usize = self.shape[2..].iter().product();
            self.data
                .iter()
                .enumerate()
                .map(|(i, &a)| f(a, other.data[(i / inner) % c]))
                .collect()
        } else {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        };
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite(op)?;
        Ok(t)
    }

    fn channel_extent(&self) -> Option<usize> {
        match self.rank() {
            2 | 4 => Some(self.shape[1]),
            _ => None,
        }
    }

    /// Matrix product of rank-2 tensors: `m x k` by `k x n`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} by {:?}",
                self.shape, rhs.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, &rhs.data, &mut out, m, k, n);
        let t = Tensor {
            shape: vec![m, n],
            data: out,
        };
        t.ensure_finite("matmul")?;
        Ok(t)
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "transpose expects rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    /// Zero-padded 2-D cross-correlation.
    ///
    /// `self` is `N x C_in x H x W`, `kernel` is `C_out x C_in x k x k`;
    /// output is `N x C_out x H' x W'` with `H' = (H + 2 pad - k) / stride + 1`.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let geom = ConvGeom::resolve(self.shape(), kernel.shape(), stride, pad)?;
        let mut out = vec![T::zero(); geom.batch * geom.c_out * geom.out_h * geom.out_w];
        let out_per_image = geom.c_out * geom.out_h * geom.out_w;
        out.par_chunks_mut(out_per_image)
            .enumerate()
            .for_each(|(n, out_n)| {
                let input_n = &self.data[n * geom.c_in * geom.in_h * geom.in_w..]
                    [..geom.c_in * geom.in_h * geom.in_w];
                let cols = im2col(input_n, &geom);
                // kernel viewed as (c_out) x (c_in*k*k); cols are (c_in*k*k) x (out_h*out_w)
                matmul_serial(
                    &kernel.data,
                    &cols,
                    out_n,
                    geom.c_out,
                    geom.c_in * geom.k * geom.k,
                    geom.out_h * geom.out_w,
                );
            });
        let t = Tensor {
            shape: vec![geom.batch, geom.c_out, geom.out_h, geom.out_w],
            data: out,
        };
        t.ensure_finite("conv2d")?;
        Ok(t)
    }

    /// Arithmetic mean over the listed axes (accumulated in `f64`).
    /// Reduced axes are removed from the shape; reducing all axes yields a
    /// rank-0 tensor.
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Tensor<T>> {
        if axes.is_empty() {
            return Err(Error::InvalidParam("reduce_mean: no axes given".into()));
        }
        let mut reduce = vec![false; self.rank()];
        for &ax in axes {
            if ax >= self.rank() {
                return Err(Error::InvalidParam(format!(
                    "reduce_mean: axis {ax} out of range for rank {}",
                    self.rank()
                )));
            }
            if reduce[ax] {
                return Err(Error::InvalidParam(format!(
                    "reduce_mean: duplicate axis {ax}"
                )));
            }
            reduce[ax] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduce)
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduce)
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        let out_len: usize = out_shape.iter().product();
        let mut acc = vec![0.0f64; out_len];

        // Strides of the kept axes inside the output tensor.
        let mut out_strides = vec![0usize; self.rank()];
        let mut s = 1;
        for ax in (0..self.rank()).rev() {
            if !reduce[ax] {
                out_strides[ax] = s;
                s *= self.shape[ax];
            }
        }
        let mut index = vec![0usize; self.rank()];
        for &v in &self.data {
            let mut off = 0;
            for ax in 0..self.rank() {
                off += index[ax] * out_strides[ax];
            }
            acc[off] += v.as_f64();
            for ax in (0..self.rank()).rev() {
                index[ax] += 1;
                if index[ax] < self.shape[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        let inv = 1.0 / count as f64;
        let data: Vec<T> = acc.into_iter().map(|a| T::from_f64(a * inv)).collect();
        let t = Tensor {
            shape: out_shape,
            data,
        };
        t.ensure_finite("reduce_mean")?;
        Ok(t)
    }
}

/// Shapes and derived extents of one conv application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub(crate) fn resolve(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: input {input:?}, kernel {kernel:?}"
            )));
        }
        let (batch, c_in, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (c_out, kc_in, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc_in != c_in {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: input has {c_in} channels, kernel expects {kc_in}"
            )));
        }
        if kh != kw {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: kernel must be square, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidParam("conv2d: stride must be >= 1".into()));
        }
        let k = kh;
        if k > in_h + 2 * pad || k > in_w + 2 * pad {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: kernel {k} larger than padded input {}x{}",
                in_h + 2 * pad,
                in_w + 2 * pad
            )));
        }
        let out_h = (in_h + 2 * pad - k) / stride + 1;
        let out_w = (in_w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            batch,
            c_in,
            in_h,
            in_w,
            c_out,
            k,
            stride,
            pad,
            out_h,
            out_w,
        })
    }
}

/// Unfold one image (`c_in * in_h * in_w`) into a `(c_in*k*k) x (out_h*out_w)`
/// column matrix; out-of-bounds taps read zero.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let cols_w = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.c_in * g.k * g.k * cols_w];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        dst[oy * g.out_w + ox] =
                            input[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a `(c_in*k*k) x (out_h*out_w)` column matrix back into an image,
/// accumulating overlapping taps. Adjoint of [`im2col`].
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let cols_w = g.out_h * g.out_w;
    let mut image = vec![T::zero(); g.c_in * g.in_h * g.in_w];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        image[(c * g.in_h + iy as usize) * g.in_w + ix as usize] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
    image
}

/// `out = a (m x k) * b (k x n)`, parallel over output rows. Each output
/// element is accumulated serially in k-order, so the result does not depend
/// on the thread count.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    const PAR_THRESHOLD: usize = 1 << 16;
    if m > 1 && m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            matmul_row(&a[i * k..(i + 1) * k], b, row, k, n);
        });
    } else {
        matmul_serial(a, b, out, m, k, n);
    }
}

pub(crate) fn matmul_serial<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, &mut out[i * n..(i + 1) * n], k, n);
    }
}

#[inline]
fn matmul_row<T: Scalar>(a_row: &[T], b: &[T], out_row: &mut [T], k: usize, n: usize) {
    out_row.fill(T::zero());
    for (kk, &a_ik) in a_row.iter().enumerate().take(k) {
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a_ik * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    // Naive reference kernels, kept independent of the implementations above.

    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.at(&[i, kk]) * b.at(&[kk, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
        for ni in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(&[ni, ci, iy as usize, ix as usize])
                                        * w.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                        out.set(&[ni, co, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| {
                let denom = x.abs().max(y.abs()).max(1e-12);
                (x - y).abs() / denom
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(
            p.matmul(&m).unwrap().data(),
            &[5.0, 6.0, 0.0, 0.0][..]
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(1);
        let a: Tensor<f64> = rng.normal_tensor(&[3, 4], 1.0);
        let b: Tensor<f64> = rng.normal_tensor(&[4, 2], 1.0);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert!(max_rel_err(&got, &want) < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn conv_scalar_kernel() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_impulse_reproduces_flipped_kernel() {
        let k = 3;
        let mut x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        x.set(&[0, 0, 0, 0], 1.0);
        let w =
            Tensor::from_vec(&[1, 1, k, k], (1..=9).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        // pad = k-1 gives the full correlation: the kernel shows up rotated 180 degrees.
        let y = x.conv2d(&w, 1, k - 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, k, k]);
        let flipped: Vec<f64> = (1..=9).rev().map(|v| v as f64).collect();
        assert_eq!(y.data(), &flipped[..]);
    }

    #[test]
    fn conv_matches_six_loop_reference() {
        let mut rng = Rng::new(2);
        let x: Tensor<f64> = rng.normal_tensor(&[2, 3, 8, 8], 1.0);
        let w: Tensor<f64> = rng.normal_tensor(&[4, 3, 3, 3], 1.0);
        let got = x.conv2d(&w, 2, 1).unwrap();
        let want = conv_oracle(&x, &w, 2, 1);
        assert_eq!(got.shape(), want.shape());
        assert!(max_rel_err(&got, &want) < 1e-12);
    }

    #[test]
    fn conv_kernel_larger_than_padded_input_is_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(x.conv2d(&w, 1, 1).is_err());
    }

    #[test]
    fn reduce_mean_full() {
        let t = Tensor::from_vec(&[4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let m = t.reduce_mean(&[0]).unwrap();
        assert_eq!(m.rank(), 0);
        assert_eq!(m.data(), &[2.5][..]);
    }

    #[test]
    fn reduce_mean_constant() {
        let t = Tensor::<f64>::full(&[2, 3, 4], 7.25);
        let m = t.reduce_mean(&[0, 1, 2]).unwrap();
        assert_eq!(m.data(), &[7.25][..]);
    }

    #[test]
    fn reduce_mean_matches_loop() {
        let mut rng = Rng::new(3);
        let t: Tensor<f64> = rng.normal_tensor(&[2, 3, 4], 1.0);
        let got = t.reduce_mean(&[2]).unwrap();
        assert_eq!(got.shape(), &[2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += t.at(&[i, j, k]);
                }
                let want = acc / 4.0;
                assert!((got.at(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_mean_bad_axis_is_error() {
        let t = Tensor::<f64>::zeros(&[2, 2]);
        assert!(t.reduce_mean(&[2]).is_err());
        assert!(t.reduce_mean(&[]).is_err());
    }

    #[test]
    fn map_identity_and_ew_ops() {
        let mut rng = Rng::new(4);
        let t: Tensor<f64> = rng.normal_tensor(&[3, 5], 1.0);
        assert_eq!(t.map(|x| x).unwrap().data(), t.data());
        let z = Tensor::<f64>::zeros(&[3, 5]);
        assert_eq!(t.ew_add(&z).unwrap().data(), t.data());

        let u: Tensor<f64> = rng.normal_tensor(&[3, 5], 1.0);
        let prod = t.ew_mul(&u).unwrap();
        for i in 0..t.len() {
            assert_eq!(prod.data()[i], t.data()[i] * u.data()[i]);
        }
    }

    #[test]
    fn per_channel_broadcast() {
        let t = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let v = Tensor::from_vec(&[2], vec![10.0, 100.0]).unwrap();
        let got = t.ew_add(&v).unwrap();
        assert_eq!(
            got.data(),
            &[10.0, 11.0, 12.0, 13.0, 104.0, 105.0, 106.0, 107.0][..]
        );
        let got2 = t.reshape(&[4, 2]).unwrap().ew_mul(&v).unwrap();
        assert_eq!(got2.data(), &[0.0, 100.0, 20.0, 300.0, 40.0, 500.0, 60.0, 700.0][..]);
    }

    #[test]
    fn incompatible_shapes_are_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        assert!(a.ew_add(&b).is_err());
    }

    #[test]
    fn non_finite_is_surfaced() {
        let t = Tensor::from_vec(&[2], vec![1.0f64, 2.0]).unwrap();
        assert!(t.map(|x| x.ln()).is_ok());
        assert!(t.map(|x| (x - 1.0).ln()).is_err()); // ln(0) = -inf
        assert!(Tensor::from_vec(&[1], vec![f64::NAN]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn prop_matmul_matches_oracle(seed in 0u64..1_000_000, m in 1usize..6, k in 1usize..6, n in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f64> = rng.normal_tensor(&[m, k], 1.0);
            let b: Tensor<f64> = rng.normal_tensor(&[k, n], 1.0);
            let got = a.matmul(&b).unwrap();
            let want = matmul_oracle(&a, &b);
            prop_assert!(max_rel_err(&got, &want) < 1e-6);
        }

        #[test]
        fn prop_conv_matches_oracle(
            seed in 0u64..1_000_000,
            c_in in 1usize..3,
            c_out in 1usize..3,
            hw in 3usize..8,
            k in 1usize..4,
            stride in 1usize..3,
            pad in 0usize..2,
        ) {
            let mut rng = Rng::new(seed);
            let x: Tensor<f64> = rng.normal_tensor(&[2, c_in, hw, hw], 1.0);
            let w: Tensor<f64> = rng.normal_tensor(&[c_out, c_in, k, k], 1.0);
            let got = x.conv2d(&w, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, stride, pad);
            prop_assert!(max_rel_err(&got, &want) < 1e-6);
        }

        #[test]
        fn prop_reduce_mean_matches_oracle(seed in 0u64..1_000_000, a in 1usize..4, b in 1usize..4, c in 1usize..4) {
            let mut rng = Rng::new(seed);
            let t: Tensor<f64> = rng.normal_tensor(&[a, b, c], 1.0);
            let got = t.reduce_mean(&[1]).unwrap();
            for i in 0..a {
                for j in 0..c {
                    let mut acc = 0.0;
                    for kk in 0..b {
                        acc += t.at(&[i, kk, j]);
                    }
                    prop_assert!((got.at(&[i, j]) - acc / b as f64).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn prop_ew_mul_matches_loop(seed in 0u64..1_000_000, n in 1usize..40) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f64> = rng.normal_tensor(&[n], 1.0);
            let b: Tensor<f64> = rng.normal_tensor(&[n], 1.0);
            let got = a.ew_mul(&b).unwrap();
            for i in 0..n {
                prop_assert_eq!(got.data()[i], a.data()[i] * b.data()[i]);
            }
        }
    }
}
