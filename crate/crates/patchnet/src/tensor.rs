//! Dense rank-3 and rank-4 tensors with explicit channel/spatial semantics.
//!
//! `Tensor3` carries feature maps as (channels, height, width), row-major
//! within a channel. `Tensor4` carries convolution weights as
//! (out_channels, in_channels, kernel_h, kernel_w). Everything is `f64`.

use crate::error::{Error, Result};

/// A (channels, height, width) feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zero tensor. Dimensions must be >= 1.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels >= 1 && height >= 1 && width >= 1,
            "Tensor3 dimensions must be >= 1, got {channels}x{height}x{width}"
        );
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels < 1 || height < 1 || width < 1 {
            return Err(Error::InvalidArgument(format!(
                "Tensor3 dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "Tensor3 data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// Row-major slice of one channel.
    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Elementwise `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor3, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

/// A (out_channels, in_channels, kernel_h, kernel_w) weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        assert!(
            out_channels >= 1 && in_channels >= 1 && kernel_h >= 1 && kernel_w >= 1,
            "Tensor4 dimensions must be >= 1"
        );
        Tensor4 {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
        }
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if out_channels < 1 || in_channels < 1 || kernel_h < 1 || kernel_w < 1 {
            return Err(Error::InvalidArgument(
                "Tensor4 dimensions must be >= 1".to_string(),
            ));
        }
        let expect = out_channels * in_channels * kernel_h * kernel_w;
        if data.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "Tensor4 data length {} does not match {out_channels}x{in_channels}x{kernel_h}x{kernel_w}",
                data.len()
            )));
        }
        Ok(Tensor4 {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        })
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    #[inline]
    pub fn at_mut(&mut self, o: usize, i: usize, ky: usize, kx: usize) -> &mut f64 {
        &mut self.data[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Contiguous slice of one filter (all in-channels and kernel taps).
    #[inline]
    pub fn filter(&self, o: usize) -> &[f64] {
        let span = self.in_channels * self.kernel_h * self.kernel_w;
        &self.data[o * span..(o + 1) * span]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_h == other.kernel_h
            && self.kernel_w == other.kernel_w
    }

    pub fn add_scaled(&mut self, other: &Tensor4, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }
}
