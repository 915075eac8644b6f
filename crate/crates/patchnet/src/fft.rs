//! Radix-2 2D FFT over square or rectangular power-of-two planes.

use crate::error::{Error, Result};

/// A complex-valued plane stored as separate real and imaginary parts,
/// row-major. Dimensions must be powers of two.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexPlane {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if !height.is_power_of_two() || !width.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "ComplexPlane dimensions must be powers of two, got {height}x{width}"
            )));
        }
        Ok(ComplexPlane {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        })
    }

    pub fn from_real(height: usize, width: usize, re: &[f64]) -> Result<Self> {
        let mut plane = Self::zeros(height, width)?;
        if re.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "ComplexPlane real data length {} does not match {height}x{width}",
                re.len()
            )));
        }
        plane.re.copy_from_slice(re);
        Ok(plane)
    }
}

/// In-place iterative radix-2 Cooley-Tukey on interleaved slices.
/// `sign` is -1 for the forward transform, +1 for the inverse.
fn fft1d(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cur_re, mut cur_im) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let a = start + k;
                let b = start + k + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// 2D FFT: rows then columns. The forward transform is unnormalized; the
/// inverse applies the 1/(H*W) factor so that inverse(forward(x)) == x.
pub fn fft2d(plane: &ComplexPlane, inverse: bool) -> Result<ComplexPlane> {
    if !plane.height.is_power_of_two() || !plane.width.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft2d: dimensions must be powers of two, got {}x{}",
            plane.height, plane.width
        )));
    }
    let (h, w) = (plane.height, plane.width);
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = plane.clone();

    for y in 0..h {
        fft1d(&mut out.re[y * w..(y + 1) * w], &mut out.im[y * w..(y + 1) * w], sign);
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = out.re[y * w + x];
            col_im[y] = out.im[y * w + x];
        }
        fft1d(&mut col_re, &mut col_im, sign);
        for y in 0..h {
            out.re[y * w + x] = col_re[y];
            out.im[y * w + x] = col_im[y];
        }
    }
    if inverse {
        let norm = 1.0 / (h * w) as f64;
        for v in &mut out.re {
            *v *= norm;
        }
        for v in &mut out.im {
            *v *= norm;
        }
    }
    Ok(out)
}
