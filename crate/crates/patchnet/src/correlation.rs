//! Patch correlation layer: template crop, patch splitting, Fourier
//! reweighting, and the multi-channel correlation map over a search crop.

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::fft::{fft2d, ComplexPlane};
use crate::kernels::conv2d_valid;
use crate::ppm::Image;
use crate::tensor::{Tensor3, Tensor4};

/// Architecture of the matcher: patch grid, crop sizes and correlation stride.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationConfig {
    /// Patches per template side; the grid has `patches_per_side^2` patches.
    pub patches_per_side: usize,
    /// Patch side length in pixels; must be a power of two.
    pub patch_size: usize,
    /// Template crop side; equals `patches_per_side * patch_size`.
    pub template_size: usize,
    /// Search crop side in pixels.
    pub search_size: usize,
    /// Stride of the correlation layer over the search crop.
    pub corr_stride: usize,
    /// Image channels (3 for RGB).
    pub channels: usize,
    /// Optional ReLU between aggregation stages. Experimental; off by
    /// default and not persisted in weight files.
    pub relu_between_stages: bool,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            patches_per_side: 8,
            patch_size: 8,
            template_size: 64,
            search_size: 156,
            corr_stride: 4,
            channels: 3,
            relu_between_stages: false,
        }
    }
}

impl CorrelationConfig {
    /// Number of aggregation stages: each stage reduces the patch grid 2x
    /// per side, ending at a single channel.
    pub fn stage_count(&self) -> usize {
        self.patches_per_side.trailing_zeros() as usize
    }

    /// Side length of the correlation map.
    pub fn corr_map_size(&self) -> usize {
        (self.search_size - self.patch_size) / self.corr_stride + 1
    }

    /// Side length of the final response map after all stages.
    pub fn response_map_size(&self) -> usize {
        let mut x = self.corr_map_size();
        for _ in 0..self.stage_count() {
            x = (x - 2) / 2;
        }
        x
    }

    /// Crop pixels per response map cell: corr_stride * 2^stages.
    pub fn effective_stride(&self) -> f64 {
        (self.corr_stride * (1 << self.stage_count())) as f64
    }

    /// Context factor of the search crop. Tied to the size ratio so the
    /// object appears at template resolution inside the search crop.
    pub fn search_context(&self) -> f64 {
        self.search_size as f64 / self.template_size as f64
    }

    /// Crop-pixel coordinate (continuous) of response cell `m` along one
    /// axis: the center of the cell's pooling receptive field.
    pub fn response_cell_center(&self, m: usize) -> f64 {
        let stages = self.stage_count();
        let pow = (1usize << stages) as f64;
        let corr_index = pow * m as f64 + 1.5 * (pow - 1.0);
        corr_index * self.corr_stride as f64 + self.patch_size as f64 / 2.0
    }

    /// Response cell whose receptive field contains crop coordinate `c`,
    /// clamped to the map.
    pub fn cell_of_crop_coord(&self, c: f64) -> usize {
        let m = ((c - self.response_cell_center(0)) / self.effective_stride()).round();
        (m.max(0.0) as usize).min(self.response_map_size() - 1)
    }

    /// Full-model structural validation; pipeline entry points call this.
    pub fn validate(&self) -> Result<()> {
        let n = self.patches_per_side;
        let k = self.patch_size;
        if !k.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "patch_size must be a power of two, got {k}"
            )));
        }
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::InvalidArgument(format!(
                "patches_per_side must be a power of two >= 4, got {n}"
            )));
        }
        if self.template_size != n * k {
            return Err(Error::InvalidArgument(format!(
                "template_size {} != patches_per_side {n} * patch_size {k}",
                self.template_size
            )));
        }
        if self.search_size < self.template_size {
            return Err(Error::InvalidArgument(format!(
                "search_size {} < template_size {}",
                self.search_size, self.template_size
            )));
        }
        if self.corr_stride < 1 {
            return Err(Error::InvalidArgument("corr_stride must be >= 1".to_string()));
        }
        if self.channels < 1 {
            return Err(Error::InvalidArgument("channels must be >= 1".to_string()));
        }
        // Each stage applies a valid 3x3 conv (shrink by 2) then a 2x2/2 pool,
        // so the running size must stay even and positive.
        let mut x = self.corr_map_size();
        for stage in 0..self.stage_count() {
            if x < 4 || (x - 2) % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "search_size {} yields spatial size {x} at stage {stage}, \
                     which cannot be conv+pooled; adjust search_size/corr_stride",
                    self.search_size
                )));
            }
            x = (x - 2) / 2;
        }
        Ok(())
    }
}

/// Mirror-symmetric Fourier coefficient map, shared by all patches and
/// channels. Parameters are stored for the non-mirrored quadrant only and
/// reflected on materialization, so symmetry holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    size: usize,
    quadrant: Vec<f64>,
}

impl FourierCoefficients {
    fn quadrant_side(size: usize) -> usize {
        size / 2 + 1
    }

    /// Identity reweighting: all coefficients one.
    pub fn identity(size: usize) -> Self {
        let q = Self::quadrant_side(size);
        FourierCoefficients {
            size,
            quadrant: vec![1.0; q * q],
        }
    }

    pub fn from_quadrant(size: usize, quadrant: Vec<f64>) -> Result<Self> {
        let q = Self::quadrant_side(size);
        if quadrant.len() != q * q {
            return Err(Error::InvalidArgument(format!(
                "quadrant length {} != {q}x{q}",
                quadrant.len()
            )));
        }
        Ok(FourierCoefficients { size, quadrant })
    }

    /// Builds coefficients from a full KxK map, verifying mirror symmetry.
    pub fn from_map(size: usize, map: &[f64]) -> Result<Self> {
        if map.len() != size * size {
            return Err(Error::InvalidArgument(format!(
                "coefficient map length {} != {size}x{size}",
                map.len()
            )));
        }
        for u in 0..size {
            for v in 0..size {
                let mu = (size - u) % size;
                let mv = (size - v) % size;
                if map[u * size + v] != map[mu * size + v] || map[u * size + v] != map[u * size + mv]
                {
                    return Err(Error::InvariantViolation(format!(
                        "coefficient map is not mirror-symmetric at ({u},{v})"
                    )));
                }
            }
        }
        let q = Self::quadrant_side(size);
        let mut quadrant = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..q {
                quadrant[a * q + b] = map[a * size + b];
            }
        }
        Ok(FourierCoefficients { size, quadrant })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn quadrant(&self) -> &[f64] {
        &self.quadrant
    }

    pub fn quadrant_mut(&mut self) -> &mut [f64] {
        &mut self.quadrant
    }

    /// The full KxK map with mirrored entries filled in.
    pub fn materialize(&self) -> Vec<f64> {
        let k = self.size;
        let q = Self::quadrant_side(k);
        let mut map = vec![0.0; k * k];
        for u in 0..k {
            let a = u.min(k - u);
            for v in 0..k {
                let b = v.min(k - v);
                map[u * k + v] = self.quadrant[a * q + b];
            }
        }
        map
    }

    /// Folds a gradient over the full map back onto the quadrant parameters
    /// (each parameter accumulates all of its mirror images).
    pub fn project_full_gradient(&self, full: &[f64]) -> Vec<f64> {
        let k = self.size;
        let q = Self::quadrant_side(k);
        let mut grad = vec![0.0; q * q];
        for u in 0..k {
            let a = u.min(k - u);
            for v in 0..k {
                let b = v.min(k - v);
                grad[a * q + b] += full[u * k + v];
            }
        }
        grad
    }
}

/// The replaceable weights of the correlation layer: one filter per patch,
/// in row-major patch order, plus the box the template was cropped from.
#[derive(Debug, Clone)]
pub struct TemplateFilterBank {
    pub filters: Tensor4,
    pub source_box: BBox,
}

/// Geometry of a square crop: maps between continuous crop coordinates
/// (pixel i covers [i, i+1)) and continuous frame coordinates.
#[derive(Debug, Clone, Copy)]
pub struct CropGeometry {
    pub center_x: f64,
    pub center_y: f64,
    /// Frame pixels per crop pixel.
    pub scale: f64,
    pub out_size: usize,
}

impl CropGeometry {
    pub fn for_box(b: &BBox, out_size: usize, context_factor: f64) -> Result<Self> {
        if b.width() <= 1.0 || b.height() <= 1.0 {
            return Err(Error::DegenerateInput(format!(
                "box {:.2}x{:.2} is too small to crop",
                b.width(),
                b.height()
            )));
        }
        let side = context_factor * b.width().max(b.height());
        let (cx, cy) = b.center();
        Ok(CropGeometry {
            center_x: cx,
            center_y: cy,
            scale: side / out_size as f64,
            out_size,
        })
    }

    #[inline]
    pub fn frame_coord(&self, crop_coord: f64, center: f64) -> f64 {
        (crop_coord - self.out_size as f64 / 2.0) * self.scale + center
    }

    #[inline]
    pub fn crop_coord(&self, frame_coord: f64, center: f64) -> f64 {
        (frame_coord - center) / self.scale + self.out_size as f64 / 2.0
    }
}

/// Crops a square region centered on `b` (side = context * max box side),
/// bilinearly resampled to `out_size`, scaled to [0,1]. Samples outside the
/// frame are filled with the frame's per-channel mean intensity.
pub fn crop_and_warp(
    frame: &Image,
    b: &BBox,
    out_size: usize,
    context_factor: f64,
) -> Result<Tensor3> {
    let geom = CropGeometry::for_box(b, out_size, context_factor)?;
    let means = frame.channel_means();
    let (fw, fh) = (frame.width as isize, frame.height as isize);

    let mut out = Tensor3::zeros(3, out_size, out_size);
    for i in 0..out_size {
        let fy = geom.frame_coord(i as f64 + 0.5, geom.center_y) - 0.5;
        let y0 = fy.floor() as isize;
        let wy = fy - y0 as f64;
        for j in 0..out_size {
            let fx = geom.frame_coord(j as f64 + 0.5, geom.center_x) - 0.5;
            let x0 = fx.floor() as isize;
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let tap = |x: isize, y: isize| -> f64 {
                    if x < 0 || y < 0 || x >= fw || y >= fh {
                        means[c]
                    } else {
                        frame.pixel(x as usize, y as usize)[c] as f64
                    }
                };
                let v = (1.0 - wy) * ((1.0 - wx) * tap(x0, y0) + wx * tap(x0 + 1, y0))
                    + wy * ((1.0 - wx) * tap(x0, y0 + 1) + wx * tap(x0 + 1, y0 + 1));
                *out.at_mut(c, i, j) = v / 255.0;
            }
        }
    }
    Ok(out)
}

/// Splits a (channels, N*K, N*K) template into N^2 patch filters in
/// row-major patch order.
pub fn split_patches(template: &Tensor3, config: &CorrelationConfig) -> Result<Tensor4> {
    let n = config.patches_per_side;
    let k = config.patch_size;
    if template.height != n * k || template.width != n * k || template.channels != config.channels {
        return Err(Error::InvalidArgument(format!(
            "split_patches: template {}x{}x{} does not match config {}x{}x{}",
            template.channels,
            template.height,
            template.width,
            config.channels,
            n * k,
            n * k
        )));
    }
    let mut filters = Tensor4::zeros(n * n, config.channels, k, k);
    for row in 0..n {
        for col in 0..n {
            let p = row * n + col;
            for c in 0..config.channels {
                for ky in 0..k {
                    for kx in 0..k {
                        *filters.at_mut(p, c, ky, kx) = template.at(c, row * k + ky, col * k + kx);
                    }
                }
            }
        }
    }
    Ok(filters)
}

/// Reassembles the template from its patch filters; inverse of
/// `split_patches`.
pub fn reassemble_patches(filters: &Tensor4, config: &CorrelationConfig) -> Result<Tensor3> {
    let n = config.patches_per_side;
    let k = config.patch_size;
    if filters.out_channels != n * n || filters.kernel_h != k || filters.kernel_w != k {
        return Err(Error::InvalidArgument(
            "reassemble_patches: filter shape does not match config".to_string(),
        ));
    }
    let mut template = Tensor3::zeros(filters.in_channels, n * k, n * k);
    for row in 0..n {
        for col in 0..n {
            let p = row * n + col;
            for c in 0..filters.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        *template.at_mut(c, row * k + ky, col * k + kx) = filters.at(p, c, ky, kx);
                    }
                }
            }
        }
    }
    Ok(template)
}

/// Forward FFT of every (filter, channel) kernel plane.
pub fn patch_spectra(filters: &Tensor4) -> Result<Vec<ComplexPlane>> {
    let k = filters.kernel_h;
    if filters.kernel_w != k {
        return Err(Error::InvalidArgument(
            "patch kernels must be square".to_string(),
        ));
    }
    let mut spectra = Vec::with_capacity(filters.out_channels * filters.in_channels);
    for f in 0..filters.out_channels {
        for c in 0..filters.in_channels {
            let mut re = vec![0.0; k * k];
            for ky in 0..k {
                for kx in 0..k {
                    re[ky * k + kx] = filters.at(f, c, ky, kx);
                }
            }
            spectra.push(fft2d(&ComplexPlane::from_real(k, k, &re)?, false)?);
        }
    }
    Ok(spectra)
}

/// Rebuilds spatial filters from cached spectra under a coefficient map.
pub fn reweight_from_spectra(
    spectra: &[ComplexPlane],
    coeff_map: &[f64],
    out_channels: usize,
    in_channels: usize,
    k: usize,
) -> Result<Tensor4> {
    let mut filters = Tensor4::zeros(out_channels, in_channels, k, k);
    for f in 0..out_channels {
        for c in 0..in_channels {
            let spec = &spectra[f * in_channels + c];
            let mut weighted = spec.clone();
            for (i, w) in coeff_map.iter().enumerate() {
                weighted.re[i] *= w;
                weighted.im[i] *= w;
            }
            let spatial = fft2d(&weighted, true)?;
            for ky in 0..k {
                for kx in 0..k {
                    debug_assert!(
                        spatial.im[ky * k + kx].abs() < 1e-6,
                        "imaginary residual {} exceeds tolerance",
                        spatial.im[ky * k + kx]
                    );
                    *filters.at_mut(f, c, ky, kx) = spatial.re[ky * k + kx];
                }
            }
        }
    }
    Ok(filters)
}

/// Transforms every patch to the Fourier domain, multiplies by the learned
/// coefficients, and converts back to the spatial domain (real part).
pub fn fourier_reweight(filters: &Tensor4, coeffs: &FourierCoefficients) -> Result<Tensor4> {
    let k = coeffs.size();
    if filters.kernel_h != k || filters.kernel_w != k {
        return Err(Error::InvalidArgument(format!(
            "fourier_reweight: kernel {}x{} does not match coefficient size {k}",
            filters.kernel_h, filters.kernel_w
        )));
    }
    let spectra = patch_spectra(filters)?;
    reweight_from_spectra(
        &spectra,
        &coeffs.materialize(),
        filters.out_channels,
        filters.in_channels,
        k,
    )
}

/// Normalization applied to bank filters: correlation scores become mean
/// products instead of raw sums, keeping response magnitudes near the
/// localization-loss margin scale regardless of patch size.
pub fn filter_norm(config: &CorrelationConfig) -> f64 {
    1.0 / (config.patch_size * config.patch_size * config.channels) as f64
}

/// Builds the full filter bank from a frame and box: template crop, patch
/// split, Fourier reweighting, and score normalization.
pub fn build_filter_bank(
    frame: &Image,
    b: &BBox,
    coeffs: &FourierCoefficients,
    config: &CorrelationConfig,
) -> Result<TemplateFilterBank> {
    let template = crop_and_warp(frame, b, config.template_size, 1.0)?;
    let raw = split_patches(&template, config)?;
    let mut filters = fourier_reweight(&raw, coeffs)?;
    let norm = filter_norm(config);
    for v in filters.data_mut() {
        *v *= norm;
    }
    Ok(TemplateFilterBank {
        filters,
        source_box: *b,
    })
}

/// The multi-channel patch correlation map over a search crop.
pub fn correlate(
    search: &Tensor3,
    bank: &TemplateFilterBank,
    config: &CorrelationConfig,
) -> Result<Tensor3> {
    if search.height != config.search_size || search.width != config.search_size {
        return Err(Error::InvalidArgument(format!(
            "correlate: search crop {}x{} does not match search_size {}",
            search.height, search.width, config.search_size
        )));
    }
    conv2d_valid(search, &bank.filters, config.corr_stride)
}

/// Analytic FLOP count of the correlation conv (multiply and add counted
/// separately).
pub fn corr_conv_flops(config: &CorrelationConfig) -> f64 {
    let out = config.corr_map_size() as f64;
    let n2 = (config.patches_per_side * config.patches_per_side) as f64;
    let k2 = (config.patch_size * config.patch_size) as f64;
    2.0 * out * out * n2 * k2 * config.channels as f64
}

/// Analytic FLOP count of the Fourier reweighting step.
pub fn fourier_flops(config: &CorrelationConfig) -> f64 {
    let n2 = (config.patches_per_side * config.patches_per_side) as f64;
    let k2 = (config.patch_size * config.patch_size) as f64;
    5.0 * n2 * config.channels as f64 * k2 * k2.log2()
}

/// Total FLOPs of the patch correlation layer (conv + FFT reweighting).
pub fn corr_flops(config: &CorrelationConfig) -> f64 {
    corr_conv_flops(config) + fourier_flops(config)
}
