//! Binary weight files: magic "PNETW1", a header of config integers, then
//! length-prefixed little-endian f64 payloads for every parameter tensor in
//! declaration order.

use std::path::Path;

use crate::aggregation::{build_stage_masks, AggregationStage, ModelParams};
use crate::correlation::{CorrelationConfig, FourierCoefficients};
use crate::error::{Error, Result};
use crate::kernels::PoolBias;
use crate::tensor::Tensor4;
use crate::util::atomic_write;

const MAGIC: &[u8; 6] = b"PNETW1";

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_field(buf: &mut Vec<u8>, values: &[f64]) {
    push_u32(buf, values.len() as u32);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn bias_flat(bias: &PoolBias) -> Vec<f64> {
    bias.iter().flatten().copied().collect()
}

/// Serializes config + params to the weight-file byte layout.
pub fn encode(config: &CorrelationConfig, params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        config.patches_per_side,
        config.patch_size,
        config.template_size,
        config.search_size,
        config.corr_stride,
        config.channels,
        params.stages.len(),
    ] {
        push_u32(&mut buf, v as u32);
    }
    push_field(&mut buf, &params.coeffs.materialize());
    for stage in &params.stages {
        push_field(&mut buf, stage.score_conv.data());
        push_field(&mut buf, stage.offset_conv.data());
        push_field(&mut buf, &bias_flat(&stage.pool_bias));
        push_field(&mut buf, stage.score_mask.data());
        push_field(&mut buf, stage.offset_mask.data());
    }
    push_field(&mut buf, &[params.loss_alpha]);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "weight file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn field(&mut self, expect: usize, name: &str) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        if n != expect {
            return Err(Error::Format(format!(
                "weight file field {name}: element count {n} does not match expected {expect}"
            )));
        }
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }
}

/// Decodes a weight file, validating every element count against the
/// config-derived shapes.
pub fn decode(bytes: &[u8]) -> Result<(CorrelationConfig, ModelParams)> {
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(Error::Format("bad magic; not a weight file".to_string()));
    }
    let mut r = Reader { bytes, pos: 6 };
    let n = r.u32()? as usize;
    let k = r.u32()? as usize;
    let template_size = r.u32()? as usize;
    let search_size = r.u32()? as usize;
    let corr_stride = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let stage_count = r.u32()? as usize;

    let config = CorrelationConfig {
        patches_per_side: n,
        patch_size: k,
        template_size,
        search_size,
        corr_stride,
        channels,
        relu_between_stages: false,
    };
    config.validate().map_err(|e| {
        Error::Format(format!("weight file header describes an invalid model: {e}"))
    })?;
    if stage_count != config.stage_count() {
        return Err(Error::Format(format!(
            "weight file stage count {stage_count} does not match patch grid {n}"
        )));
    }

    let coeff_map = r.field(k * k, "fourier coefficients")?;
    let coeffs = FourierCoefficients::from_map(k, &coeff_map)
        .map_err(|e| Error::Format(format!("weight file coefficients: {e}")))?;

    let mut stages = Vec::with_capacity(stage_count);
    for s in 0..stage_count {
        let child = n >> s;
        let parent = child / 2;
        let (c_in, c_out) = (child * child, parent * parent);
        let score = r.field(c_out * c_in * 9, &format!("stage {s} score conv"))?;
        let offset = r.field(4 * c_out * 4 * c_in * 9, &format!("stage {s} offset conv"))?;
        let bias = r.field(16, &format!("stage {s} pool bias"))?;
        let score_mask = r.field(c_out * c_in * 9, &format!("stage {s} score mask"))?;
        let offset_mask = r.field(4 * c_out * 4 * c_in * 9, &format!("stage {s} offset mask"))?;

        let mut pool_bias: PoolBias = [[0.0; 4]; 4];
        for p in 0..4 {
            for c in 0..4 {
                pool_bias[p][c] = bias[4 * p + c];
            }
        }
        // Masks must describe the patch adjacency this grid implies.
        let (expect_score_mask, expect_offset_mask) = build_stage_masks(n, s);
        if score_mask != expect_score_mask.data() || offset_mask != expect_offset_mask.data() {
            return Err(Error::Format(format!(
                "weight file stage {s} masks do not encode patch adjacency"
            )));
        }
        stages.push(AggregationStage {
            score_conv: Tensor4::from_vec(c_out, c_in, 3, 3, score)?,
            offset_conv: Tensor4::from_vec(4 * c_out, 4 * c_in, 3, 3, offset)?,
            pool_bias,
            score_mask: expect_score_mask,
            offset_mask: expect_offset_mask,
        });
    }
    let alpha = r.field(1, "loss alpha")?[0];
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "weight file has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((
        config,
        ModelParams {
            coeffs,
            stages,
            loss_alpha: alpha,
            relu_between_stages: false,
        },
    ))
}

/// Writes a weight file atomically.
pub fn save(path: &Path, config: &CorrelationConfig, params: &ModelParams) -> Result<()> {
    atomic_write(path, &encode(config, params))
}

/// Loads a weight file.
pub fn load(path: &Path) -> Result<(CorrelationConfig, ModelParams)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
