//! Skip-frame tracking harness: a pluggable keyframe oracle refreshes
//! template banks under a fixed-interval or online policy; the matcher
//! handles every inter-frame. Includes the per-object match pipeline and
//! average-FLOP accounting for the skip-frame scheme.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{compose_box, forward, offsets_at, MatchResult, ModelParams};
use crate::bbox::BBox;
use crate::correlation::{
    build_filter_bank, correlate, crop_and_warp, CorrelationConfig, CropGeometry,
    TemplateFilterBank,
};
use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::util::parallel_map;

/// When the expensive keyframe oracle runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyframePolicy {
    /// Every `interval`-th frame is a keyframe.
    Fixed { interval: usize },
    /// Keyframe when any matched confidence falls below the threshold or
    /// when `max_inter` inter-frames have passed. With `conf_threshold`
    /// unset, the threshold self-calibrates to half the running mean of
    /// keyframe self-match confidences.
    Online {
        conf_threshold: Option<f64>,
        max_inter: usize,
    },
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            KeyframePolicy::Fixed { interval } if *interval < 1 => Err(Error::InvalidArgument(
                "fixed policy interval must be >= 1".to_string(),
            )),
            KeyframePolicy::Online { max_inter, .. } if *max_inter < 1 => Err(
                Error::InvalidArgument("online policy max_inter must be >= 1".to_string()),
            ),
            _ => Ok(()),
        }
    }
}

/// Supplies fresh detections on keyframes.
pub trait KeyframeOracle {
    fn detect(&mut self, frame: &Image, frame_idx: usize) -> Result<Vec<(u32, BBox)>>;
}

/// Injects groundtruth boxes; the correctness-test oracle.
pub struct GroundtruthOracle {
    /// gt[frame][object] = (id, box)
    pub gt: Vec<Vec<(u32, BBox)>>,
}

impl GroundtruthOracle {
    pub fn from_boxes(gt: &[Vec<BBox>]) -> Self {
        GroundtruthOracle {
            gt: gt
                .iter()
                .map(|frame| {
                    frame
                        .iter()
                        .enumerate()
                        .map(|(i, b)| (i as u32, *b))
                        .collect()
                })
                .collect(),
        }
    }
}

impl KeyframeOracle for GroundtruthOracle {
    fn detect(&mut self, _frame: &Image, frame_idx: usize) -> Result<Vec<(u32, BBox)>> {
        self.gt
            .get(frame_idx)
            .cloned()
            .ok_or_else(|| Error::Oracle(format!("no groundtruth for frame {frame_idx}")))
    }
}

/// Groundtruth plus constant-magnitude seeded noise; the robustness-test
/// oracle.
pub struct NoisyOracle {
    pub inner: GroundtruthOracle,
    pub noise: f64,
    pub seed: u64,
}

impl KeyframeOracle for NoisyOracle {
    fn detect(&mut self, frame: &Image, frame_idx: usize) -> Result<Vec<(u32, BBox)>> {
        let boxes = self.inner.detect(frame, frame_idx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((frame_idx as u64) << 17));
        Ok(boxes
            .into_iter()
            .map(|(id, b)| {
                let mut jitter = || rng.gen_range(-1.0..1.0) * self.noise;
                (
                    id,
                    BBox::new(
                        b.x_min + jitter(),
                        b.y_min + jitter(),
                        b.x_max + jitter(),
                        b.y_max + jitter(),
                    )
                    .with_score(b.score),
                )
            })
            .collect())
    }
}

/// Runs the full match pipeline for one object: search crop, correlation,
/// aggregation, box composition. With `use_offsets` false the boundary
/// offsets are ignored and the prior box is re-centered at the peak.
pub fn match_object(
    frame: &Image,
    prior: &BBox,
    bank: &TemplateFilterBank,
    params: &ModelParams,
    config: &CorrelationConfig,
    use_offsets: bool,
) -> Result<MatchResult> {
    let geom = CropGeometry::for_box(prior, config.search_size, config.search_context())?;
    let search = crop_and_warp(frame, prior, config.search_size, config.search_context())?;
    let corr = correlate(&search, bank, config)?;
    let out = forward(&corr, params)?;
    let offs = if use_offsets {
        offsets_at(&out.offsets, out.peak)
    } else {
        [0.0; 4]
    };
    let bbox = compose_box(prior, out.peak, offs, config, &geom)?.with_score(out.confidence);
    Ok(MatchResult {
        response: out.response,
        offsets: out.offsets,
        peak: out.peak,
        confidence: out.confidence,
        bbox,
    })
}

/// Running FLOP accounting of a session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionStats {
    pub frames: usize,
    pub keyframes: usize,
    /// Sum over inter-frames of the number of matched objects.
    pub inter_object_frames: usize,
}

/// Average per-frame cost of the skip-frame scheme.
pub fn avg_flops(stats: &SessionStats, oracle_flops: f64, patchnet_flops: f64) -> Result<f64> {
    if stats.frames == 0 {
        return Err(Error::InvalidArgument(
            "avg_flops: no frames processed".to_string(),
        ));
    }
    Ok((stats.keyframes as f64 * oracle_flops
        + stats.inter_object_frames as f64 * patchnet_flops)
        / stats.frames as f64)
}

struct TrackedObject {
    id: u32,
    bank: TemplateFilterBank,
    bbox: BBox,
}

/// Skip-frame tracking state over one video.
pub struct TrackSession {
    params: ModelParams,
    config: CorrelationConfig,
    policy: KeyframePolicy,
    oracle: Box<dyn KeyframeOracle>,
    /// Whether the boundary-offset path contributes to composed boxes.
    pub use_offsets: bool,
    pub threads: usize,
    objects: Vec<TrackedObject>,
    frames_since_key: usize,
    frame_idx: usize,
    stats: SessionStats,
    conf_sum: f64,
    conf_count: usize,
}

impl TrackSession {
    pub fn new(
        params: ModelParams,
        config: CorrelationConfig,
        policy: KeyframePolicy,
        oracle: Box<dyn KeyframeOracle>,
    ) -> Result<Self> {
        config.validate()?;
        policy.validate()?;
        Ok(TrackSession {
            params,
            config,
            policy,
            oracle,
            use_offsets: true,
            threads: 1,
            objects: Vec::new(),
            frames_since_key: 0,
            frame_idx: 0,
            stats: SessionStats::default(),
            conf_sum: 0.0,
            conf_count: 0,
        })
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    fn online_threshold(&self, explicit: Option<f64>) -> f64 {
        match explicit {
            Some(t) => t,
            None if self.conf_count > 0 => 0.5 * self.conf_sum / self.conf_count as f64,
            None => f64::NEG_INFINITY,
        }
    }

    fn run_keyframe(&mut self, frame: &Image) -> Result<Vec<(u32, BBox)>> {
        let detections = self.oracle.detect(frame, self.frame_idx)?;
        let mut objects = Vec::with_capacity(detections.len());
        for (id, b) in &detections {
            let bank = build_filter_bank(frame, b, &self.params.coeffs, &self.config)?;
            objects.push(TrackedObject {
                id: *id,
                bank,
                bbox: *b,
            });
        }
        // Self-match confidence calibrates the online threshold.
        if matches!(
            self.policy,
            KeyframePolicy::Online {
                conf_threshold: None,
                ..
            }
        ) {
            for obj in &objects {
                if let Ok(m) = match_object(
                    frame,
                    &obj.bbox,
                    &obj.bank,
                    &self.params,
                    &self.config,
                    false,
                ) {
                    self.conf_sum += m.confidence;
                    self.conf_count += 1;
                }
            }
        }
        self.objects = objects;
        self.frames_since_key = 0;
        self.stats.keyframes += 1;
        Ok(self.objects.iter().map(|o| (o.id, o.bbox)).collect())
    }

    fn match_all(&self, frame: &Image) -> Vec<Result<MatchResult>> {
        let indices: Vec<usize> = (0..self.objects.len()).collect();
        let objects = &self.objects;
        let params = &self.params;
        let config = &self.config;
        let use_offsets = self.use_offsets;
        parallel_map(indices, self.threads, move |i| {
            let obj = &objects[i];
            match_object(frame, &obj.bbox, &obj.bank, params, config, use_offsets)
        })
    }

    /// Processes one frame: runs the keyframe oracle if the policy fires,
    /// otherwise matches every tracked object. Objects whose composed box
    /// leaves the frame or degenerates are dropped.
    pub fn step(&mut self, frame: &Image) -> Result<(Vec<(u32, BBox)>, bool)> {
        self.stats.frames += 1;
        let first = self.stats.frames == 1;

        let fired = if first {
            true
        } else {
            self.frames_since_key += 1;
            match self.policy {
                KeyframePolicy::Fixed { interval } => self.frames_since_key == interval,
                KeyframePolicy::Online { max_inter, .. } => self.frames_since_key == max_inter,
            }
        };
        if fired {
            let boxes = self.run_keyframe(frame)?;
            self.frame_idx += 1;
            return Ok((boxes, true));
        }

        let results = self.match_all(frame);
        let mut matched: Vec<Option<MatchResult>> = Vec::with_capacity(results.len());
        for res in results {
            match res {
                Ok(m) => matched.push(Some(m)),
                Err(Error::DegenerateOutput(_)) | Err(Error::DegenerateInput(_)) => {
                    matched.push(None)
                }
                Err(e) => return Err(e),
            }
        }

        // Confidence-triggered keyframe in online mode.
        if let KeyframePolicy::Online { conf_threshold, .. } = self.policy {
            let threshold = self.online_threshold(conf_threshold);
            let low = matched
                .iter()
                .any(|m| m.as_ref().map(|m| m.confidence < threshold).unwrap_or(true));
            if low {
                let boxes = self.run_keyframe(frame)?;
                self.frame_idx += 1;
                return Ok((boxes, true));
            }
        }

        self.stats.inter_object_frames += self.objects.len();

        let (fw, fh) = (frame.width, frame.height);
        let mut keep: Vec<TrackedObject> = Vec::new();
        let mut out: Vec<(u32, BBox)> = Vec::new();
        let objects = std::mem::take(&mut self.objects);
        for (obj, m) in objects.into_iter().zip(matched.into_iter()) {
            match m {
                Some(m) if m.bbox.is_valid() && m.bbox.intersects_frame(fw, fh) => {
                    out.push((obj.id, m.bbox));
                    keep.push(TrackedObject {
                        id: obj.id,
                        bank: obj.bank,
                        bbox: m.bbox,
                    });
                }
                _ => {} // dropped: exited the frame or degenerated
            }
        }
        self.objects = keep;
        self.frame_idx += 1;
        Ok((out, false))
    }
}
