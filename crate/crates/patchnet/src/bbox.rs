//! Axis-aligned bounding boxes in frame pixel coordinates, IoU, and the
//! short-range miss-rate metric.

use crate::error::{Error, Result};

/// An axis-aligned box with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_max > self.x_min && self.y_max > self.y_min
    }

    /// True if the box has any overlap with a `width` x `height` frame.
    pub fn intersects_frame(&self, width: usize, height: usize) -> bool {
        self.x_max > 0.0 && self.y_max > 0.0 && self.x_min < width as f64 && self.y_min < height as f64
    }
}

/// Intersection over union, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fraction of evaluation pairs (template at t, target at t+gap) where the
/// prediction's IoU against groundtruth falls below `threshold`. `pred[t]`
/// is the prediction for frame t made from a template `gap` frames earlier;
/// `None` counts as a miss. Entries before index `gap` are never scored.
pub fn miss_rate(pred: &[Option<BBox>], gt: &[BBox], gap: usize, threshold: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "miss_rate: prediction length {} != groundtruth length {}",
            pred.len(),
            gt.len()
        )));
    }
    if gap < 1 {
        return Err(Error::InvalidArgument("miss_rate: gap must be >= 1".to_string()));
    }
    if gt.len() <= gap {
        return Err(Error::InvalidArgument(format!(
            "miss_rate: sequence length {} too short for gap {gap}",
            gt.len()
        )));
    }
    let mut misses = 0usize;
    let mut total = 0usize;
    for t in gap..gt.len() {
        total += 1;
        match &pred[t] {
            Some(p) if iou(p, &gt[t]) >= threshold => {}
            _ => misses += 1,
        }
    }
    Ok(misses as f64 / total as f64)
}
