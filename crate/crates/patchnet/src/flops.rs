//! Analytic FLOP accounting for the full model and its ablations.
//!
//! Multiplies and adds count separately. Aggregation convolutions count only
//! unmasked weights; pooling softmaxes count 8 FLOPs per window (4 exp plus
//! normalization); the soft-selection offset arithmetic counts 11 FLOPs per
//! pooled offset element.

use crate::correlation::{corr_conv_flops, fourier_flops, CorrelationConfig};

/// Per-stage cost components.
#[derive(Debug, Clone, Copy)]
pub struct StageFlops {
    pub score_conv: f64,
    pub score_conv_dense: f64,
    pub offset_conv: f64,
    pub offset_conv_dense: f64,
    pub score_pool: f64,
    pub offset_softmax: f64,
    pub offset_arith: f64,
}

/// Full cost breakdown of one forward pass.
#[derive(Debug, Clone)]
pub struct FlopBreakdown {
    pub correlation: f64,
    pub fourier: f64,
    pub stages: Vec<StageFlops>,
}

impl FlopBreakdown {
    /// Score path beyond the correlation layer: masked score convs plus max
    /// pooling.
    pub fn aggregation_score(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.score_conv + s.score_pool)
            .sum()
    }

    /// Cost added by the boundary-offset path: masked offset convs, pooling
    /// softmaxes, and the soft-selection arithmetic.
    pub fn bbox_overhead(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.offset_conv + s.offset_softmax + s.offset_arith)
            .sum()
    }

    /// Plain patch aggregation: correlation plus the score path.
    pub fn base(&self) -> f64 {
        self.correlation + self.aggregation_score()
    }

    /// Extra multiplies a dense (unmasked) network would spend.
    pub fn mask_savings(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| (s.score_conv_dense - s.score_conv) + (s.offset_conv_dense - s.offset_conv))
            .sum()
    }

    pub fn total_for(&self, fourier: bool, bbox: bool) -> f64 {
        let mut total = self.base();
        if fourier {
            total += self.fourier;
        }
        if bbox {
            total += self.bbox_overhead();
        }
        total
    }

    /// Full model cost.
    pub fn total(&self) -> f64 {
        self.total_for(true, true)
    }
}

/// Analytic cost of the aggregation subnet plus the correlation layer.
pub fn net_flops(config: &CorrelationConfig) -> FlopBreakdown {
    let mut stages = Vec::with_capacity(config.stage_count());
    let mut x = config.corr_map_size() as f64;
    let mut channels = (config.patches_per_side * config.patches_per_side) as f64;
    for _ in 0..config.stage_count() {
        let y = x - 2.0; // valid 3x3 conv
        let w = y / 2.0; // 2x2 pool windows per axis
        let out_score = channels / 4.0;
        let out_offset = channels;
        stages.push(StageFlops {
            // 4 child channels x 9 taps, multiply+add.
            score_conv: 2.0 * out_score * y * y * 4.0 * 9.0,
            score_conv_dense: 2.0 * out_score * y * y * channels * 9.0,
            offset_conv: 2.0 * out_offset * y * y * 4.0 * 9.0,
            offset_conv_dense: 2.0 * out_offset * y * y * 4.0 * channels * 9.0,
            // 3 comparisons per window per score channel.
            score_pool: 3.0 * out_score * w * w,
            // 4 exp + normalization, counted as 8 per window.
            offset_softmax: 8.0 * out_score * w * w,
            // 4 adds (F+b), 4 multiplies, 3 adds per pooled offset element.
            offset_arith: 11.0 * out_offset * w * w,
        });
        x = w;
        channels = out_score;
    }
    FlopBreakdown {
        correlation: corr_conv_flops(config),
        fourier: fourier_flops(config),
        stages,
    }
}

/// One ablation row of the cost report.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: &'static str,
    pub correlation: f64,
    pub aggregation: f64,
    pub fft: f64,
    pub total: f64,
}

/// The four ablation rows: plain patch aggregation, +Fourier reweighting,
/// +bbox regression, and the full model.
pub fn ablation_rows(config: &CorrelationConfig) -> Vec<AblationRow> {
    let b = net_flops(config);
    let mk = |name: &'static str, fourier: bool, bbox: bool| {
        let agg = b.aggregation_score() + if bbox { b.bbox_overhead() } else { 0.0 };
        let fft = if fourier { b.fourier } else { 0.0 };
        AblationRow {
            name,
            correlation: b.correlation,
            aggregation: agg,
            fft,
            total: b.correlation + agg + fft,
        }
    };
    vec![
        mk("patch-aggregation", false, false),
        mk("fourier", true, false),
        mk("bbox-regression", false, true),
        mk("full", true, true),
    ]
}

/// Cost of the full model as patch size varies at fixed patch count and
/// fixed correlation-map size (the search crop grows with the patch).
pub fn patch_size_sweep(config: &CorrelationConfig, patch_sizes: &[usize]) -> Vec<(usize, f64)> {
    let out = config.corr_map_size();
    patch_sizes
        .iter()
        .map(|&k| {
            let mut c = config.clone();
            c.patch_size = k;
            c.template_size = c.patches_per_side * k;
            c.search_size = (out - 1) * c.corr_stride + k;
            (k, net_flops(&c).total())
        })
        .collect()
}
