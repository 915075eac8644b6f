//! Desk-scale training: margin-based localization loss, smooth-L1 boundary
//! offset loss, exact reverse-mode gradients through every kernel, and
//! masked momentum SGD over synthetic motion pairs.

use crate::aggregation::{forward_with_trace, offsets_at, ModelParams};
use crate::correlation::{
    crop_and_warp, filter_norm, patch_spectra, reweight_from_spectra, split_patches,
    CorrelationConfig,
};
use crate::error::{Error, Result};
use crate::fft::{fft2d, ComplexPlane};
use crate::kernels::{
    apply_mask, conv2d_valid, conv2d_valid_input_grad, conv2d_valid_weight_grad,
    soft_select_pool_backward, PoolBias,
};
use crate::synth::{synth_pair, MotionSpec, TrainingPair};
use crate::tensor::{Tensor3, Tensor4};
use crate::util::parallel_map;

pub use crate::synth::TrainingPair as Pair;

/// Optimizer and loss hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Margin slope of the localization loss.
    pub alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub smooth_l1_beta: f64,
    /// Weight of the boundary-offset loss against the localization loss.
    pub loss_balance: f64,
    /// Motion distribution of the synthetic pairs.
    pub motion: MotionSpec,
    /// Train the Fourier coefficients (off freezes them at identity).
    pub train_fourier: bool,
    /// Train and use the boundary-offset path.
    pub train_bbox: bool,
    /// Worker cap for per-pair gradient computation.
    pub threads: usize,
    /// Optional per-tensor infinity-norm clip on the batch gradient.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 8,
            steps: 2000,
            smooth_l1_beta: 1.0,
            loss_balance: 1.0,
            motion: MotionSpec::default(),
            train_fourier: true,
            train_bbox: true,
            threads: 1,
            grad_clip: None,
        }
    }
}

/// Margin-based localization loss over a single-channel response map:
/// every non-center cell must stay below the center score by a margin that
/// grows with Manhattan distance. Returns the loss and its exact
/// subgradient (0 at hinge kinks).
pub fn localization_loss(
    response: &Tensor3,
    gt_center: (usize, usize),
    alpha: f64,
) -> Result<(f64, Tensor3)> {
    if response.channels != 1 {
        return Err(Error::InvalidArgument(format!(
            "localization_loss: expected 1 channel, got {}",
            response.channels
        )));
    }
    let (gy, gx) = gt_center;
    if gy >= response.height || gx >= response.width {
        return Err(Error::InvalidArgument(format!(
            "localization_loss: gt_center {gt_center:?} outside {}x{} map",
            response.height, response.width
        )));
    }
    let s_gt = response.at(0, gy, gx);
    let mut loss = 0.0;
    let mut grad = Tensor3::zeros(1, response.height, response.width);
    for y in 0..response.height {
        for x in 0..response.width {
            if (y, x) == (gy, gx) {
                continue;
            }
            let dist = (y.abs_diff(gy) + x.abs_diff(gx)) as f64;
            let margin = response.at(0, y, x) - s_gt + alpha * dist;
            if margin > 0.0 {
                loss += margin;
                *grad.at_mut(0, y, x) += 1.0;
                *grad.at_mut(0, gy, gx) -= 1.0;
            }
        }
    }
    Ok((loss, grad))
}

/// Smooth L1 over the four boundary offsets, summed across components.
pub fn smooth_l1_loss(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for c in 0..4 {
        let d = pred[c] - target[c];
        if d.abs() < beta {
            loss += 0.5 * d * d / beta;
            grad[c] = d / beta;
        } else {
            loss += d.abs() - 0.5 * beta;
            grad[c] = d.signum();
        }
    }
    (loss, grad)
}

/// Gradients for every learned tensor in `ModelParams`.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub coeffs_quadrant: Vec<f64>,
    pub stages: Vec<StageGrads>,
}

#[derive(Debug, Clone)]
pub struct StageGrads {
    pub score_conv: Tensor4,
    pub offset_conv: Tensor4,
    pub pool_bias: PoolBias,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            coeffs_quadrant: vec![0.0; params.coeffs.quadrant().len()],
            stages: params
                .stages
                .iter()
                .map(|s| StageGrads {
                    score_conv: Tensor4::zeros(
                        s.score_conv.out_channels,
                        s.score_conv.in_channels,
                        3,
                        3,
                    ),
                    offset_conv: Tensor4::zeros(
                        s.offset_conv.out_channels,
                        s.offset_conv.in_channels,
                        3,
                        3,
                    ),
                    pool_bias: [[0.0; 4]; 4],
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.coeffs_quadrant.iter_mut().zip(&other.coeffs_quadrant) {
            *a += b;
        }
        for (sa, sb) in self.stages.iter_mut().zip(&other.stages) {
            sa.score_conv.add_scaled(&sb.score_conv, 1.0);
            sa.offset_conv.add_scaled(&sb.offset_conv, 1.0);
            for p in 0..4 {
                for c in 0..4 {
                    sa.pool_bias[p][c] += sb.pool_bias[p][c];
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.coeffs_quadrant {
            *v *= factor;
        }
        for s in &mut self.stages {
            for v in s.score_conv.data_mut() {
                *v *= factor;
            }
            for v in s.offset_conv.data_mut() {
                *v *= factor;
            }
            for p in 0..4 {
                for c in 0..4 {
                    s.pool_bias[p][c] *= factor;
                }
            }
        }
    }
}

/// Loss values for one pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub localization: f64,
    pub bbox: f64,
    /// localization + loss_balance * bbox.
    pub total: f64,
}

/// Exact reverse-mode gradients of the total loss for one training pair,
/// through soft-selection pooling, the masked convolutions, the correlation
/// layer and the Fourier reweighting. Gradients of masked weights are zero.
pub fn backward(
    pair: &TrainingPair,
    params: &ModelParams,
    config: &CorrelationConfig,
    tcfg: &TrainConfig,
) -> Result<(LossParts, ParamGrads)> {
    let k = config.patch_size;
    let norm = filter_norm(config);

    // Forward: template -> filters -> correlation -> aggregation.
    let template = crop_and_warp(&pair.template_frame, &pair.template_box, config.template_size, 1.0)?;
    let raw = split_patches(&template, config)?;
    let spectra = patch_spectra(&raw)?;
    let coeff_map = params.coeffs.materialize();
    let mut filters = reweight_from_spectra(
        &spectra,
        &coeff_map,
        raw.out_channels,
        raw.in_channels,
        k,
    )?;
    for v in filters.data_mut() {
        *v *= norm;
    }
    let search = crop_and_warp(
        &pair.search_frame,
        &pair.template_box,
        config.search_size,
        config.search_context(),
    )?;
    let corr = conv2d_valid(&search, &filters, config.corr_stride)?;
    let (out, trace) = forward_with_trace(&corr, params)?;

    // Loss heads.
    let (loc_loss, d_response) = localization_loss(&out.response, pair.gt_center, tcfg.alpha)?;
    let pred = offsets_at(&out.offsets, pair.gt_center);
    let (bbox_loss, d_pred) = smooth_l1_loss(&pred, &pair.gt_offsets, tcfg.smooth_l1_beta);
    let mut d_offsets_map = Tensor3::zeros(4, out.offsets.height, out.offsets.width);
    for comp in 0..4 {
        *d_offsets_map.at_mut(comp, pair.gt_center.0, pair.gt_center.1) =
            tcfg.loss_balance * d_pred[comp];
    }

    // Reverse through the stages.
    let mut grads = ParamGrads::zeros_like(params);
    let mut d_scores = d_response;
    let mut d_offsets = d_offsets_map;
    for (s, stage) in params.stages.iter().enumerate().rev() {
        let tr = &trace.stages[s];
        // ReLU between stages applies to pooled scores of non-final stages;
        // its derivative gates the incoming score gradient.
        if params.relu_between_stages && s + 1 < params.stages.len() {
            let post = &trace.stages[s + 1].scores_in;
            for (g, v) in d_scores.data_mut().iter_mut().zip(post.data().iter()) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (d_sc_conv, d_off_conv, d_bias) = soft_select_pool_backward(
            &tr.scores_conv,
            &tr.offsets_conv,
            &stage.pool_bias,
            &d_scores,
            &d_offsets,
        );
        grads.stages[s].pool_bias = d_bias;

        let mut d_w_score = conv2d_valid_weight_grad(&tr.scores_in, &d_sc_conv, 3, 3, 1);
        d_w_score = apply_mask(&d_w_score, &stage.score_mask)?;
        grads.stages[s].score_conv = d_w_score;
        d_scores = conv2d_valid_input_grad(
            &stage.score_conv,
            &d_sc_conv,
            tr.scores_in.height,
            tr.scores_in.width,
            1,
        );

        let no_offset_grad = d_offsets.data().iter().all(|v| *v == 0.0)
            && d_off_conv.data().iter().all(|v| *v == 0.0);
        if trace.zero_offset_input[s] || no_offset_grad {
            // Either the offset input is identically zero (first stage) or
            // no gradient reaches the offset path; both give zero grads.
            d_offsets = Tensor3::zeros(
                stage.offset_conv.in_channels,
                tr.offsets_in.height,
                tr.offsets_in.width,
            );
        } else {
            let mut d_w_off = conv2d_valid_weight_grad(&tr.offsets_in, &d_off_conv, 3, 3, 1);
            d_w_off = apply_mask(&d_w_off, &stage.offset_mask)?;
            grads.stages[s].offset_conv = d_w_off;
            d_offsets = conv2d_valid_input_grad(
                &stage.offset_conv,
                &d_off_conv,
                tr.offsets_in.height,
                tr.offsets_in.width,
                1,
            );
        }
    }

    // Through the correlation layer into the filters, then the coefficients.
    let d_corr = d_scores;
    let d_filters = conv2d_valid_weight_grad(&search, &d_corr, k, k, config.corr_stride);
    let mut d_coeff_full = vec![0.0; k * k];
    let mut plane = vec![0.0; k * k];
    for f in 0..d_filters.out_channels {
        for c in 0..d_filters.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    plane[ky * k + kx] = norm * d_filters.at(f, c, ky, kx);
                }
            }
            let g_spec = fft2d(&ComplexPlane::from_real(k, k, &plane)?, false)?;
            let p_spec = &spectra[f * d_filters.in_channels + c];
            let inv = 1.0 / (k * k) as f64;
            for i in 0..k * k {
                d_coeff_full[i] +=
                    inv * (g_spec.re[i] * p_spec.re[i] + g_spec.im[i] * p_spec.im[i]);
            }
        }
    }
    grads.coeffs_quadrant = params.coeffs.project_full_gradient(&d_coeff_full);

    let parts = LossParts {
        localization: loc_loss,
        bbox: bbox_loss,
        total: loc_loss + tcfg.loss_balance * bbox_loss,
    };
    Ok((parts, grads))
}

/// Momentum buffers matching `ParamGrads`.
#[derive(Debug, Clone)]
pub struct MomentumState {
    velocity: ParamGrads,
}

impl MomentumState {
    pub fn new(params: &ModelParams) -> Self {
        MomentumState {
            velocity: ParamGrads::zeros_like(params),
        }
    }
}

/// Momentum SGD update followed by mask application. The coefficient
/// quadrant parameterization keeps Fourier symmetry by construction.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut MomentumState,
    tcfg: &TrainConfig,
) -> Result<()> {
    let m = tcfg.momentum;
    for (v, g) in state
        .velocity
        .coeffs_quadrant
        .iter_mut()
        .zip(&grads.coeffs_quadrant)
    {
        *v = m * *v + g;
    }
    for (q, v) in params
        .coeffs
        .quadrant_mut()
        .iter_mut()
        .zip(&state.velocity.coeffs_quadrant)
    {
        *q -= tcfg.lr * v;
    }
    for (s, (stage, grad)) in params.stages.iter_mut().zip(&grads.stages).enumerate() {
        let vel = &mut state.velocity.stages[s];
        for (v, g) in vel
            .score_conv
            .data_mut()
            .iter_mut()
            .zip(grad.score_conv.data())
        {
            *v = m * *v + g;
        }
        for (w, v) in stage
            .score_conv
            .data_mut()
            .iter_mut()
            .zip(vel.score_conv.data())
        {
            *w -= tcfg.lr * v;
        }
        for (v, g) in vel
            .offset_conv
            .data_mut()
            .iter_mut()
            .zip(grad.offset_conv.data())
        {
            *v = m * *v + g;
        }
        for (w, v) in stage
            .offset_conv
            .data_mut()
            .iter_mut()
            .zip(vel.offset_conv.data())
        {
            *w -= tcfg.lr * v;
        }
        for p in 0..4 {
            for c in 0..4 {
                vel.pool_bias[p][c] = m * vel.pool_bias[p][c] + grad.pool_bias[p][c];
                stage.pool_bias[p][c] -= tcfg.lr * vel.pool_bias[p][c];
            }
        }
        stage.score_conv = apply_mask(&stage.score_conv, &stage.score_mask)?;
        stage.offset_conv = apply_mask(&stage.offset_conv, &stage.offset_mask)?;
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub step: usize,
    pub loc_loss: f64,
    pub bbox_loss: f64,
    pub total: f64,
}

fn mix_seed(seed: u64, step: u64, item: u64) -> u64 {
    let mut h = seed
        ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ item.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Runs the training loop on freshly sampled synthetic pairs. The batch
/// gradient is the mean of per-pair gradients. Fourier coefficients stay at
/// identity unless `train_fourier`; the offset path receives no loss unless
/// `train_bbox`.
pub fn train(
    config: &CorrelationConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<TrainLogRow>)> {
    config.validate()?;
    let mut params = crate::aggregation::init_params(config, seed);
    params.loss_alpha = tcfg.alpha;
    let mut state = MomentumState::new(&params);
    let mut log = Vec::with_capacity(tcfg.steps);

    let mut effective = tcfg.clone();
    if !tcfg.train_bbox {
        effective.loss_balance = 0.0;
    }

    for step in 0..tcfg.steps {
        let pairs: Vec<TrainingPair> = (0..tcfg.batch_size)
            .map(|i| synth_pair(mix_seed(seed, step as u64, i as u64), &tcfg.motion, config))
            .collect();
        let results = parallel_map(pairs, tcfg.threads, |pair| {
            backward(&pair, &params, config, &effective)
        });

        let mut batch = ParamGrads::zeros_like(&params);
        let mut parts = LossParts::default();
        for r in results {
            let (p, g) = r?;
            parts.localization += p.localization;
            parts.bbox += p.bbox;
            parts.total += p.total;
            batch.add(&g);
        }
        let inv = 1.0 / tcfg.batch_size as f64;
        batch.scale(inv);
        if tcfg.train_fourier {
            // The coefficient gradient sums over every patch-channel plane,
            // putting it on a far steeper scale than the conv weights; use
            // the per-plane mean so one learning rate serves both.
            let planes = (config.patches_per_side * config.patches_per_side * config.channels)
                as f64;
            batch.coeffs_quadrant.iter_mut().for_each(|v| *v /= planes);
        } else {
            batch.coeffs_quadrant.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(clip) = tcfg.grad_clip {
            clip_group(&mut batch.coeffs_quadrant, clip);
            for s in &mut batch.stages {
                clip_group(s.score_conv.data_mut(), clip);
                clip_group(s.offset_conv.data_mut(), clip);
                for p in 0..4 {
                    for c in 0..4 {
                        s.pool_bias[p][c] = s.pool_bias[p][c].clamp(-clip, clip);
                    }
                }
            }
        }
        sgd_step(&mut params, &batch, &mut state, tcfg)?;

        log.push(TrainLogRow {
            step,
            loc_loss: parts.localization * inv,
            bbox_loss: parts.bbox * inv,
            total: parts.total * inv,
        });
    }
    Ok((params, log))
}

/// Finite-difference verification of `backward`, usable from tests and the
/// selftest command.
pub mod gradcheck {
    use super::*;
    use crate::aggregation::init_params;

    /// Flat indexing over every parameter scalar in ModelParams.
    pub struct FlatParams;

    impl FlatParams {
        pub fn count(params: &ModelParams) -> usize {
            let mut n = params.coeffs.quadrant().len();
            for s in &params.stages {
                n += s.score_conv.data().len() + s.offset_conv.data().len() + 16;
            }
            n
        }

        pub fn get(params: &ModelParams, idx: usize) -> f64 {
            let mut i = idx;
            if i < params.coeffs.quadrant().len() {
                return params.coeffs.quadrant()[i];
            }
            i -= params.coeffs.quadrant().len();
            for s in &params.stages {
                if i < s.score_conv.data().len() {
                    return s.score_conv.data()[i];
                }
                i -= s.score_conv.data().len();
                if i < s.offset_conv.data().len() {
                    return s.offset_conv.data()[i];
                }
                i -= s.offset_conv.data().len();
                if i < 16 {
                    return s.pool_bias[i / 4][i % 4];
                }
                i -= 16;
            }
            unreachable!()
        }

        pub fn set(params: &mut ModelParams, idx: usize, v: f64) {
            let mut i = idx;
            if i < params.coeffs.quadrant().len() {
                params.coeffs.quadrant_mut()[i] = v;
                return;
            }
            i -= params.coeffs.quadrant().len();
            for s in &mut params.stages {
                if i < s.score_conv.data().len() {
                    s.score_conv.data_mut()[i] = v;
                    return;
                }
                i -= s.score_conv.data().len();
                if i < s.offset_conv.data().len() {
                    s.offset_conv.data_mut()[i] = v;
                    return;
                }
                i -= s.offset_conv.data().len();
                if i < 16 {
                    s.pool_bias[i / 4][i % 4] = v;
                    return;
                }
                i -= 16;
            }
            unreachable!()
        }

        pub fn grad(grads: &ParamGrads, idx: usize) -> f64 {
            let mut i = idx;
            if i < grads.coeffs_quadrant.len() {
                return grads.coeffs_quadrant[i];
            }
            i -= grads.coeffs_quadrant.len();
            for s in &grads.stages {
                if i < s.score_conv.data().len() {
                    return s.score_conv.data()[i];
                }
                i -= s.score_conv.data().len();
                if i < s.offset_conv.data().len() {
                    return s.offset_conv.data()[i];
                }
                i -= s.offset_conv.data().len();
                if i < 16 {
                    return s.pool_bias[i / 4][i % 4];
                }
                i -= 16;
            }
            unreachable!()
        }

        /// True if the scalar is not a live parameter: masked out, or in the
        /// first stage's offset conv whose input is identically zero.
        pub fn masked(params: &ModelParams, idx: usize) -> bool {
            let mut i = idx;
            if i < params.coeffs.quadrant().len() {
                return false;
            }
            i -= params.coeffs.quadrant().len();
            for (s_idx, s) in params.stages.iter().enumerate() {
                if i < s.score_conv.data().len() {
                    return s.score_mask.data()[i] == 0.0;
                }
                i -= s.score_conv.data().len();
                if i < s.offset_conv.data().len() {
                    return s.offset_mask.data()[i] == 0.0 || s_idx == 0;
                }
                i -= s.offset_conv.data().len();
                if i < 16 {
                    return false;
                }
                i -= 16;
            }
            unreachable!()
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct GradCheckReport {
        pub checked: usize,
        /// Parameters whose epsilon interval straddles a hinge kink or a
        /// pooling tie; the two-sided difference is unreliable there.
        pub skipped: usize,
        pub worst_abs_err: f64,
    }

    /// Compares every live parameter's reverse-mode gradient against central
    /// finite differences on the given config. `stride` samples every n-th
    /// live parameter.
    pub fn check(
        config: &CorrelationConfig,
        seed: u64,
        stride: usize,
        rel_tol: f64,
        abs_tol: f64,
    ) -> Result<GradCheckReport> {
        let tcfg = TrainConfig {
            threads: 1,
            ..TrainConfig::default()
        };
        let params = init_params(config, seed);
        let pair = synth_pair(seed.wrapping_add(1000), &MotionSpec::default(), config);
        let (_, grads) = backward(&pair, &params, config, &tcfg)?;

        let total = FlatParams::count(&params);
        let live: Vec<usize> = (0..total)
            .filter(|idx| !FlatParams::masked(&params, *idx))
            .collect();
        let eps = 1e-3;
        let mut report = GradCheckReport {
            checked: 0,
            skipped: 0,
            worst_abs_err: 0.0,
        };
        for &idx in live.iter().step_by(stride.max(1)) {
            let mut p = params.clone();
            let orig = FlatParams::get(&p, idx);
            FlatParams::set(&mut p, idx, orig + eps);
            let hi = backward(&pair, &p, config, &tcfg)?.0.total;
            FlatParams::set(&mut p, idx, orig - eps);
            let lo = backward(&pair, &p, config, &tcfg)?.0.total;
            let fd = (hi - lo) / (2.0 * eps);
            let g = FlatParams::grad(&grads, idx);
            let err = (fd - g).abs();
            if err > abs_tol && err > rel_tol * g.abs().max(fd.abs()) {
                let mid = backward(&pair, &params, config, &tcfg)?.0.total;
                let curvature = (hi - 2.0 * mid + lo).abs() / (eps * eps);
                if curvature > 1e-3 {
                    report.skipped += 1;
                    continue;
                }
                return Err(Error::InvariantViolation(format!(
                    "gradient mismatch at parameter {idx}: finite difference {fd} vs reverse-mode {g}"
                )));
            }
            report.worst_abs_err = report.worst_abs_err.max(err);
            report.checked += 1;
        }
        Ok(report)
    }
}

/// Scales a gradient group down so its infinity norm stays within `clip`.
fn clip_group(values: &mut [f64], clip: f64) {
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max > clip {
        let scale = clip / max;
        for v in values {
            *v *= scale;
        }
    }
}

/// Evaluates the mean batch loss without updating parameters.
pub fn batch_loss(
    pairs: &[TrainingPair],
    params: &ModelParams,
    config: &CorrelationConfig,
    tcfg: &TrainConfig,
) -> Result<LossParts> {
    let mut parts = LossParts::default();
    for pair in pairs {
        let (p, _) = backward(pair, params, config, tcfg)?;
        parts.localization += p.localization;
        parts.bbox += p.bbox;
        parts.total += p.total;
    }
    let inv = 1.0 / pairs.len() as f64;
    parts.localization *= inv;
    parts.bbox *= inv;
    parts.total *= inv;
    Ok(parts)
}
