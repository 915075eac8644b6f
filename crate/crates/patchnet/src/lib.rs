//! PatchNet: a compact patch-wise correlation template matcher for
//! short-range object matching in video, with a skip-frame tracking harness,
//! a desk-scale trainer on synthetic motion pairs, and an analytic FLOP
//! accountant.
//!
//! A template crop is split into a grid of small patches; each patch becomes
//! a correlation filter after a learned, mirror-symmetric Fourier-domain
//! reweighting. The resulting multi-channel correlation map feeds a small
//! aggregation network that pools patch evidence stage by stage into a
//! single-channel response map plus a 4-channel boundary-offset map, from
//! which the matched box is composed.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example match_template
//! cargo run --release --example train_synthetic
//! cargo run --release --example track_skip_frame
//! cargo run --release --example flops_breakdown
//! cargo run --release --example scale_robustness
//! ```
//!
//! The same capabilities are exposed by the `patchnet` binary (`train`,
//! `track`, `flops`, `scale-sweep`, `selftest`).

pub mod aggregation;
pub mod bbox;
pub mod cli;
pub mod config;
pub mod correlation;
pub mod error;
pub mod fft;
pub mod flops;
pub mod kernels;
pub mod ppm;
pub mod synth;
pub mod tensor;
pub mod tracking;
pub mod training;
pub mod util;
pub mod weights;

pub use aggregation::{
    compose_box, forward, init_params, AggregationStage, MatchResult, ModelParams, NetOutput,
};
pub use bbox::{iou, miss_rate, BBox};
pub use correlation::{
    build_filter_bank, corr_flops, correlate, crop_and_warp, fourier_reweight, split_patches,
    CorrelationConfig, CropGeometry, FourierCoefficients, TemplateFilterBank,
};
pub use error::{Error, Result};
pub use fft::{fft2d, ComplexPlane};
pub use kernels::{apply_mask, argmax_spatial, conv2d_valid, soft_select_pool};
pub use ppm::Image;
pub use synth::{synth_pair, MotionSpec, TrainingPair};
pub use tensor::{Tensor3, Tensor4};
pub use tracking::{avg_flops, match_object, KeyframeOracle, KeyframePolicy, TrackSession};
pub use training::{backward, localization_loss, sgd_step, smooth_l1_loss, train, TrainConfig};
