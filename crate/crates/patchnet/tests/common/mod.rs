//! Shared fixtures and independent oracles for the integration suites.

use std::sync::OnceLock;

use patchnet::aggregation::ModelParams;
use patchnet::correlation::CorrelationConfig;
use patchnet::synth::MotionSpec;
use patchnet::tensor::{Tensor3, Tensor4};
use patchnet::training::{train, TrainConfig};

/// Small model used by the gradient checks: two stages, 3x3 response map.
pub fn reduced_config() -> CorrelationConfig {
    CorrelationConfig {
        patches_per_side: 4,
        patch_size: 8,
        template_size: 32,
        search_size: 42,
        corr_stride: 2,
        channels: 3,
        relu_between_stages: false,
    }
}

/// Prints the per-criterion verdict line, then returns the flag so the
/// caller can assert on it.
pub fn criterion(id: usize, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "ACCEPTANCE {id} {name}: {}{}",
        if pass { "PASS" } else { "FAIL" },
        if detail.is_empty() {
            String::new()
        } else {
            format!(" ({detail})")
        }
    );
    pass
}

/// The training recipe used for every acceptance fixture.
pub fn fixture_train_config(fourier: bool, bbox: bool) -> TrainConfig {
    TrainConfig {
        steps: 320,
        batch_size: 8,
        lr: 0.02,
        grad_clip: Some(1.0),
        threads: 2,
        train_fourier: fourier,
        train_bbox: bbox,
        motion: MotionSpec::default(),
        ..TrainConfig::default()
    }
}

/// The four ablation variants trained once and shared across tests.
pub struct TrainedModels {
    pub config: CorrelationConfig,
    pub full: ModelParams,
    pub bbox_only: ModelParams,
    pub fourier_only: ModelParams,
    pub plain: ModelParams,
}

pub fn trained_models() -> &'static TrainedModels {
    static MODELS: OnceLock<TrainedModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let config = CorrelationConfig::default();
        let seed = 0xACCE;
        let full = train(&config, &fixture_train_config(true, true), seed)
            .expect("full fixture")
            .0;
        let bbox_only = train(&config, &fixture_train_config(false, true), seed)
            .expect("bbox fixture")
            .0;
        let fourier_only = train(&config, &fixture_train_config(true, false), seed)
            .expect("fourier fixture")
            .0;
        let plain = train(&config, &fixture_train_config(false, false), seed)
            .expect("plain fixture")
            .0;
        TrainedModels {
            config,
            full,
            bbox_only,
            fourier_only,
            plain,
        }
    })
}

/// Brute-force valid cross-correlation, independent of the library kernel.
pub fn conv_oracle(input: &Tensor3, weights: &Tensor4, stride: usize) -> Tensor3 {
    let out_h = (input.height - weights.kernel_h) / stride + 1;
    let out_w = (input.width - weights.kernel_w) / stride + 1;
    let mut out = Tensor3::zeros(weights.out_channels, out_h, out_w);
    for o in 0..weights.out_channels {
        for y in 0..out_h {
            for x in 0..out_w {
                let mut acc = 0.0;
                for c in 0..input.channels {
                    for ky in 0..weights.kernel_h {
                        for kx in 0..weights.kernel_w {
                            acc += input.at(c, y * stride + ky, x * stride + kx)
                                * weights.at(o, c, ky, kx);
                        }
                    }
                }
                *out.at_mut(o, y, x) = acc;
            }
        }
    }
    out
}
