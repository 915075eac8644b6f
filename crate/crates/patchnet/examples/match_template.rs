//! Basic template matching: build a filter bank from one frame, then locate
//! the object in a second frame where it has moved and grown.

use patchnet::aggregation::init_params;
use patchnet::correlation::{build_filter_bank, CorrelationConfig};
use patchnet::synth::{synth_pair, MotionSpec};
use patchnet::tracking::match_object;
use patchnet::{iou, Result};

fn main() -> Result<()> {
    let config = CorrelationConfig::default();
    config.validate()?;

    // A synthetic pair: textured object on a textured background, translated
    // and rescaled between the two frames.
    let motion = MotionSpec {
        max_translate_frac: 0.2,
        scale_range: (0.9, 1.15),
        brightness_jitter: 0.05,
        ..MotionSpec::default()
    };
    let pair = synth_pair(7, &motion, &config);

    // Untrained weights still localize via patch correlation peaks; train
    // with `cargo run --release --example train_synthetic` for real offsets.
    let params = init_params(&config, 0);
    let bank = build_filter_bank(
        &pair.template_frame,
        &pair.template_box,
        &params.coeffs,
        &config,
    )?;
    let result = match_object(
        &pair.search_frame,
        &pair.template_box,
        &bank,
        &params,
        &config,
        false,
    )?;

    println!("template box: {:?}", pair.template_box);
    println!("true target:  {:?}", pair.target_box);
    println!(
        "matched:      {:?} (confidence {:.3}, peak {:?})",
        result.bbox, result.confidence, result.peak
    );
    println!("IoU vs truth: {:.3}", iou(&result.bbox, &pair.target_box));
    Ok(())
}
