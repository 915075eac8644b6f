//! Skip-frame tracking on a synthetic sequence: the groundtruth oracle runs
//! on keyframes only, the matcher handles the frames in between.
//!
//! Usage: cargo run --release --example track_skip_frame -- [interval]

use patchnet::correlation::CorrelationConfig;
use patchnet::flops::net_flops;
use patchnet::synth::{synth_sequence, SequenceSpec};
use patchnet::tracking::{avg_flops, GroundtruthOracle, KeyframePolicy, TrackSession};
use patchnet::training::{train, TrainConfig};
use patchnet::util::thread_limit_from_env;
use patchnet::{iou, Result};

fn main() -> Result<()> {
    let interval: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(5);

    let config = CorrelationConfig::default();
    println!("training a small model first (~1 min) ...");
    let tcfg = TrainConfig {
        steps: 250,
        lr: 0.02,
        grad_clip: Some(1.0),
        threads: thread_limit_from_env().max(2),
        ..TrainConfig::default()
    };
    let (params, _) = train(&config, &tcfg, 11)?;

    let seq = synth_sequence(
        3,
        &SequenceSpec {
            frames: 40,
            objects: 2,
            ..SequenceSpec::default()
        },
    );
    let oracle = GroundtruthOracle::from_boxes(&seq.gt);
    let mut session = TrackSession::new(
        params,
        config.clone(),
        KeyframePolicy::Fixed { interval },
        Box::new(oracle),
    )?;
    session.threads = thread_limit_from_env().max(2);

    let mut iou_sum = 0.0;
    let mut n = 0usize;
    for (f, frame) in seq.frames.iter().enumerate() {
        let (boxes, was_key) = session.step(frame)?;
        for (id, b) in &boxes {
            let gt = seq.gt[f][*id as usize];
            iou_sum += iou(b, &gt);
            n += 1;
        }
        if f < 8 {
            println!(
                "frame {f:2} {} {} objects",
                if was_key { "KEY  " } else { "inter" },
                boxes.len()
            );
        }
    }

    let stats = session.stats();
    let patchnet_cost = net_flops(&config).total();
    let oracle_cost = 2.5e9; // a compact detector, per keyframe
    let avg = avg_flops(&stats, oracle_cost, patchnet_cost)?;
    println!("frames: {}, keyframes: {}", stats.frames, stats.keyframes);
    println!("mean IoU vs groundtruth: {:.3}", iou_sum / n as f64);
    println!(
        "avg cost: {:.2} MFLOPs/frame vs {:.0} MFLOPs baseline ({:.1}x reduction)",
        avg / 1e6,
        oracle_cost / 1e6,
        oracle_cost / avg
    );
    Ok(())
}
