// debug: recipe probe for default-config training stability and quality
use patchnet::aggregation::ModelParams;
use patchnet::bbox::iou;
use patchnet::correlation::{build_filter_bank, CorrelationConfig, FourierCoefficients};
use patchnet::synth::{synth_pair, synth_sequence, MotionSpec, SequenceSpec};
use patchnet::tracking::match_object;
use patchnet::training::{train, TrainConfig};
use std::time::Instant;

fn bench_miss(params: &ModelParams, cfg: &CorrelationConfig, use_offsets: bool, fourier: bool, n: usize) -> f64 {
    let motion = MotionSpec::default();
    let mut miss = 0usize;
    for i in 0..n {
        let pair = synth_pair(900_000 + i as u64, &motion, cfg);
        let coeffs = if fourier { params.coeffs.clone() } else { FourierCoefficients::identity(cfg.patch_size) };
        let bank = build_filter_bank(&pair.template_frame, &pair.template_box, &coeffs, cfg).unwrap();
        match match_object(&pair.search_frame, &pair.template_box, &bank, params, cfg, use_offsets) {
            Ok(m) => { if iou(&m.bbox, &pair.target_box) < 0.7 { miss += 1; } }
            Err(_) => miss += 1,
        }
    }
    miss as f64 / n as f64
}

fn stationary_iou(params: &ModelParams, cfg: &CorrelationConfig) -> f64 {
    let mut worst: f64 = 1.0;
    for seed in [21u64, 33, 77] {
        let seq = synth_sequence(seed, &SequenceSpec::stationary(2));
        let gt = seq.gt[0][0];
        let bank = build_filter_bank(&seq.frames[0], &gt, &params.coeffs, cfg).unwrap();
        let m = match_object(&seq.frames[1], &gt, &bank, params, cfg, true).unwrap();
        worst = worst.min(iou(&m.bbox, &gt));
    }
    worst
}

fn main() {
    let cfg = CorrelationConfig::default();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(600);
    let lr: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.02);
    let clip: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let clip = if clip > 0.0 { Some(clip) } else { None };

    let t0 = Instant::now();
    let tcfg = TrainConfig { steps, batch_size: 8, lr, threads: 2, grad_clip: clip, ..TrainConfig::default() };
    let (full, log) = train(&cfg, &tcfg, 4242).unwrap();
    let tail: f64 = log.iter().rev().take(20).map(|r| r.total).sum::<f64>() / 20.0;
    let cmax = full.coeffs.quadrant().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let smax: f64 = full.stages.iter().flat_map(|s| s.score_conv.data()).fold(0.0f64, |a, v| a.max(v.abs()));
    println!("steps {steps} lr {lr} clip {:?} -> {:.0}s tail-loss {:.2} coeffmax {:.2} scoremax {:.2}", clip, t0.elapsed().as_secs_f64(), tail, cmax, smax);
    println!("  stationary IoU {:.3}", stationary_iou(&full, &cfg));
    println!("  miss(full)={:.3} miss(peak-only)={:.3}", bench_miss(&full, &cfg, true, true, 200), bench_miss(&full, &cfg, false, true, 200));
}
