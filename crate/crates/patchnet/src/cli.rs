//! Command implementations behind the `patchnet` binary: train, track,
//! flops, scale-sweep and selftest, plus the sequence manifest format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::ModelParams;
use crate::bbox::{iou, miss_rate, BBox};
use crate::config::{load_config, FileConfig};
use crate::correlation::{
    build_filter_bank, crop_and_warp, CorrelationConfig, CropGeometry,
    FourierCoefficients,
};
use crate::error::{Error, Result};
use crate::fft::{fft2d, ComplexPlane};
use crate::flops::{ablation_rows, net_flops, patch_size_sweep};
use crate::kernels::{conv2d_valid, soft_select_pool};
use crate::ppm::{read_ppm, write_ppm, Image};
use crate::synth::{synth_pair, MotionSpec, Scene};
use crate::tensor::{Tensor3, Tensor4};
use crate::tracking::{avg_flops, match_object, GroundtruthOracle, KeyframePolicy, TrackSession};
use crate::training::{gradcheck, localization_loss, train};
use crate::util::atomic_write;
use crate::weights;

/// A frame directory plus per-frame, per-object groundtruth.
#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub frame_paths: Vec<PathBuf>,
    /// gt[frame] = (object_id, box) in file order; the object set is
    /// constant across frames.
    pub gt: Vec<Vec<(u32, BBox)>>,
}

/// Loads a sequence directory: frames named frame_%06d.ppm numbered densely
/// from 0, plus groundtruth.txt with one line per frame per object:
/// object_id,x_min,y_min,x_max,y_max.
pub fn load_manifest(dir: &Path) -> Result<SequenceManifest> {
    let mut count = 0usize;
    let mut frame_paths = Vec::new();
    loop {
        let path = dir.join(format!("frame_{count:06}.ppm"));
        if !path.exists() {
            break;
        }
        frame_paths.push(path);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Format(format!(
            "{}: no frames found (expected frame_000000.ppm)",
            dir.display()
        )));
    }
    // A frame numbered beyond the dense prefix means there is a gap.
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(num) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".ppm"))
        {
            if let Ok(idx) = num.parse::<usize>() {
                if idx >= count {
                    return Err(Error::Format(format!(
                        "{}: missing frame_{count:06}.ppm (found frame {idx})",
                        dir.display()
                    )));
                }
            }
        }
    }

    let gt_path = dir.join("groundtruth.txt");
    let text = std::fs::read_to_string(&gt_path)
        .map_err(|e| Error::Format(format!("{}: {e}", gt_path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Format(format!(
                "{}:{}: expected object_id,x_min,y_min,x_max,y_max",
                gt_path.display(),
                i + 1
            )));
        }
        let id: u32 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad object id", gt_path.display(), i + 1)))?;
        let mut vals = [0.0f64; 4];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = parts[j + 1].trim().parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad coordinate", gt_path.display(), i + 1))
            })?;
        }
        rows.push((id, BBox::new(vals[0], vals[1], vals[2], vals[3])));
    }
    if rows.len() % count != 0 {
        return Err(Error::Format(format!(
            "{}: {} groundtruth lines are not a multiple of {count} frames",
            gt_path.display(),
            rows.len()
        )));
    }
    let per_frame = rows.len() / count;
    let gt: Vec<Vec<(u32, BBox)>> = rows.chunks(per_frame).map(|c| c.to_vec()).collect();
    for frame in &gt {
        for (i, (id, _)) in frame.iter().enumerate() {
            if *id != gt[0][i].0 {
                return Err(Error::Format(format!(
                    "{}: object ids change between frames",
                    gt_path.display()
                )));
            }
        }
    }
    Ok(SequenceManifest { frame_paths, gt })
}

/// Writes frames and groundtruth in the manifest layout.
pub fn write_manifest(dir: &Path, frames: &[Image], gt: &[Vec<BBox>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        write_ppm(frame, &dir.join(format!("frame_{i:06}.ppm")))?;
    }
    let mut text = String::new();
    for frame_gt in gt {
        for (id, b) in frame_gt.iter().enumerate() {
            writeln!(
                text,
                "{id},{:.3},{:.3},{:.3},{:.3}",
                b.x_min, b.y_min, b.x_max, b.y_max
            )
            .unwrap();
        }
    }
    atomic_write(&dir.join("groundtruth.txt"), text.as_bytes())
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(FileConfig::default()),
    }
}

/// Trains on synthetic pairs and writes the weight file plus a CSV loss log
/// (columns step,loc_loss,bbox_loss,total).
pub fn cmd_train(
    config_path: Option<&Path>,
    out_path: &Path,
    log_path: Option<&Path>,
    seed: u64,
    threads: usize,
) -> Result<()> {
    let mut cfg = load_file_config(config_path)?;
    cfg.model.validate()?;
    cfg.train.threads = threads;
    let (params, log) = train(&cfg.model, &cfg.train, seed)?;
    weights::save(out_path, &cfg.model, &params)?;

    let mut csv = String::from("step,loc_loss,bbox_loss,total\n");
    for row in &log {
        writeln!(
            csv,
            "{},{:.9},{:.9},{:.9}",
            row.step, row.loc_loss, row.bbox_loss, row.total
        )
        .unwrap();
    }
    let log_path = match log_path {
        Some(p) => p.to_path_buf(),
        None => out_path.with_extension("log.csv"),
    };
    atomic_write(&log_path, csv.as_bytes())
}

/// Summary line of a tracking run.
#[derive(Debug, Clone, Copy)]
pub struct TrackSummary {
    pub miss_rate: f64,
    pub mean_iou: f64,
    pub avg_flops: f64,
}

/// Tracks a sequence under the given policy, writing one CSV row per frame
/// and object plus a trailing summary row.
pub fn cmd_track(
    weights_path: &Path,
    seq_dir: &Path,
    policy: KeyframePolicy,
    out_path: Option<&Path>,
    oracle_flops: f64,
    threads: usize,
) -> Result<TrackSummary> {
    let (config, params) = weights::load(weights_path)?;
    let manifest = load_manifest(seq_dir)?;
    let oracle = GroundtruthOracle {
        gt: manifest.gt.clone(),
    };
    let mut session = TrackSession::new(params, config.clone(), policy, Box::new(oracle))?;
    session.threads = threads;

    let object_ids: Vec<u32> = manifest.gt[0].iter().map(|(id, _)| *id).collect();
    let frames = manifest.frame_paths.len();
    let mut csv = String::from("frame,object_id,x_min,y_min,x_max,y_max,confidence,was_keyframe\n");
    // Per-object prediction sequences for the metrics.
    let mut preds: Vec<Vec<Option<BBox>>> = vec![Vec::with_capacity(frames); object_ids.len()];

    for (f, path) in manifest.frame_paths.iter().enumerate() {
        let frame = read_ppm(path)?;
        let (boxes, was_key) = session.step(&frame)?;
        for (slot, id) in object_ids.iter().enumerate() {
            let hit = boxes.iter().find(|(bid, _)| bid == id).map(|(_, b)| *b);
            preds[slot].push(hit);
            if let Some(b) = hit {
                writeln!(
                    csv,
                    "{f},{id},{:.3},{:.3},{:.3},{:.3},{:.6},{}",
                    b.x_min,
                    b.y_min,
                    b.x_max,
                    b.y_max,
                    b.score,
                    if was_key { 1 } else { 0 }
                )
                .unwrap();
            }
        }
    }

    // Metrics against groundtruth.
    let mut iou_sum = 0.0;
    let mut iou_count = 0usize;
    for (slot, id) in object_ids.iter().enumerate() {
        for f in 0..frames {
            let gt = manifest.gt[f]
                .iter()
                .find(|(bid, _)| bid == id)
                .map(|(_, b)| *b)
                .expect("constant object set");
            iou_sum += preds[slot][f].map(|p| iou(&p, &gt)).unwrap_or(0.0);
            iou_count += 1;
        }
    }
    let mean_iou = iou_sum / iou_count.max(1) as f64;

    let gap = 10usize;
    let mr = if frames > gap {
        let mut sum = 0.0;
        for (slot, id) in object_ids.iter().enumerate() {
            let gts: Vec<BBox> = (0..frames)
                .map(|f| {
                    manifest.gt[f]
                        .iter()
                        .find(|(bid, _)| bid == id)
                        .map(|(_, b)| *b)
                        .unwrap()
                })
                .collect();
            sum += miss_rate(&preds[slot], &gts, gap, 0.7)?;
        }
        sum / object_ids.len() as f64
    } else {
        f64::NAN
    };

    let patchnet_cost = net_flops(&config).total();
    let avg = avg_flops(&session.stats(), oracle_flops, patchnet_cost)?;
    writeln!(csv, "summary,,{:.6},{:.6},{:.1},,,", mr, mean_iou, avg).unwrap();

    if let Some(p) = out_path {
        atomic_write(p, csv.as_bytes())?;
    } else {
        print!("{csv}");
    }
    Ok(TrackSummary {
        miss_rate: mr,
        mean_iou,
        avg_flops: avg,
    })
}

/// Emits the FLOP report: one row per ablation variant plus the patch-size
/// sweep, columns variant,correlation,aggregation,fft,total.
pub fn cmd_flops(config_path: Option<&Path>, out_path: Option<&Path>) -> Result<String> {
    let cfg = load_file_config(config_path)?.model;
    let mut csv = String::from("variant,correlation,aggregation,fft,total\n");
    for row in ablation_rows(&cfg) {
        writeln!(
            csv,
            "{},{:.0},{:.0},{:.0},{:.0}",
            row.name, row.correlation, row.aggregation, row.fft, row.total
        )
        .unwrap();
    }
    for (k, _) in patch_size_sweep(&cfg, &[2, 4, 8, 16]) {
        let mut c = cfg.clone();
        c.patch_size = k;
        c.template_size = c.patches_per_side * k;
        c.search_size = (cfg.corr_map_size() - 1) * c.corr_stride + k;
        let b = net_flops(&c);
        writeln!(
            csv,
            "patch-size-{k},{:.0},{:.0},{:.0},{:.0}",
            b.correlation,
            b.aggregation_score() + b.bbox_overhead(),
            b.fourier,
            b.total()
        )
        .unwrap();
    }
    if let Some(p) = out_path {
        atomic_write(p, csv.as_bytes())?;
    }
    Ok(csv)
}

/// One scale-sweep measurement.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub object: usize,
    pub scale: f64,
    /// Center error of the full matcher, frame pixels.
    pub patchnet_err: f64,
    /// Center error of a single whole-template correlation peak.
    pub full_template_err: f64,
}

/// Peak of a single whole-template correlation over the search crop,
/// returned as continuous crop coordinates (x, y).
fn full_template_peak(search: &Tensor3, template: &Tensor3, stride: usize) -> Result<(f64, f64)> {
    let t = template.height;
    let filter = Tensor4::from_vec(
        1,
        template.channels,
        t,
        t,
        template.data().to_vec(),
    )?;
    let map = conv2d_valid(search, &filter, stride)?;
    let (py, px, _) = crate::kernels::argmax_spatial(&map)?;
    let half = t as f64 / 2.0;
    Ok((
        (px * stride) as f64 + half,
        (py * stride) as f64 + half,
    ))
}

/// Runs the scale-robustness sweep: synthetic objects rescaled in place,
/// center error of the full matcher vs whole-template correlation.
pub fn run_scale_sweep(
    config: &CorrelationConfig,
    params: &ModelParams,
    objects: usize,
    scales: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(objects * scales.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for obj in 0..objects {
        let scene = Scene::new(rng.gen(), 256, 256, 3);
        let w: f64 = rng.gen_range(52.0..76.0);
        let h: f64 = w * rng.gen_range(0.85..1.18);
        let (cx, cy) = (128.0, 128.0);
        let prior = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
        let template_frame = scene.render(&prior, 1.0);
        let bank = build_filter_bank(&template_frame, &prior, &params.coeffs, config)?;
        // The whole-template filter shares the bank's normalization.
        let template_crop = crop_and_warp(&template_frame, &prior, config.template_size, 1.0)?;

        for &scale in scales {
            let scaled = BBox::new(
                cx - scale * w / 2.0,
                cy - scale * h / 2.0,
                cx + scale * w / 2.0,
                cy + scale * h / 2.0,
            );
            let frame = scene.render(&scaled, 1.0);
            let geom = CropGeometry::for_box(&prior, config.search_size, config.search_context())?;

            let pn_err = match match_object(&frame, &prior, &bank, params, config, true) {
                Ok(m) => {
                    let (mx, my) = m.bbox.center();
                    ((mx - cx).powi(2) + (my - cy).powi(2)).sqrt()
                }
                Err(_) => f64::INFINITY,
            };

            let search = crop_and_warp(&frame, &prior, config.search_size, config.search_context())?;
            let (px, py) = full_template_peak(&search, &template_crop, 2)?;
            let fx = geom.frame_coord(px, geom.center_x);
            let fy = geom.frame_coord(py, geom.center_y);
            let ft_err = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();

            rows.push(SweepRow {
                object: obj,
                scale,
                patchnet_err: pn_err,
                full_template_err: ft_err,
            });
        }
    }
    Ok(rows)
}

/// Writes the scale sweep CSV: object,scale,patchnet_err,full_template_err.
pub fn cmd_scale_sweep(
    weights_path: &Path,
    objects: usize,
    scales: &[f64],
    seed: u64,
    out_path: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let (config, params) = weights::load(weights_path)?;
    let rows = run_scale_sweep(&config, &params, objects, scales, seed)?;
    let mut csv = String::from("object,scale,patchnet_err,full_template_err\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{:.3},{:.4},{:.4}",
            r.object, r.scale, r.patchnet_err, r.full_template_err
        )
        .unwrap();
    }
    if let Some(p) = out_path {
        atomic_write(p, csv.as_bytes())?;
    } else {
        print!("{csv}");
    }
    Ok(rows)
}

fn selftest_line(name: &str, ok: bool, detail: &str) -> bool {
    println!("{}: {name}{}", if ok { "PASS" } else { "FAIL" }, if detail.is_empty() {
        String::new()
    } else {
        format!(" ({detail})")
    });
    ok
}

/// Runs the oracle-equivalence and gradient-check suites, printing one
/// PASS/FAIL line each. Fails fast with a nonzero-exit error if any check
/// fails.
pub fn cmd_selftest() -> Result<()> {
    let mut all_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);

    // conv2d_valid against a brute-force loop.
    let mut conv_ok = true;
    for _ in 0..300 {
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(4..13), rng.gen_range(4..13));
        let (o, k, s) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..3));
        let input = Tensor3::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let weights = Tensor4::from_vec(
            o,
            c,
            k,
            k,
            (0..o * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let fast = conv2d_valid(&input, &weights, s).unwrap();
        for oc in 0..o {
            for y in 0..fast.height {
                for x in 0..fast.width {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += input.at(ic, y * s + ky, x * s + kx)
                                    * weights.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    if (fast.at(oc, y, x) - acc).abs() > 1e-6 * acc.abs().max(1.0) {
                        conv_ok = false;
                    }
                }
            }
        }
    }
    all_ok &= selftest_line("conv2d_valid oracle equivalence", conv_ok, "300 random instances");

    // soft_select_pool against the direct soft-selection formula.
    let mut pool_ok = true;
    for _ in 0..300 {
        let ch = rng.gen_range(1..3);
        let sz = 2 * rng.gen_range(1..4);
        let scores = Tensor3::from_vec(
            ch,
            sz,
            sz,
            (0..ch * sz * sz).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let offsets = Tensor3::from_vec(
            4 * ch,
            sz,
            sz,
            (0..4 * ch * sz * sz).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let mut bias = [[0.0; 4]; 4];
        for row in bias.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        let (s_out, o_out) = soft_select_pool(&scores, &offsets, &bias).unwrap();
        for c in 0..ch {
            for wy in 0..sz / 2 {
                for wx in 0..sz / 2 {
                    let mut s = [0.0; 4];
                    for pos in 0..4 {
                        s[pos] = scores.at(c, 2 * wy + pos / 2, 2 * wx + pos % 2);
                    }
                    let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if (s_out.at(c, wy, wx) - mx).abs() > 1e-12 {
                        pool_ok = false;
                    }
                    let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for comp in 0..4 {
                        let expect: f64 = (0..4)
                            .map(|pos| {
                                e[pos] / z
                                    * (offsets.at(4 * c + comp, 2 * wy + pos / 2, 2 * wx + pos % 2)
                                        + bias[pos][comp])
                            })
                            .sum();
                        if (o_out.at(4 * c + comp, wy, wx) - expect).abs() > 1e-6 {
                            pool_ok = false;
                        }
                    }
                }
            }
        }
    }
    all_ok &= selftest_line("soft_select_pool oracle equivalence", pool_ok, "300 random instances");

    // FFT roundtrip and impulse.
    let mut fft_ok = true;
    for _ in 0..200 {
        let n = 1usize << rng.gen_range(1..4);
        let mut plane = ComplexPlane::zeros(n, n).unwrap();
        for v in &mut plane.re {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in &mut plane.im {
            *v = rng.gen_range(-1.0..1.0);
        }
        let back = fft2d(&fft2d(&plane, false).unwrap(), true).unwrap();
        for i in 0..n * n {
            if (back.re[i] - plane.re[i]).abs() > 1e-9 || (back.im[i] - plane.im[i]).abs() > 1e-9 {
                fft_ok = false;
            }
        }
    }
    all_ok &= selftest_line("fft2d roundtrip identity", fft_ok, "200 random planes");

    // Localization loss gradient against finite differences.
    let mut loss_ok = true;
    for _ in 0..100 {
        let mut resp = Tensor3::zeros(1, 5, 5);
        for v in resp.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let gt = (rng.gen_range(0..5), rng.gen_range(0..5));
        let (_, grad) = localization_loss(&resp, gt, 0.05).unwrap();
        let eps = 1e-6;
        for idx in 0..25 {
            let orig = resp.data()[idx];
            resp.data_mut()[idx] = orig + eps;
            let hi = localization_loss(&resp, gt, 0.05).unwrap().0;
            resp.data_mut()[idx] = orig - eps;
            let lo = localization_loss(&resp, gt, 0.05).unwrap().0;
            resp.data_mut()[idx] = orig;
            let fd = (hi - lo) / (2.0 * eps);
            if (fd - grad.data()[idx]).abs() > 1e-4 * grad.data()[idx].abs().max(1.0) {
                loss_ok = false;
            }
        }
    }
    all_ok &= selftest_line("localization_loss gradient", loss_ok, "100 random maps");

    // Fourier identity and DC-suppression checks.
    let mut fourier_ok = true;
    {
        let filters = Tensor4::from_vec(
            2,
            1,
            8,
            8,
            (0..128).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let id = crate::correlation::fourier_reweight(&filters, &FourierCoefficients::identity(8))
            .unwrap();
        for (a, b) in id.data().iter().zip(filters.data()) {
            if (a - b).abs() > 1e-9 {
                fourier_ok = false;
            }
        }
        let mut dc0 = FourierCoefficients::identity(8);
        dc0.quadrant_mut()[0] = 0.0;
        let out = crate::correlation::fourier_reweight(&filters, &dc0).unwrap();
        for f in 0..2 {
            let mean: f64 = filters.filter(f).iter().sum::<f64>() / 64.0;
            for i in 0..64 {
                if (out.filter(f)[i] - (filters.filter(f)[i] - mean)).abs() > 1e-6 {
                    fourier_ok = false;
                }
            }
        }
    }
    all_ok &= selftest_line("fourier identity and zero-DC mean subtraction", fourier_ok, "");

    // End-to-end gradient check on the reduced config.
    let reduced = CorrelationConfig {
        patches_per_side: 4,
        patch_size: 8,
        template_size: 32,
        search_size: 42,
        corr_stride: 2,
        channels: 3,
        relu_between_stages: false,
    };
    let grad_ok = match gradcheck::check(&reduced, 11, 3, 1e-3, 1e-6) {
        Ok(report) => {
            all_ok &= selftest_line(
                "reverse-mode gradients vs finite differences",
                true,
                &format!("{} parameters, worst error {:.2e}", report.checked, report.worst_abs_err),
            );
            true
        }
        Err(e) => {
            all_ok &= selftest_line("reverse-mode gradients vs finite differences", false, &e.to_string());
            false
        }
    };
    let _ = grad_ok;

    // Training-target round trip.
    let mut target_ok = true;
    let cfg = CorrelationConfig::default();
    for i in 0..20 {
        let pair = synth_pair(5000 + i, &MotionSpec::default(), &cfg);
        let geom =
            CropGeometry::for_box(&pair.template_box, cfg.search_size, cfg.search_context())
                .unwrap();
        let back = crate::aggregation::compose_box(
            &pair.template_box,
            pair.gt_center,
            pair.gt_offsets,
            &cfg,
            &geom,
        )
        .unwrap();
        if (back.x_min - pair.target_box.x_min).abs() > 1e-9
            || (back.y_max - pair.target_box.y_max).abs() > 1e-9
        {
            target_ok = false;
        }
    }
    all_ok &= selftest_line("regression-target round trip", target_ok, "20 random pairs");

    if all_ok {
        Ok(())
    } else {
        Err(Error::InvariantViolation("selftest failed".to_string()))
    }
}
