//! Synthetic scene generator: textured objects on textured backgrounds with
//! exact groundtruth boxes, motion pairs for training, and multi-frame
//! sequences for the tracking harness.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::correlation::{CorrelationConfig, CropGeometry};
use crate::ppm::Image;

/// Motion between the template frame and the search frame.
#[derive(Debug, Clone, Copy)]
pub struct MotionSpec {
    /// Max |translation| per axis as a fraction of the object size.
    pub max_translate_frac: f64,
    /// Scale factor range applied to the object in the second frame.
    pub scale_range: (f64, f64),
    /// Multiplicative brightness jitter (+-fraction) on the second frame.
    pub brightness_jitter: f64,
    /// Fraction of pairs drawn with near-identity motion, mimicking the
    /// abundance of small displacements between nearby video frames.
    pub small_motion_frac: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            max_translate_frac: 0.25,
            scale_range: (0.7, 1.4),
            brightness_jitter: 0.1,
            small_motion_frac: 0.3,
        }
    }
}

impl MotionSpec {
    /// No motion at all; the second frame equals the first.
    pub fn zero() -> Self {
        MotionSpec {
            max_translate_frac: 0.0,
            scale_range: (1.0, 1.0),
            brightness_jitter: 0.0,
            small_motion_frac: 0.0,
        }
    }
}

/// One template/search training example with exact regression targets.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub template_frame: Image,
    pub search_frame: Image,
    pub template_box: BBox,
    pub target_box: BBox,
    /// Response-map cell containing the target center after crop geometry.
    pub gt_center: (usize, usize),
    /// Boundary offsets in crop pixels that reproduce `target_box` exactly
    /// through box composition at `gt_center`.
    pub gt_offsets: [f64; 4],
}

fn hash_unit(seed: u64, a: i64, b: i64, salt: u64) -> f64 {
    let mut h = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (a as u64).wrapping_add(0x1234_5678_9ABC_DEF1);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= (b as u64).wrapping_add(0x0FED_CBA9_8765_4321);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise on a lattice of the given cell count, u/v in [0,1].
fn value_noise(seed: u64, salt: u64, u: f64, v: f64, cells: usize) -> f64 {
    let fu = (u.clamp(0.0, 1.0)) * cells as f64;
    let fv = (v.clamp(0.0, 1.0)) * cells as f64;
    let (iu, iv) = (fu.floor() as i64, fv.floor() as i64);
    let (du, dv) = (fu - iu as f64, fv - iv as f64);
    let n00 = hash_unit(seed, iu, iv, salt);
    let n10 = hash_unit(seed, iu + 1, iv, salt);
    let n01 = hash_unit(seed, iu, iv + 1, salt);
    let n11 = hash_unit(seed, iu + 1, iv + 1, salt);
    (1.0 - dv) * ((1.0 - du) * n00 + du * n10) + dv * ((1.0 - du) * n01 + du * n11)
}

#[derive(Debug, Clone, Copy)]
struct Texture {
    salt: u64,
    base: [f64; 3],
    cells: usize,
    noise_amp: f64,
    freq: (f64, f64),
    phase: f64,
    sin_amp: f64,
}

impl Texture {
    fn sample(&self, seed: u64, u: f64, v: f64) -> [f64; 3] {
        let n = value_noise(seed, self.salt, u, v, self.cells) - 0.5;
        let s = (2.0 * std::f64::consts::PI * (self.freq.0 * u + self.freq.1 * v) + self.phase)
            .sin();
        let mut px = [0.0; 3];
        for c in 0..3 {
            let chroma = value_noise(seed, self.salt ^ (c as u64 + 1), u, v, self.cells) - 0.5;
            px[c] = (self.base[c] + self.noise_amp * n + self.sin_amp * s + 0.12 * chroma)
                .clamp(0.0, 1.0);
        }
        px
    }
}

/// A renderable object: a textured rectangle with an inscribed elliptical
/// patch of a second texture. The groundtruth box is the rectangle.
#[derive(Debug, Clone)]
pub struct SceneObject {
    seed: u64,
    rect_tex: Texture,
    ellipse_tex: Texture,
}

impl SceneObject {
    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let eu = (u - 0.5) / 0.36;
        let ev = (v - 0.5) / 0.36;
        if eu * eu + ev * ev <= 1.0 {
            self.ellipse_tex.sample(self.seed, u, v)
        } else {
            self.rect_tex.sample(self.seed, u, v)
        }
    }
}

/// A full scene: static textured background with optional clutter
/// rectangles, plus one movable object.
#[derive(Debug, Clone)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    seed: u64,
    bg: Texture,
    clutter: Vec<(BBox, Texture)>,
    pub object: SceneObject,
}

fn rand_texture(rng: &mut impl Rng, cells: usize, noise_amp: f64, sin_amp: f64) -> Texture {
    Texture {
        salt: rng.gen(),
        base: [
            rng.gen_range(0.3..0.7),
            rng.gen_range(0.3..0.7),
            rng.gen_range(0.3..0.7),
        ],
        cells,
        noise_amp,
        freq: (rng.gen_range(2.0..5.0), rng.gen_range(2.0..5.0)),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        sin_amp,
    }
}

impl Scene {
    /// Builds a deterministic scene. `clutter` adds textured distractor
    /// rectangles to the background.
    pub fn new(seed: u64, width: usize, height: usize, clutter: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
        let bg = rand_texture(&mut rng, 10, 0.34, 0.0);
        let mut clutter_list = Vec::new();
        for _ in 0..clutter {
            let w = rng.gen_range(20.0..60.0);
            let h = rng.gen_range(20.0..60.0);
            let x = rng.gen_range(-10.0..width as f64 - 10.0);
            let y = rng.gen_range(-10.0..height as f64 - 10.0);
            clutter_list.push((
                BBox::new(x, y, x + w, y + h),
                rand_texture(&mut rng, 6, 0.45, 0.12),
            ));
        }
        let object = SceneObject {
            seed: rng.gen(),
            rect_tex: rand_texture(&mut rng, 8, 0.55, 0.18),
            ellipse_tex: rand_texture(&mut rng, 6, 0.55, 0.22),
        };
        Scene {
            width,
            height,
            seed,
            bg,
            clutter: clutter_list,
            object,
        }
    }

    /// Renders the scene with the object at `object_box`, applying a
    /// multiplicative brightness factor before 8-bit quantization.
    pub fn render(&self, object_box: &BBox, brightness: f64) -> Image {
        let mut img = Image::new(self.width, self.height);
        for y in 0..self.height {
            let fy = y as f64 + 0.5;
            for x in 0..self.width {
                let fx = x as f64 + 0.5;
                let mut px = self.bg.sample(
                    self.seed,
                    fx / self.width as f64,
                    fy / self.height as f64,
                );
                for (cb, tex) in &self.clutter {
                    if fx >= cb.x_min && fx < cb.x_max && fy >= cb.y_min && fy < cb.y_max {
                        px = tex.sample(
                            self.seed,
                            (fx - cb.x_min) / cb.width(),
                            (fy - cb.y_min) / cb.height(),
                        );
                    }
                }
                if fx >= object_box.x_min
                    && fx < object_box.x_max
                    && fy >= object_box.y_min
                    && fy < object_box.y_max
                {
                    let u = (fx - object_box.x_min) / object_box.width();
                    let v = (fy - object_box.y_min) / object_box.height();
                    px = self.object.sample(u, v);
                }
                let rgb = [
                    ((px[0] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                    ((px[1] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                    ((px[2] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                img.set_pixel(x, y, rgb);
            }
        }
        img
    }
}

fn box_at(center: (f64, f64), w: f64, h: f64) -> BBox {
    BBox::new(
        center.0 - 0.5 * w,
        center.1 - 0.5 * h,
        center.0 + 0.5 * w,
        center.1 + 0.5 * h,
    )
}

/// Computes the groundtruth response cell and exact boundary-offset targets
/// for a prior/target box pair under the search crop geometry.
pub fn regression_targets(
    prior: &BBox,
    target: &BBox,
    config: &CorrelationConfig,
) -> ((usize, usize), [f64; 4]) {
    let geom = CropGeometry::for_box(prior, config.search_size, config.search_context())
        .expect("prior box must be non-degenerate");
    let (tcx, tcy) = target.center();
    let cell_x = config.cell_of_crop_coord(geom.crop_coord(tcx, geom.center_x));
    let cell_y = config.cell_of_crop_coord(geom.crop_coord(tcy, geom.center_y));
    let offsets =
        crate::aggregation::offsets_for_target(prior, target, (cell_y, cell_x), config, &geom);
    ((cell_y, cell_x), offsets)
}

/// Renders a training pair: one object on a static background, moved between
/// two frames by a random translation/scale/brightness draw from `motion`.
pub fn synth_pair(seed: u64, motion: &MotionSpec, config: &CorrelationConfig) -> TrainingPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fw, fh) = (256usize, 256usize);
    let scene = Scene::new(rng.gen(), fw, fh, 3);

    let w0: f64 = rng.gen_range(48.0..80.0);
    let h0 = w0 * rng.gen_range(0.75..1.3);
    let margin = 0.75 * w0.max(h0);
    let cx = rng.gen_range(margin..fw as f64 - margin);
    let cy = rng.gen_range(margin..fh as f64 - margin);
    let template_box = box_at((cx, cy), w0, h0);

    let obj_size = w0.max(h0);
    let small = rng.gen_bool(motion.small_motion_frac.clamp(0.0, 1.0));
    let translate_cap = if small {
        0.2 * motion.max_translate_frac
    } else {
        motion.max_translate_frac
    };
    let dx = rng.gen_range(-1.0..1.0) * translate_cap * obj_size;
    let dy = rng.gen_range(-1.0..1.0) * translate_cap * obj_size;
    // Log-uniform scale keeps growth and shrink symmetric.
    let (lo, hi) = motion.scale_range;
    let scale = if small {
        (rng.gen_range(lo.ln() * 0.15..=hi.ln() * 0.15)).exp()
    } else {
        (rng.gen_range(lo.ln()..=hi.ln())).exp()
    };
    let brightness = 1.0 + rng.gen_range(-1.0..1.0) * motion.brightness_jitter;

    let (w2, h2) = (scale * w0, scale * h0);
    let cx2 = (cx + dx).clamp(0.5 * w2 + 1.0, fw as f64 - 0.5 * w2 - 1.0);
    let cy2 = (cy + dy).clamp(0.5 * h2 + 1.0, fh as f64 - 0.5 * h2 - 1.0);
    let target_box = box_at((cx2, cy2), w2, h2);

    let template_frame = scene.render(&template_box, 1.0);
    let search_frame = scene.render(&target_box, brightness);
    let (gt_center, gt_offsets) = regression_targets(&template_box, &target_box, config);

    TrainingPair {
        template_frame,
        search_frame,
        template_box,
        target_box,
        gt_center,
        gt_offsets,
    }
}

/// Parameters of a synthetic multi-frame sequence.
#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    /// Per-frame translation as a fraction of object size (0 = static).
    pub step_frac: f64,
    /// Per-frame multiplicative scale drift range.
    pub scale_step: (f64, f64),
    pub brightness_jitter: f64,
    pub clutter: usize,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            frames: 30,
            width: 320,
            height: 256,
            objects: 1,
            step_frac: 0.06,
            scale_step: (0.985, 1.015),
            brightness_jitter: 0.03,
            clutter: 3,
        }
    }
}

impl SequenceSpec {
    /// Identical frames throughout.
    pub fn stationary(frames: usize) -> Self {
        SequenceSpec {
            frames,
            step_frac: 0.0,
            scale_step: (1.0, 1.0),
            brightness_jitter: 0.0,
            ..SequenceSpec::default()
        }
    }
}

/// A rendered sequence with per-frame, per-object groundtruth boxes.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<Image>,
    /// gt[frame][object]
    pub gt: Vec<Vec<BBox>>,
}

/// Renders a deterministic sequence of random-walking objects. Objects are
/// confined to disjoint horizontal bands so they never overlap.
pub fn synth_sequence(seed: u64, spec: &SequenceSpec) -> SynthSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_h = spec.height as f64 / spec.objects as f64;

    struct Track {
        scene: Scene,
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        band: (f64, f64),
    }
    let mut tracks = Vec::new();
    for i in 0..spec.objects {
        let scene = Scene::new(rng.gen(), spec.width, spec.height, spec.clutter);
        let max_side = (band_h * 0.6).min(90.0);
        let w = rng.gen_range(0.5 * max_side..max_side);
        let h = rng.gen_range(0.5 * max_side..max_side);
        let band = (i as f64 * band_h, (i + 1) as f64 * band_h);
        let cx = rng.gen_range(0.6 * w..spec.width as f64 - 0.6 * w);
        let cy = rng.gen_range(band.0 + 0.55 * h..band.1 - 0.55 * h);
        tracks.push(Track {
            scene,
            cx,
            cy,
            w,
            h,
            band,
        });
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gt = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        if f > 0 {
            for t in &mut tracks {
                let size = t.w.max(t.h);
                t.cx += rng.gen_range(-1.0..1.0) * spec.step_frac * size;
                t.cy += rng.gen_range(-1.0..1.0) * spec.step_frac * size;
                let s = rng.gen_range(spec.scale_step.0..=spec.scale_step.1);
                t.w *= s;
                t.h *= s;
                t.cx = t.cx.clamp(0.55 * t.w, spec.width as f64 - 0.55 * t.w);
                t.cy = t.cy.clamp(t.band.0 + 0.55 * t.h, t.band.1 - 0.55 * t.h);
            }
        }
        let brightness = if f == 0 {
            1.0
        } else {
            1.0 + rng.gen_range(-1.0..1.0) * spec.brightness_jitter
        };

        // Composite all objects into one frame: render each track's scene
        // object into a shared canvas over the first track's background.
        let mut boxes = Vec::with_capacity(tracks.len());
        for t in &tracks {
            boxes.push(box_at((t.cx, t.cy), t.w, t.h));
        }
        let mut img = tracks[0].scene.render(&boxes[0], brightness);
        for (t, b) in tracks.iter().zip(boxes.iter()).skip(1) {
            paint_object(&mut img, &t.scene.object, b, brightness);
        }
        frames.push(img);
        gt.push(boxes);
    }
    SynthSequence { frames, gt }
}

fn paint_object(img: &mut Image, object: &SceneObject, b: &BBox, brightness: f64) {
    let x0 = b.x_min.floor().max(0.0) as usize;
    let x1 = (b.x_max.ceil() as usize).min(img.width);
    let y0 = b.y_min.floor().max(0.0) as usize;
    let y1 = (b.y_max.ceil() as usize).min(img.height);
    for y in y0..y1 {
        let fy = y as f64 + 0.5;
        if fy < b.y_min || fy >= b.y_max {
            continue;
        }
        for x in x0..x1 {
            let fx = x as f64 + 0.5;
            if fx < b.x_min || fx >= b.x_max {
                continue;
            }
            let px = object.sample((fx - b.x_min) / b.width(), (fy - b.y_min) / b.height());
            img.set_pixel(
                x,
                y,
                [
                    ((px[0] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                    ((px[1] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                    ((px[2] * brightness).clamp(0.0, 1.0) * 255.0).round() as u8,
                ],
            );
        }
    }
}
