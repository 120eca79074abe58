//! Seeded synthetic data: a textured square drifting over a textured
//! background, optionally accompanied by identical-looking distractors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::net::loss::LabelMap;
use crate::net::model::{NetConfig, TrainPair};
use crate::tracker::{extract_patch, Rect};

/// Parameters of a generated tracking sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub object_side: usize,
    /// Per-axis displacement per frame, in pixels.
    pub speed: i64,
    /// Number of extra patches sharing the object's texture.
    pub distractors: usize,
    /// Per-frame probability of picking a new heading.
    pub turn_prob: f64,
    /// Amplitude of per-frame pixel noise.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            object_side: 10,
            speed: 2,
            distractors: 0,
            turn_prob: 0.1,
            noise: 0.02,
        }
    }
}

/// Frames plus the true box of the object in each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<GrayImage>,
    pub boxes: Vec<Rect>,
}

/// Bilinear upsampling of a random grid with one knot every `cell` pixels.
fn smooth_texture(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64, lo: f64, hi: f64) -> GrayImage {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let knots: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(lo..hi)).collect();
    let grid = GrayImage::new(gw, gh, knots).expect("grid shape");
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(grid.bilinear(x as f64 / cell, y as f64 / cell));
        }
    }
    GrayImage::new(w, h, data).expect("texture shape")
}

fn paste(frame: &mut GrayImage, patch: &GrayImage, x0: i64, y0: i64) {
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            let fx = x0 + x as i64;
            let fy = y0 + y as i64;
            if fx >= 0 && fy >= 0 && (fx as usize) < frame.width() && (fy as usize) < frame.height() {
                frame.set(fx as usize, fy as usize, patch.get(x, y));
            }
        }
    }
}

fn add_noise(frame: &mut GrayImage, rng: &mut ChaCha8Rng, amplitude: f64) {
    if amplitude <= 0.0 {
        return;
    }
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let v = frame.get(x, y) + rng.random_range(-amplitude..amplitude);
            frame.set(x, y, v.clamp(0.0, 1.0));
        }
    }
}

/// High-contrast object texture.
fn object_texture(rng: &mut ChaCha8Rng, side: usize) -> GrayImage {
    smooth_texture(rng, side, side, 2.5, 0.0, 1.0)
}

/// Low-contrast background.
fn background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    let coarse = smooth_texture(rng, w, h, 12.0, 0.3, 0.7);
    let fine = smooth_texture(rng, w, h, 3.0, -0.08, 0.08);
    let data = coarse
        .as_slice()
        .iter()
        .zip(fine.as_slice())
        .map(|(a, b)| (a + b).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(w, h, data).expect("background shape")
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    x: i64,
    y: i64,
    vx: i64,
    vy: i64,
}

impl Mover {
    fn random(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Self {
        let span_x = (cfg.width - cfg.object_side) as i64;
        let span_y = (cfg.height - cfg.object_side) as i64;
        let mut m = Self {
            x: rng.random_range(span_x / 4..=3 * span_x / 4),
            y: rng.random_range(span_y / 4..=3 * span_y / 4),
            vx: 0,
            vy: 0,
        };
        m.turn(rng, cfg.speed);
        m
    }

    fn turn(&mut self, rng: &mut ChaCha8Rng, speed: i64) {
        loop {
            self.vx = rng.random_range(-1..=1) * speed;
            self.vy = rng.random_range(-1..=1) * speed;
            if self.vx != 0 || self.vy != 0 || speed == 0 {
                break;
            }
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng, cfg: &SceneConfig) {
        if cfg.turn_prob > 0.0 && rng.random_bool(cfg.turn_prob.min(1.0)) {
            self.turn(rng, cfg.speed);
        }
        let max_x = (cfg.width - cfg.object_side) as i64;
        let max_y = (cfg.height - cfg.object_side) as i64;
        if !(0..=max_x).contains(&(self.x + self.vx)) {
            self.vx = -self.vx;
        }
        if !(0..=max_y).contains(&(self.y + self.vy)) {
            self.vy = -self.vy;
        }
        self.x += self.vx;
        self.y += self.vy;
    }
}

/// Generates `frames` frames. Deterministic in `seed`.
pub fn synth_sequence(cfg: &SceneConfig, frames: usize, seed: u64) -> Result<SyntheticSequence> {
    if frames == 0 {
        return Err(Error::EmptyInput("sequence length"));
    }
    if cfg.object_side == 0 || cfg.object_side * 2 > cfg.width.min(cfg.height) {
        return Err(Error::InvalidConfig(format!(
            "object side {} does not fit a {}x{} frame",
            cfg.object_side, cfg.width, cfg.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(&mut rng, cfg.width, cfg.height);
    let tex = object_texture(&mut rng, cfg.object_side);
    let mut object = Mover::random(&mut rng, cfg);
    let mut distractors: Vec<Mover> = (0..cfg.distractors)
        .map(|_| Mover::random(&mut rng, cfg))
        .collect();

    let side = cfg.object_side as f64;
    let mut out = SyntheticSequence {
        frames: Vec::with_capacity(frames),
        boxes: Vec::with_capacity(frames),
    };
    for t in 0..frames {
        if t > 0 {
            object.advance(&mut rng, cfg);
            for d in &mut distractors {
                d.advance(&mut rng, cfg);
            }
        }
        let mut frame = bg.clone();
        for d in &distractors {
            paste(&mut frame, &tex, d.x, d.y);
        }
        paste(&mut frame, &tex, object.x, object.y);
        add_noise(&mut frame, &mut rng, cfg.noise);
        out.frames.push(frame);
        out.boxes.push(Rect::new(object.x as f64, object.y as f64, side, side));
    }
    Ok(out)
}

/// Parameters of a generated training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    /// Largest per-axis object displacement between exemplar and search frame.
    pub max_offset: i64,
    /// One identical-texture distractor per frame.
    pub distractors: bool,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 200,
            max_offset: 6,
            distractors: false,
            noise: 0.02,
        }
    }
}

/// Exemplar/search pairs with label maps matched to `net`'s geometry.
///
/// The object is half the exemplar side, so the exemplar context covers it at
/// one image pixel per frame pixel. Setting `max_offset` to zero produces
/// pairs whose positive labels sit exactly at the zero-displacement position.
pub fn make_synthetic_dataset(
    data: &DatasetConfig,
    net: &NetConfig,
    seed: u64,
) -> Result<Vec<TrainPair>> {
    if data.count == 0 {
        return Err(Error::EmptyInput("dataset size"));
    }
    net.validate()?;
    let e = net.exemplar_image_side();
    let object_side = e / 2;
    let frame_side = 2 * e + 2 * data.max_offset as usize + 8;
    let u0 = net.zero_displacement() as f64;
    let stride = net.stride as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    (0..data.count)
        .map(|_| {
            let bg = background(&mut rng, frame_side, frame_side);
            let tex = object_texture(&mut rng, object_side);
            let (dx, dy) = if data.max_offset > 0 {
                (
                    rng.random_range(-data.max_offset..=data.max_offset),
                    rng.random_range(-data.max_offset..=data.max_offset),
                )
            } else {
                (0, 0)
            };
            let origin = ((frame_side - object_side) / 2) as i64;
            let (ax, ay) = (origin - dx / 2, origin - dy / 2);
            let (bx, by) = (ax + dx, ay + dy);

            let distractor = data.distractors.then(|| {
                let span = (frame_side - object_side) as i64;
                let mut pick = || loop {
                    let p = (rng.random_range(0..=span), rng.random_range(0..=span));
                    if (p.0 - ax).abs() > object_side as i64 || (p.1 - ay).abs() > object_side as i64 {
                        break p;
                    }
                };
                (pick(), pick())
            });

            let mut render = |x: i64, y: i64, d: Option<(i64, i64)>| {
                let mut f = bg.clone();
                if let Some((px, py)) = d {
                    paste(&mut f, &tex, px, py);
                }
                paste(&mut f, &tex, x, y);
                add_noise(&mut f, &mut rng, data.noise);
                f
            };
            let frame_a = render(ax, ay, distractor.map(|d| d.0));
            let frame_b = render(bx, by, distractor.map(|d| d.1));

            let half = object_side as f64 / 2.0;
            let center = (ax as f64 + half, ay as f64 + half);
            let exemplar = extract_patch(&frame_a, center, e as f64, e);
            let search = extract_patch(&frame_b, center, 2.0 * e as f64, 2 * e);
            let labels = LabelMap::disc(
                net.search_feature_side(),
                (u0 + dy as f64 / stride, u0 + dx as f64 / stride),
                net.label_radius(),
            )?;
            TrainPair::new(exemplar, search, labels)
        })
        .collect()
}
