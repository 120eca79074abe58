//! Online tracking with a trained model: multi-scale search, windowed score
//! maps, damped scale updates and a moving-average template.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cf::score;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::net::Model;
use crate::spectral::{hann_window, MultiChannelMap, Plane};

/// Axis-aligned box. `(x, y)` is the top-left corner in 0-based pixel
/// coordinates, where pixel `i` covers `[i, i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateRect(format!("{self:?}")));
        }
        Ok(())
    }

    /// Side of the square exemplar context: `√((w + 2p)(h + 2p))` with `p = (w + h)/4`.
    pub fn context_side(&self) -> f64 {
        let p = (self.w + self.h) / 4.0;
        ((self.w + 2.0 * p) * (self.h + 2.0 * p)).sqrt()
    }
}

/// Online hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Geometric factor between adjacent search scales.
    pub scale_step: f64,
    /// Multiplier applied to responses at scales other than the current one.
    pub scale_penalty: f64,
    /// Rolling-average rate of the scale estimate.
    pub scale_lr: f64,
    /// Weight of the displacement-penalizing window blended into the score map.
    pub win_weight: f64,
    /// Moving-average rate of the template.
    pub template_lr: f64,
    /// Area of the search region relative to the exemplar context.
    pub search_area_factor: f64,
    pub num_scales: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            scale_step: 1.0575,
            scale_penalty: 0.9780,
            scale_lr: 0.520,
            win_weight: 0.2625,
            template_lr: 0.0050,
            search_area_factor: 4.0,
            num_scales: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.scale_step > 1.0 && self.scale_step.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale_step {}", self.scale_step)));
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return Err(Error::InvalidConfig(format!("scale_penalty {}", self.scale_penalty)));
        }
        for (name, v) in [
            ("scale_lr", self.scale_lr),
            ("win_weight", self.win_weight),
            ("template_lr", self.template_lr),
        ] {
            if !unit(v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.search_area_factor >= 1.0 && self.search_area_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "search_area_factor {}",
                self.search_area_factor
            )));
        }
        if self.num_scales % 2 == 0 {
            return Err(Error::InvalidConfig("num_scales must be odd".into()));
        }
        Ok(())
    }

    /// Scale multipliers, smallest first; the middle one is 1.
    pub fn scale_factors(&self) -> Vec<f64> {
        let mid = (self.num_scales / 2) as i32;
        (0..self.num_scales as i32)
            .map(|i| self.scale_step.powi(i - mid))
            .collect()
    }
}

/// Bilinear resampling of the square `side_pixels` region centred at
/// `center` to `out_side × out_side` samples. Samples outside the frame take
/// the nearest edge value.
pub fn extract_patch(
    frame: &GrayImage,
    center: (f64, f64),
    side_pixels: f64,
    out_side: usize,
) -> Plane {
    let step = side_pixels / out_side as f64;
    let x0 = center.0 - side_pixels / 2.0 - 0.5;
    let y0 = center.1 - side_pixels / 2.0 - 0.5;
    Plane::from_fn(out_side, |r, c| {
        frame.bilinear(x0 + (c as f64 + 0.5) * step, y0 + (r as f64 + 0.5) * step)
    })
}

/// Evolving state of one tracked object.
#[derive(Debug, Clone)]
pub struct TrackerState {
    model: Arc<Model>,
    config: TrackerConfig,
    window: Plane,
    /// Object centre in pixels.
    pub position: (f64, f64),
    /// Object size relative to the initial box.
    pub scale: f64,
    pub template: MultiChannelMap,
    base_size: (f64, f64),
    base_context: f64,
}

/// Starts tracking the object in `rect`.
pub fn init(
    frame: &GrayImage,
    rect: Rect,
    model: Arc<Model>,
    config: TrackerConfig,
) -> Result<TrackerState> {
    rect.validate()?;
    config.validate()?;
    model.validate()?;
    let valid = model.config.valid_response_side();
    let position = rect.center();
    let base_context = rect.context_side();
    let exemplar = extract_patch(
        frame,
        position,
        base_context,
        model.config.exemplar_image_side(),
    );
    let template = model.template(&exemplar)?;
    Ok(TrackerState {
        window: hann_window(valid)?,
        model,
        config,
        position,
        scale: 1.0,
        template,
        base_size: (rect.w, rect.h),
        base_context,
    })
}

impl TrackerState {
    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn rect(&self) -> Rect {
        Rect::from_center(
            self.position.0,
            self.position.1,
            self.base_size.0 * self.scale,
            self.base_size.1 * self.scale,
        )
    }

    /// Side in pixels of the search region at the current scale.
    fn search_side(&self) -> f64 {
        self.base_context * self.scale * self.config.search_area_factor.sqrt()
    }

    /// Raw wrap-free score maps for every search scale, smallest scale first.
    pub fn score_maps(&self, frame: &GrayImage) -> Result<Vec<Plane>> {
        let cfg = &self.model.config;
        let valid = cfg.valid_response_side();
        self.config
            .scale_factors()
            .into_iter()
            .map(|f| {
                let patch = extract_patch(
                    frame,
                    self.position,
                    self.search_side() * f,
                    cfg.search_image_side(),
                );
                let z = self.model.search_features(&patch)?;
                let full = score(&self.template, &z, self.model.calibration)?;
                Ok(Plane::from_fn(valid, |r, c| full[(r, c)]))
            })
            .collect()
    }

    /// Picks `(scale index, row, col)` from raw score maps.
    ///
    /// Maps are shifted by their common minimum and divided by their common
    /// maximum, blended with the Hann window, and every map other than the
    /// current scale is multiplied by the scale penalty. Ties go to the current
    /// scale, then to the first sample in row-major order.
    pub fn select_peak(&self, maps: &[Plane]) -> (usize, usize, usize) {
        let lo = maps
            .iter()
            .flat_map(|p| p.as_slice())
            .fold(f64::INFINITY, |a, &v| a.min(v));
        let hi = maps
            .iter()
            .flat_map(|p| p.as_slice())
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v - lo));
        let norm = if hi > 0.0 && hi.is_finite() { 1.0 / hi } else { 1.0 };
        let mid = maps.len() / 2;
        let ww = self.config.win_weight;
        let order = std::iter::once(mid).chain((0..maps.len()).filter(|&i| i != mid));
        let mut best = (mid, 0, 0, f64::NEG_INFINITY);
        for i in order {
            let penalty = if i == mid { 1.0 } else { self.config.scale_penalty };
            let ((r, c), v) = Plane::from_fn(maps[i].side(), |r, c| {
                let v = (maps[i][(r, c)] - lo) * norm;
                penalty * ((1.0 - ww) * v + ww * self.window[(r, c)])
            })
            .argmax();
            if v > best.3 {
                best = (i, r, c, v);
            }
        }
        (best.0, best.1, best.2)
    }

    /// Processes the next frame and returns the new box.
    pub fn step(&mut self, frame: &GrayImage) -> Result<Rect> {
        let maps = self.score_maps(frame)?;
        let (si, r, c) = self.select_peak(&maps);
        let factors = self.config.scale_factors();
        let cfg = &self.model.config;

        let u0 = cfg.zero_displacement() as f64;
        let px_per_sample = cfg.stride as f64 * self.search_side() * factors[si]
            / cfg.search_image_side() as f64;
        self.position.0 += (c as f64 - u0) * px_per_sample;
        self.position.1 += (r as f64 - u0) * px_per_sample;
        let lr = self.config.scale_lr;
        self.scale = (1.0 - lr) * self.scale + lr * self.scale * factors[si];

        let tl = self.config.template_lr;
        if tl > 0.0 {
            let exemplar = extract_patch(
                frame,
                self.position,
                self.base_context * self.scale,
                cfg.exemplar_image_side(),
            );
            let fresh = self.model.template(&exemplar)?;
            let mut blended = self.template.clone();
            for (old, new) in (0..blended.k()).map(|p| (p, fresh.channel(p))) {
                let ch = blended.channel_mut(old);
                for (a, b) in ch.as_mut_slice().iter_mut().zip(new.as_slice()) {
                    *a = (1.0 - tl) * *a + tl * b;
                }
            }
            self.template = blended;
        }
        Ok(self.rect())
    }
}
