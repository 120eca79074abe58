//! The depth-one network: conv → ReLU → window → correlation filter → crop →
//! calibrated cross-correlation → logistic loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cf::{
    apply_window, cf_backward, cf_forward, constant_alpha_backward, constant_alpha_forward,
    crop_template, crop_template_backward, score_backward, score_with_cache, CfCache, CfConfig,
    ScoreCache, ScoreCalibration,
};
use crate::error::{Error, Result};
use crate::net::conv::{conv_backward, conv_forward, ConvCache, FeatureGrads, FeatureNetParams};
use crate::net::loss::{logistic_loss, LabelMap};
use crate::spectral::{impulse, MultiChannelMap, Plane};

/// Architecture and solver settings. Everything here is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Side of the exemplar feature map, the filter size `m`.
    pub feature_side: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub channels: usize,
    pub lambda: f64,
    /// Template is `α ⋆ x` with a learned, fixed `α` instead of a per-exemplar solve.
    pub constant_alpha: bool,
    /// Train the desired response `y` along with the other parameters.
    pub learn_y: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            feature_side: 16,
            kernel_size: 5,
            stride: 1,
            channels: 32,
            lambda: 1e-2,
            constant_alpha: false,
            learn_y: false,
        }
    }
}

impl NetConfig {
    /// Side of the exemplar image patch.
    pub fn exemplar_image_side(&self) -> usize {
        (self.feature_side - 1) * self.stride + self.kernel_size
    }

    /// Side of the search image patch: twice the exemplar side.
    pub fn search_image_side(&self) -> usize {
        2 * self.exemplar_image_side()
    }

    pub fn search_feature_side(&self) -> usize {
        (self.search_image_side() - self.kernel_size) / self.stride + 1
    }

    pub fn crop_margin(&self) -> usize {
        self.feature_side / 8
    }

    pub fn template_side(&self) -> usize {
        self.feature_side - 2 * self.crop_margin()
    }

    /// Response index (both axes) at which the object sits exactly at the search centre.
    pub fn zero_displacement(&self) -> usize {
        (self.search_feature_side() - self.template_side()) / 2
    }

    /// Side of the response region free of wrap-around.
    pub fn valid_response_side(&self) -> usize {
        self.search_feature_side() - self.template_side() + 1
    }

    /// Radius of the positive label disc, in response samples.
    pub fn label_radius(&self) -> f64 {
        self.feature_side as f64 / 8.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_side < 4 || self.channels == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig("kernel side must be odd".into()));
        }
        // Zero displacement must land on a sample and at the centre of the valid region.
        let centre_twice = self.exemplar_image_side() + 2 * self.stride * self.crop_margin();
        if centre_twice % (2 * self.stride) != 0
            || centre_twice / (2 * self.stride) != self.zero_displacement()
            || (self.search_feature_side() - self.template_side()) % 2 != 0
        {
            return Err(Error::InvalidConfig(
                "geometry does not centre the zero-displacement response; use an even feature side, odd kernel and stride 1".into(),
            ));
        }
        Ok(())
    }
}

/// All trainable state plus the fixed architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: NetConfig,
    pub features: FeatureNetParams,
    pub calibration: ScoreCalibration,
    /// Filter settings; its response is the (possibly learned) `y`.
    pub cf: CfConfig,
    /// Present exactly when `config.constant_alpha` is set.
    pub alpha: Option<Plane>,
}

impl Model {
    /// Xavier-initialized features, `s = 1e-3`, `b = 0`, `α = δ` for the constant variant.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features =
            FeatureNetParams::xavier(1, config.channels, config.kernel_size, config.stride, &mut rng)?;
        let cf = CfConfig::new(config.feature_side, config.lambda)?
            .with_crop_margin(config.crop_margin())?;
        let alpha = if config.constant_alpha {
            Some(impulse(config.feature_side)?)
        } else {
            None
        };
        Ok(Self {
            config,
            features,
            calibration: ScoreCalibration { s: 1e-3, b: 0.0 },
            cf,
            alpha,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.features.validate()?;
        self.cf.validate()?;
        let c = &self.config;
        if self.features.k_in != 1
            || self.features.k_out != c.channels
            || self.features.kernel_size != c.kernel_size
            || self.features.stride != c.stride
        {
            return Err(Error::ShapeMismatch("feature layer disagrees with config".into()));
        }
        if self.cf.m() != c.feature_side || self.cf.crop_margin() != c.crop_margin() {
            return Err(Error::ShapeMismatch("filter disagrees with config".into()));
        }
        match (&self.alpha, c.constant_alpha) {
            (Some(a), true) if a.side() == c.feature_side && a.is_finite() => {}
            (None, false) => {}
            _ => return Err(Error::ShapeMismatch("constant α disagrees with config".into())),
        }
        if !(self.calibration.s.is_finite() && self.calibration.b.is_finite()) {
            return Err(Error::InvalidConfig("non-finite calibration".into()));
        }
        Ok(())
    }

    fn features_of(&self, img: &Plane) -> Result<(MultiChannelMap, ConvCache)> {
        conv_forward(&MultiChannelMap::single(img.clone()), &self.features)
    }

    /// Cropped template for an exemplar image patch.
    pub fn template(&self, exemplar: &Plane) -> Result<MultiChannelMap> {
        let (x, _) = self.features_of(exemplar)?;
        let xw = apply_window(&x, self.cf.window())?;
        let w = match &self.alpha {
            None => cf_forward(&xw, &self.cf)?.0,
            Some(a) => constant_alpha_forward(&xw, a)?,
        };
        crop_template(&w, self.cf.crop_margin())
    }

    /// Feature map of a search image patch.
    pub fn search_features(&self, search: &Plane) -> Result<MultiChannelMap> {
        Ok(self.features_of(search)?.0)
    }

    /// Flat parameter vector: kernels, biases, s, b, then y (if learned), then α (if constant).
    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(&self.features.kernels);
        v.extend(&self.features.biases);
        v.push(self.calibration.s);
        v.push(self.calibration.b);
        if self.learns_y() {
            v.extend(self.cf.response().as_slice());
        }
        if let Some(a) = &self.alpha {
            v.extend(a.as_slice());
        }
        v
    }

    pub fn set_params_vec(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                v.len(),
                self.num_params()
            )));
        }
        let nk = self.features.kernels.len();
        let nb = self.features.biases.len();
        let m = self.config.feature_side;
        self.features.kernels.copy_from_slice(&v[..nk]);
        self.features.biases.copy_from_slice(&v[nk..nk + nb]);
        let mut at = nk + nb;
        self.calibration.s = v[at];
        self.calibration.b = v[at + 1];
        at += 2;
        if self.learns_y() {
            let y = Plane::from_vec(m, v[at..at + m * m].to_vec())?;
            self.cf = self.cf.clone().with_response(y)?;
            at += m * m;
        }
        if let Some(a) = &mut self.alpha {
            a.as_mut_slice().copy_from_slice(&v[at..at + m * m]);
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let m2 = self.config.feature_side * self.config.feature_side;
        self.features.num_params()
            + 2
            + if self.learns_y() { m2 } else { 0 }
            + if self.alpha.is_some() { m2 } else { 0 }
    }

    /// A learned response only has a gradient when the filter is actually solved.
    pub fn learns_y(&self) -> bool {
        self.config.learn_y && self.alpha.is_none()
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub exemplar: Plane,
    pub search: Plane,
    pub labels: LabelMap,
}

impl TrainPair {
    pub fn new(exemplar: Plane, search: Plane, labels: LabelMap) -> Result<Self> {
        if search.side() < exemplar.side() {
            return Err(Error::ShapeMismatch(format!(
                "search side {} smaller than exemplar side {}",
                search.side(),
                exemplar.side()
            )));
        }
        Ok(Self {
            exemplar,
            search,
            labels,
        })
    }
}

#[derive(Debug, Clone)]
enum TemplateCache {
    Solved(CfCache),
    Constant,
}

/// Every intermediate of [`forward_loss`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    num_params: usize,
    response: Plane,
    grad_response: Plane,
    exemplar_conv: ConvCache,
    search_conv: ConvCache,
    windowed: MultiChannelMap,
    template: TemplateCache,
    score: ScoreCache,
}

impl ForwardCache {
    pub fn response(&self) -> &Plane {
        &self.response
    }
}

/// Gradients for every trainable parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub features: FeatureGrads,
    pub s: f64,
    pub b: f64,
    pub y: Option<Plane>,
    pub alpha: Option<Plane>,
}

impl ModelGradients {
    /// Same layout as [`Model::params_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .features
            .kernels
            .iter()
            .chain(&self.features.biases)
            .copied()
            .collect();
        v.push(self.s);
        v.push(self.b);
        if let Some(y) = &self.y {
            v.extend(y.as_slice());
        }
        if let Some(a) = &self.alpha {
            v.extend(a.as_slice());
        }
        v
    }
}

/// Runs the whole pipeline on one pair and returns the loss.
pub fn forward_loss(pair: &TrainPair, model: &Model) -> Result<(f64, ForwardCache)> {
    let (x, exemplar_conv) = model.features_of(&pair.exemplar)?;
    let windowed = apply_window(&x, model.cf.window())?;
    let (w, template) = match &model.alpha {
        None => {
            let (w, cache) = cf_forward(&windowed, &model.cf)?;
            (w, TemplateCache::Solved(cache))
        }
        Some(a) => (constant_alpha_forward(&windowed, a)?, TemplateCache::Constant),
    };
    let cropped = crop_template(&w, model.cf.crop_margin())?;
    let (z, search_conv) = model.features_of(&pair.search)?;
    let (response, score) = score_with_cache(&cropped, &z, model.calibration)?;
    let (loss, grad_response) = logistic_loss(&response, &pair.labels)?;
    Ok((
        loss,
        ForwardCache {
            num_params: model.num_params(),
            response,
            grad_response,
            exemplar_conv,
            search_conv,
            windowed,
            template,
            score,
        },
    ))
}

/// Chain rule back through [`forward_loss`], scaled by `grad_loss`.
pub fn backward_loss(cache: &ForwardCache, model: &Model, grad_loss: f64) -> Result<ModelGradients> {
    if cache.num_params != model.num_params() {
        return Err(Error::StaleCache("model changed shape since forward".into()));
    }
    let sg = score_backward(&cache.score, &cache.grad_response.scale(grad_loss))?;
    let grad_w = crop_template_backward(&sg.grad_w, model.cf.m(), model.cf.crop_margin())?;
    let (grad_windowed, y, alpha) = match (&cache.template, &model.alpha) {
        (TemplateCache::Solved(cf), None) => {
            let g = cf_backward(cf, &model.cf, &grad_w)?;
            let y = model.learns_y().then_some(g.grad_y);
            (g.grad_x, y, None)
        }
        (TemplateCache::Constant, Some(a)) => {
            let (gx, ga) = constant_alpha_backward(&cache.windowed, a, &grad_w)?;
            (gx, None, Some(ga))
        }
        _ => return Err(Error::StaleCache("template variant changed since forward".into())),
    };
    let grad_x = apply_window(&grad_windowed, model.cf.window())?;
    let (_, mut features) = conv_backward(&cache.exemplar_conv, &model.features, &grad_x)?;
    let (_, from_search) = conv_backward(&cache.search_conv, &model.features, &sg.grad_z)?;
    features.accumulate(&from_search);
    Ok(ModelGradients {
        features,
        s: sg.grad_s,
        b: sg.grad_b,
        y,
        alpha,
    })
}
