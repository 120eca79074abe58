//! The correlation filter layer.
//!
//! Given a multi-channel feature map `x = (x₁, …, x_k)` and a desired response
//! `y`, the filter solves the ridge regression
//!
//! ```text
//! argmin_w  1/(2n) ‖Σ_p w_p ⋆ x_p − y‖² + λ/2 ‖w‖²,     n = m²
//! ```
//!
//! through its dual system, which is diagonal in the Fourier domain:
//!
//! ```text
//! k̂   = 1/n Σ_p x̂_p* ∘ x̂_p + λ
//! α̂   = 1/n k̂⁻¹ ∘ ŷ
//! ŵ_p = α̂* ∘ x̂_p
//! ```
//!
//! [`cf_backward`] is the adjoint of the differential of that system, so a
//! network can be trained through the solver. Windowing, cropping and the
//! calibrated cross-correlation head sit alongside with their own adjoints.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    dft2, gaussian_response, hann_window, idft2_real, MultiChannelMap, Plane, Spectrum,
};

/// Smallest accepted regularization weight.
pub const MIN_LAMBDA: f64 = 1e-8;

/// Configuration of one correlation filter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfConfig {
    lambda: f64,
    m: usize,
    response: Plane,
    window: Plane,
    crop_margin: usize,
}

impl CfConfig {
    /// Defaults: Gaussian response with `σ = m/16`, Hann window, crop margin `m/8`.
    pub fn new(m: usize, lambda: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            m,
            response: gaussian_response(m, m as f64 / 16.0)?,
            window: hann_window(m)?,
            crop_margin: m / 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_response(mut self, response: Plane) -> Result<Self> {
        self.response = response;
        self.validate()?;
        Ok(self)
    }

    pub fn with_window(mut self, window: Plane) -> Result<Self> {
        self.window = window;
        self.validate()?;
        Ok(self)
    }

    pub fn with_crop_margin(mut self, crop_margin: usize) -> Result<Self> {
        self.crop_margin = crop_margin;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    /// Re-checks every invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= MIN_LAMBDA && self.lambda.is_finite()) {
            return Err(Error::NonPositiveLambda(self.lambda));
        }
        if self.m < 2 {
            return Err(Error::InvalidSize(format!("filter side {}", self.m)));
        }
        for (name, p) in [("response", &self.response), ("window", &self.window)] {
            if p.side() != self.m {
                return Err(Error::ShapeMismatch(format!(
                    "{name} side {} but filter side {}",
                    p.side(),
                    self.m
                )));
            }
            if !p.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} has non-finite entries")));
            }
        }
        if 2 * self.crop_margin >= self.m {
            return Err(Error::MarginTooLarge {
                margin: self.crop_margin,
                m: self.m,
            });
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Effective number of examples, `m²`.
    pub fn n(&self) -> f64 {
        (self.m * self.m) as f64
    }

    pub fn response(&self) -> &Plane {
        &self.response
    }

    pub fn window(&self) -> &Plane {
        &self.window
    }

    pub fn crop_margin(&self) -> usize {
        self.crop_margin
    }

    /// Side of the template after cropping.
    pub fn cropped_side(&self) -> usize {
        self.m - 2 * self.crop_margin
    }
}

/// Spectra kept from the forward solve for the backward pass.
#[derive(Debug, Clone)]
pub struct CfCache {
    m: usize,
    pub xhat: Vec<Spectrum>,
    pub khat: Spectrum,
    pub alphahat: Spectrum,
}

impl CfCache {
    pub fn side(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.xhat.len()
    }

    /// The dual signal `α` in the spatial domain.
    pub fn alpha(&self) -> Plane {
        idft2_real(&self.alphahat)
    }

    /// The kernel signal `k` in the spatial domain.
    pub fn kernel(&self) -> Plane {
        idft2_real(&self.khat)
    }
}

/// Gradients of the loss with respect to the filter inputs.
#[derive(Debug, Clone)]
pub struct CfGradients {
    pub grad_x: MultiChannelMap,
    pub grad_y: Plane,
}

/// Scale and bias applied to the raw cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCalibration {
    pub s: f64,
    pub b: f64,
}

impl Default for ScoreCalibration {
    fn default() -> Self {
        Self { s: 1.0, b: 0.0 }
    }
}

fn check_channels(x: &MultiChannelMap, m: usize, what: &str) -> Result<()> {
    if x.side() != m {
        return Err(Error::ShapeMismatch(format!(
            "{what} side {} but filter side {m}",
            x.side()
        )));
    }
    Ok(())
}

/// Solves the filter for input `x` and the configured response.
pub fn cf_forward(x: &MultiChannelMap, cfg: &CfConfig) -> Result<(MultiChannelMap, CfCache)> {
    cf_forward_with_response(x, cfg.response(), cfg.lambda())
}

/// [`cf_forward`] with an explicit desired response, e.g. a learned one.
pub fn cf_forward_with_response(
    x: &MultiChannelMap,
    y: &Plane,
    lambda: f64,
) -> Result<(MultiChannelMap, CfCache)> {
    if !(lambda >= MIN_LAMBDA && lambda.is_finite()) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let m = y.side();
    check_channels(x, m, "input")?;
    let n = (m * m) as f64;

    let xhat: Vec<Spectrum> = x.channels().iter().map(dft2).collect();
    let mut khat = Spectrum::filled(m, Complex64::new(lambda, 0.0));
    for xp in &xhat {
        for (k, v) in khat.as_mut_slice().iter_mut().zip(xp.as_slice()) {
            *k += v.norm_sqr() / n;
        }
    }
    let yhat = dft2(y);
    let alphahat = Spectrum::from_vec(
        m,
        yhat.as_slice()
            .iter()
            .zip(khat.as_slice())
            .map(|(yv, kv)| yv / (n * kv))
            .collect(),
    )?;
    let alpha_conj = alphahat.conj();
    let w = xhat
        .iter()
        .map(|xp| idft2_real(&alpha_conj.hadamard(xp)))
        .collect();
    Ok((
        MultiChannelMap::new(w)?,
        CfCache {
            m,
            xhat,
            khat,
            alphahat,
        },
    ))
}

/// Back-propagates `∇_w ℓ` through the filter solve.
pub fn cf_backward(
    cache: &CfCache,
    cfg: &CfConfig,
    grad_w: &MultiChannelMap,
) -> Result<CfGradients> {
    if cache.m != cfg.m() {
        return Err(Error::StaleCache(format!(
            "cache side {} but config side {}",
            cache.m,
            cfg.m()
        )));
    }
    if grad_w.side() != cache.m {
        return Err(Error::StaleCache(format!(
            "cache side {} but gradient side {}",
            cache.m,
            grad_w.side()
        )));
    }
    if grad_w.k() != cache.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient channels for {} cached channels",
            grad_w.k(),
            cache.channels()
        )));
    }
    let m = cache.m;
    let n = cfg.n();
    let bins = m * m;

    let grad_what: Vec<Spectrum> = grad_w.channels().iter().map(dft2).collect();

    // ∇̂α = Σ_p x̂_p ∘ (∇̂w_p)*
    let mut grad_alpha = vec![Complex64::new(0.0, 0.0); bins];
    for (xp, gp) in cache.xhat.iter().zip(&grad_what) {
        for ((acc, xv), gv) in grad_alpha.iter_mut().zip(xp.as_slice()).zip(gp.as_slice()) {
            *acc += xv * gv.conj();
        }
    }

    let mut grad_y = Vec::with_capacity(bins);
    let mut grad_k_re = Vec::with_capacity(bins);
    for ((ga, kv), av) in grad_alpha
        .iter()
        .zip(cache.khat.as_slice())
        .zip(cache.alphahat.as_slice())
    {
        let kinv_conj = kv.conj().inv();
        grad_y.push(kinv_conj * ga / n);
        grad_k_re.push((-kinv_conj * av.conj() * ga).re);
    }
    let grad_y = idft2_real(&Spectrum::from_vec(m, grad_y)?);

    // ∇̂x_p = α̂ ∘ ∇̂w_p + 2/n x̂_p ∘ Re{∇̂k}
    let grad_x = cache
        .xhat
        .iter()
        .zip(&grad_what)
        .map(|(xp, gp)| {
            let data = xp
                .as_slice()
                .iter()
                .zip(gp.as_slice())
                .zip(cache.alphahat.as_slice())
                .zip(&grad_k_re)
                .map(|(((xv, gv), av), gk)| av * gv + xv * (2.0 * gk / n))
                .collect();
            Spectrum::from_vec(m, data).map(|s| idft2_real(&s))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CfGradients {
        grad_x: MultiChannelMap::new(grad_x)?,
        grad_y,
    })
}

/// Template from a fixed dual signal: `w_p = α ⋆ x_p`.
pub fn constant_alpha_forward(x: &MultiChannelMap, alpha: &Plane) -> Result<MultiChannelMap> {
    check_channels(x, alpha.side(), "input")?;
    let alpha_conj = dft2(alpha).conj();
    MultiChannelMap::new(
        x.channels()
            .iter()
            .map(|xp| idft2_real(&alpha_conj.hadamard(&dft2(xp))))
            .collect(),
    )
}

/// Adjoint of [`constant_alpha_forward`]: returns `(∇x, ∇α)`.
pub fn constant_alpha_backward(
    x: &MultiChannelMap,
    alpha: &Plane,
    grad_w: &MultiChannelMap,
) -> Result<(MultiChannelMap, Plane)> {
    check_channels(x, alpha.side(), "input")?;
    check_channels(grad_w, alpha.side(), "gradient")?;
    let m = alpha.side();
    let alphahat = dft2(alpha);
    let mut grad_alpha = Spectrum::zeros(m);
    let mut grad_x = Vec::with_capacity(x.k());
    for (xp, gp) in x.channels().iter().zip(grad_w.channels()) {
        let xh = dft2(xp);
        let gh = dft2(gp);
        for ((acc, xv), gv) in grad_alpha
            .as_mut_slice()
            .iter_mut()
            .zip(xh.as_slice())
            .zip(gh.as_slice())
        {
            *acc += xv * gv.conj();
        }
        grad_x.push(idft2_real(&alphahat.hadamard(&gh)));
    }
    Ok((MultiChannelMap::new(grad_x)?, idft2_real(&grad_alpha)))
}

/// Multiplies every channel by `window`. The operation is self-adjoint, so the
/// same call also back-propagates through it.
pub fn apply_window(x: &MultiChannelMap, window: &Plane) -> Result<MultiChannelMap> {
    check_channels(x, window.side(), "input")?;
    MultiChannelMap::new(
        x.channels()
            .iter()
            .map(|p| p.hadamard(window))
            .collect::<Result<Vec<_>>>()?,
    )
}

fn check_margin(m: usize, margin: usize) -> Result<()> {
    if 2 * margin >= m {
        return Err(Error::MarginTooLarge { margin, m });
    }
    Ok(())
}

/// Keeps the central `(m − 2·margin)²` block of every channel.
pub fn crop_template(w: &MultiChannelMap, margin: usize) -> Result<MultiChannelMap> {
    let m = w.side();
    check_margin(m, margin)?;
    let c = m - 2 * margin;
    MultiChannelMap::new(
        w.channels()
            .iter()
            .map(|p| Plane::from_fn(c, |r, col| p[(r + margin, col + margin)]))
            .collect(),
    )
}

/// Adjoint of [`crop_template`]: zero-pads back to side `m`.
pub fn crop_template_backward(
    grad: &MultiChannelMap,
    m: usize,
    margin: usize,
) -> Result<MultiChannelMap> {
    check_margin(m, margin)?;
    let c = m - 2 * margin;
    check_channels(grad, c, "cropped gradient")?;
    MultiChannelMap::new(
        grad.channels()
            .iter()
            .map(|p| {
                let mut out = Plane::zeros(m);
                for r in 0..c {
                    for col in 0..c {
                        out[(r + margin, col + margin)] = p[(r, col)];
                    }
                }
                out
            })
            .collect(),
    )
}

/// Intermediate values of [`score_with_cache`] needed by [`score_backward`].
#[derive(Debug, Clone)]
pub struct ScoreCache {
    template_side: usize,
    what: Vec<Spectrum>,
    zhat: Vec<Spectrum>,
    raw: Plane,
    cal: ScoreCalibration,
}

impl ScoreCache {
    /// `Σ_p w_p ⋆ z_p` before calibration.
    pub fn raw(&self) -> &Plane {
        &self.raw
    }
}

/// Gradients produced by [`score_backward`].
#[derive(Debug, Clone)]
pub struct ScoreGradients {
    pub grad_w: MultiChannelMap,
    pub grad_z: MultiChannelMap,
    pub grad_s: f64,
    pub grad_b: f64,
}

/// Calibrated response `s · Σ_p (w_p ⋆ z_p) + b`.
///
/// When the search map is larger than the template, the template is
/// zero-padded (anchored at the origin) to the search side, so `response[u]`
/// scores the template placed with its first sample at `u`.
pub fn score(w: &MultiChannelMap, z: &MultiChannelMap, cal: ScoreCalibration) -> Result<Plane> {
    score_with_cache(w, z, cal).map(|(r, _)| r)
}

pub fn score_with_cache(
    w: &MultiChannelMap,
    z: &MultiChannelMap,
    cal: ScoreCalibration,
) -> Result<(Plane, ScoreCache)> {
    if w.k() != z.k() {
        return Err(Error::ShapeMismatch(format!(
            "template has {} channels, search map {}",
            w.k(),
            z.k()
        )));
    }
    let c = w.side();
    let big = z.side();
    if c > big {
        return Err(Error::ShapeMismatch(format!(
            "template side {c} exceeds search side {big}"
        )));
    }
    let what: Vec<Spectrum> = w.channels().iter().map(|p| dft2(&zero_pad(p, big))).collect();
    let zhat: Vec<Spectrum> = z.channels().iter().map(dft2).collect();
    let mut acc = Spectrum::zeros(big);
    for (wp, zp) in what.iter().zip(&zhat) {
        for ((a, wv), zv) in acc.as_mut_slice().iter_mut().zip(wp.as_slice()).zip(zp.as_slice()) {
            *a += wv.conj() * zv;
        }
    }
    let raw = idft2_real(&acc);
    let response = raw.map(|v| cal.s * v + cal.b);
    Ok((
        response,
        ScoreCache {
            template_side: c,
            what,
            zhat,
            raw,
            cal,
        },
    ))
}

/// Adjoint of [`score_with_cache`].
pub fn score_backward(cache: &ScoreCache, grad_response: &Plane) -> Result<ScoreGradients> {
    let big = cache.raw.side();
    if grad_response.side() != big {
        return Err(Error::StaleCache(format!(
            "response side {big} but gradient side {}",
            grad_response.side()
        )));
    }
    let grad_s = grad_response.dot(&cache.raw);
    let grad_b = grad_response.sum();
    let ghat = dft2(&grad_response.scale(cache.cal.s));
    let ghat_conj = ghat.conj();
    let c = cache.template_side;
    let grad_w = cache
        .zhat
        .iter()
        .map(|zp| {
            let full = idft2_real(&ghat_conj.hadamard(zp));
            Plane::from_fn(c, |r, col| full[(r, col)])
        })
        .collect();
    let grad_z = cache
        .what
        .iter()
        .map(|wp| idft2_real(&ghat.hadamard(wp)))
        .collect();
    Ok(ScoreGradients {
        grad_w: MultiChannelMap::new(grad_w)?,
        grad_z: MultiChannelMap::new(grad_z)?,
        grad_s,
        grad_b,
    })
}

fn zero_pad(p: &Plane, big: usize) -> Plane {
    if p.side() == big {
        return p.clone();
    }
    let c = p.side();
    let mut out = Plane::zeros(big);
    for r in 0..c {
        for col in 0..c {
            out[(r, col)] = p[(r, col)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{impulse, impulse_at};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(m: usize, k: usize, seed: u64) -> MultiChannelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiChannelMap::new(
            (0..k)
                .map(|_| Plane::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn delta_cfg(m: usize, lambda: f64) -> CfConfig {
        CfConfig::new(m, lambda)
            .unwrap()
            .with_response(impulse(m).unwrap())
            .unwrap()
    }

    #[test]
    fn delta_input_collapses_analytically() {
        let cfg = delta_cfg(4, 0.1);
        let x = MultiChannelMap::single(impulse(4).unwrap());
        let (w, _) = cf_forward(&x, &cfg).unwrap();
        let expect = impulse(4).unwrap().scale(1.0 / 2.6);
        assert!(w.channel(0).max_abs_diff(&expect) < 1e-15);
        assert!((w.channel(0)[(0, 0)] - 0.384615).abs() < 1e-6);
    }

    #[test]
    fn zero_response_gives_zero_template() {
        let cfg = CfConfig::new(6, 0.05)
            .unwrap()
            .with_response(Plane::zeros(6))
            .unwrap();
        let (w, _) = cf_forward(&random_map(6, 3, 1), &cfg).unwrap();
        assert!(w.channels().iter().all(|p| p.max_abs() == 0.0));
    }

    #[test]
    fn kernel_spectrum_is_bounded_below_by_lambda() {
        let cfg = CfConfig::new(8, 0.03).unwrap();
        let (_, cache) = cf_forward(&random_map(8, 4, 2), &cfg).unwrap();
        for k in cache.khat.as_slice() {
            assert!(k.re >= 0.03 * (1.0 - 1e-12));
            assert!(k.im.abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(matches!(CfConfig::new(4, 0.0), Err(Error::NonPositiveLambda(_))));
        assert!(matches!(CfConfig::new(4, 1e-9), Err(Error::NonPositiveLambda(_))));
        assert!(CfConfig::new(4, 1e-8).is_ok());
        let cfg = CfConfig::new(8, 0.1).unwrap();
        assert_eq!(cfg.n(), 64.0);
        assert_eq!(cfg.crop_margin(), 1);
        assert!(matches!(
            cfg.clone().with_crop_margin(4),
            Err(Error::MarginTooLarge { .. })
        ));
        assert!(matches!(
            cfg.with_response(Plane::zeros(4)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn forward_rejects_mismatched_input() {
        let cfg = CfConfig::new(8, 0.1).unwrap();
        assert!(matches!(
            cf_forward(&random_map(4, 1, 0), &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let cfg = CfConfig::new(4, 0.1).unwrap();
        let x = random_map(4, 2, 5);
        let (_, cache) = cf_forward(&x, &cfg).unwrap();
        let g = cf_backward(&cache, &cfg, &MultiChannelMap::zeros(4, 2)).unwrap();
        assert_eq!(g.grad_x.max_abs(), 0.0);
        assert_eq!(g.grad_y.max_abs(), 0.0);
    }

    #[test]
    fn delta_input_response_gradient_is_reflection() {
        let m = 4;
        let cfg = delta_cfg(m, 0.1);
        let x = MultiChannelMap::single(impulse(m).unwrap());
        let (_, cache) = cf_forward(&x, &cfg).unwrap();
        let gw = random_map(m, 1, 11);
        let g = cf_backward(&cache, &cfg, &gw).unwrap();
        let denom = 1.0 + 16.0 * 0.1;
        for r in 0..m {
            for c in 0..m {
                let expect = gw.channel(0).wrapped(-(r as isize), -(c as isize)) / denom;
                assert!((g.grad_y[(r, c)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_errors() {
        let cfg = CfConfig::new(4, 0.1).unwrap();
        let (_, cache) = cf_forward(&random_map(4, 2, 5), &cfg).unwrap();
        let other = CfConfig::new(8, 0.1).unwrap();
        assert!(matches!(
            cf_backward(&cache, &other, &MultiChannelMap::zeros(8, 2)),
            Err(Error::StaleCache(_))
        ));
        assert!(matches!(
            cf_backward(&cache, &cfg, &MultiChannelMap::zeros(4, 3)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn window_cases() {
        let x = random_map(5, 2, 4);
        assert_eq!(apply_window(&x, &Plane::filled(5, 1.0)).unwrap(), x);
        assert_eq!(apply_window(&x, &Plane::zeros(5)).unwrap().max_abs(), 0.0);
        let h = hann_window(5).unwrap();
        let out = apply_window(&x, &h).unwrap();
        for p in 0..2 {
            for r in 0..5 {
                for c in 0..5 {
                    assert_eq!(out.channel(p)[(r, c)], x.channel(p)[(r, c)] * h[(r, c)]);
                }
            }
        }
        assert!(apply_window(&x, &Plane::zeros(4)).is_err());
    }

    #[test]
    fn crop_shapes_and_adjoint() {
        let w = random_map(8, 2, 3);
        assert_eq!(crop_template(&w, 0).unwrap(), w);
        let c = crop_template(&w, 2).unwrap();
        assert_eq!(c.side(), 4);
        assert_eq!(c.channel(1)[(0, 0)], w.channel(1)[(2, 2)]);
        assert!(matches!(crop_template(&w, 4), Err(Error::MarginTooLarge { .. })));

        // d/dw Σ crop(w) is the indicator of the kept block.
        let ones = MultiChannelMap::new(vec![Plane::filled(4, 1.0); 2]).unwrap();
        let g = crop_template_backward(&ones, 8, 2).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let inside = (2..6).contains(&r) && (2..6).contains(&col);
                assert_eq!(g.channel(0)[(r, col)], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn score_delta_and_zero_scale() {
        let z = random_map(6, 2, 8);
        let mut w = MultiChannelMap::zeros(6, 2);
        w.channel_mut(0)[(0, 0)] = 1.0;
        let r = score(&w, &z, ScoreCalibration { s: 1.0, b: 0.0 }).unwrap();
        assert!(r.max_abs_diff(z.channel(0)) < 1e-14);

        let w = random_map(4, 2, 9);
        let r = score(&w, &z, ScoreCalibration { s: 0.0, b: 0.7 }).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.7));
        assert!(score(&random_map(8, 2, 0), &z, ScoreCalibration::default()).is_err());
        assert!(score(&random_map(4, 1, 0), &z, ScoreCalibration::default()).is_err());
    }

    #[test]
    fn padded_score_places_template_at_origin() {
        // A shifted copy of the template inside z peaks at the shift.
        let z = MultiChannelMap::single(impulse_at(10, 3, 5).unwrap());
        let w = MultiChannelMap::single(impulse_at(4, 1, 2).unwrap());
        let r = score(&w, &z, ScoreCalibration::default()).unwrap();
        assert_eq!(r.argmax().0, (2, 3));
    }
}
