use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Plane;

/// Per-pixel ±1 labels and nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Plane,
    weights: Plane,
}

impl LabelMap {
    pub fn new(labels: Plane, weights: Plane) -> Result<Self> {
        if labels.side() != weights.side() {
            return Err(Error::ShapeMismatch("labels and weights differ in side".into()));
        }
        if labels.as_slice().iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::InvalidConfig("labels must be +1 or -1".into()));
        }
        let has_pos = labels.as_slice().contains(&1.0);
        let has_neg = labels.as_slice().contains(&-1.0);
        if !(has_pos && has_neg) {
            return Err(Error::InvalidConfig(
                "label map needs both positive and negative pixels".into(),
            ));
        }
        if weights.as_slice().iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
        }
        if (weights.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {}, not 1",
                weights.sum()
            )));
        }
        Ok(Self { labels, weights })
    }

    /// Positive disc of `radius` around `center` (row, col), negatives elsewhere.
    /// Each class receives total weight ½, spread uniformly inside the class.
    pub fn disc(side: usize, center: (f64, f64), radius: f64) -> Result<Self> {
        let labels = Plane::from_fn(side, |r, c| {
            let dr = r as f64 - center.0;
            let dc = c as f64 - center.1;
            if dr * dr + dc * dc <= radius * radius {
                1.0
            } else {
                -1.0
            }
        });
        let pos = labels.as_slice().iter().filter(|&&l| l > 0.0).count();
        let neg = side * side - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidConfig(format!(
                "disc at {center:?} radius {radius} leaves an empty class on side {side}"
            )));
        }
        let wp = 0.5 / pos as f64;
        let wn = 0.5 / neg as f64;
        let weights = labels.map(|l| if l > 0.0 { wp } else { wn });
        Self::new(labels, weights)
    }

    pub fn side(&self) -> usize {
        self.labels.side()
    }

    pub fn labels(&self) -> &Plane {
        &self.labels
    }

    pub fn weights(&self) -> &Plane {
        &self.weights
    }
}

/// `log(1 + exp(-t))` without overflow.
#[inline]
fn softplus_neg(t: f64) -> f64 {
    (-t.abs()).exp().ln_1p() + (-t).max(0.0)
}

/// `1 / (1 + exp(t))` without overflow.
#[inline]
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Weighted element-wise logistic loss and its gradient with respect to the response.
pub fn logistic_loss(response: &Plane, labels: &LabelMap) -> Result<(f64, Plane)> {
    if response.side() != labels.side() {
        return Err(Error::ShapeMismatch(format!(
            "response side {} vs label side {}",
            response.side(),
            labels.side()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Plane::zeros(response.side());
    for (i, ((&r, &l), &w)) in response
        .as_slice()
        .iter()
        .zip(labels.labels.as_slice())
        .zip(labels.weights.as_slice())
        .enumerate()
    {
        let t = l * r;
        loss += w * softplus_neg(t);
        grad.as_mut_slice()[i] = -w * l * sigmoid_neg(t);
    }
    Ok((loss, grad))
}
