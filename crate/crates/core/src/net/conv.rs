//! Single valid-mode convolution layer with bias and ReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{MultiChannelMap, Plane};

/// Learnable parameters of the feature layer.
///
/// `kernels` is laid out `[out][in][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNetParams {
    pub k_in: usize,
    pub k_out: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FeatureNetParams {
    /// Zero-initialized parameters.
    pub fn zeros(k_in: usize, k_out: usize, kernel_size: usize, stride: usize) -> Result<Self> {
        let p = Self {
            k_in,
            k_out,
            kernel_size,
            stride,
            kernels: vec![0.0; k_out * k_in * kernel_size * kernel_size],
            biases: vec![0.0; k_out],
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform Xavier initialization in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn xavier<R: Rng>(
        k_in: usize,
        k_out: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(k_in, k_out, kernel_size, stride)?;
        let area = (kernel_size * kernel_size) as f64;
        let bound = (6.0 / (k_in as f64 * area + k_out as f64 * area)).sqrt();
        for w in &mut p.kernels {
            *w = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_in == 0 || self.k_out == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("channel counts and stride must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel side must be odd, got {}",
                self.kernel_size
            )));
        }
        let expect = self.k_out * self.k_in * self.kernel_size * self.kernel_size;
        if self.kernels.len() != expect || self.biases.len() != self.k_out {
            return Err(Error::ShapeMismatch(format!(
                "expected {expect} weights and {} biases, got {} and {}",
                self.k_out,
                self.kernels.len(),
                self.biases.len()
            )));
        }
        if !self.kernels.iter().chain(&self.biases).all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature parameters".into()));
        }
        Ok(())
    }

    #[inline]
    fn weight_index(&self, o: usize, c: usize, a: usize, b: usize) -> usize {
        ((o * self.k_in + c) * self.kernel_size + a) * self.kernel_size + b
    }

    /// Output side for an input of side `input`.
    pub fn output_side(&self, input: usize) -> Result<usize> {
        if input < self.kernel_size {
            return Err(Error::ShapeMismatch(format!(
                "input side {input} smaller than kernel side {}",
                self.kernel_size
            )));
        }
        Ok((input - self.kernel_size) / self.stride + 1)
    }

    /// Input side that yields exactly `output` samples per row.
    pub fn input_side(&self, output: usize) -> usize {
        (output - 1) * self.stride + self.kernel_size
    }

    pub fn num_params(&self) -> usize {
        self.kernels.len() + self.biases.len()
    }
}

/// Gradients with respect to [`FeatureNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FeatureGrads {
    pub fn zeros_like(p: &FeatureNetParams) -> Self {
        Self {
            kernels: vec![0.0; p.kernels.len()],
            biases: vec![0.0; p.biases.len()],
        }
    }

    pub fn accumulate(&mut self, other: &FeatureGrads) {
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

/// Values kept by [`conv_forward`] for [`conv_backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: MultiChannelMap,
    pre_activation: Vec<Plane>,
}

/// `relu(b_o + Σ_c Σ_{a,b} K[o,c,a,b] · in_c[i·s + a, j·s + b])`
pub fn conv_forward(
    input: &MultiChannelMap,
    params: &FeatureNetParams,
) -> Result<(MultiChannelMap, ConvCache)> {
    if input.k() != params.k_in {
        return Err(Error::ShapeMismatch(format!(
            "{} input channels for a layer expecting {}",
            input.k(),
            params.k_in
        )));
    }
    let out_side = params.output_side(input.side())?;
    let r = params.kernel_size;
    let s = params.stride;
    let mut pre = Vec::with_capacity(params.k_out);
    for o in 0..params.k_out {
        let mut plane = Plane::filled(out_side, params.biases[o]);
        for (c, inp) in input.channels().iter().enumerate() {
            for a in 0..r {
                for b in 0..r {
                    let w = params.kernels[params.weight_index(o, c, a, b)];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..out_side {
                        let row = i * s + a;
                        for j in 0..out_side {
                            plane[(i, j)] += w * inp[(row, j * s + b)];
                        }
                    }
                }
            }
        }
        pre.push(plane);
    }
    let out = MultiChannelMap::new(pre.iter().map(|p| p.map(|v| v.max(0.0))).collect())?;
    Ok((
        out,
        ConvCache {
            input: input.clone(),
            pre_activation: pre,
        },
    ))
}

/// Adjoint of [`conv_forward`]. The ReLU derivative at exactly zero is taken as zero.
pub fn conv_backward(
    cache: &ConvCache,
    params: &FeatureNetParams,
    grad_out: &MultiChannelMap,
) -> Result<(MultiChannelMap, FeatureGrads)> {
    let out_side = cache.pre_activation[0].side();
    if grad_out.side() != out_side || grad_out.k() != params.k_out {
        return Err(Error::StaleCache(format!(
            "gradient {}x{}x{} for layer output {}x{}x{}",
            grad_out.k(),
            grad_out.side(),
            grad_out.side(),
            params.k_out,
            out_side,
            out_side
        )));
    }
    let r = params.kernel_size;
    let s = params.stride;
    let in_side = cache.input.side();
    let mut grads = FeatureGrads::zeros_like(params);
    let mut grad_in = vec![Plane::zeros(in_side); params.k_in];

    for o in 0..params.k_out {
        let pre = &cache.pre_activation[o];
        let g = grad_out.channel(o);
        let gated = Plane::from_fn(out_side, |i, j| if pre[(i, j)] > 0.0 { g[(i, j)] } else { 0.0 });
        grads.biases[o] = gated.sum();
        for (c, inp) in cache.input.channels().iter().enumerate() {
            for a in 0..r {
                for b in 0..r {
                    let idx = params.weight_index(o, c, a, b);
                    let w = params.kernels[idx];
                    let mut acc = 0.0;
                    for i in 0..out_side {
                        let row = i * s + a;
                        for j in 0..out_side {
                            let gv = gated[(i, j)];
                            acc += gv * inp[(row, j * s + b)];
                            grad_in[c][(row, j * s + b)] += w * gv;
                        }
                    }
                    grads.kernels[idx] += acc;
                }
            }
        }
    }
    Ok((MultiChannelMap::new(grad_in)?, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{max_relative_error, numeric_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(side: usize, k: usize, seed: u64) -> MultiChannelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiChannelMap::new(
            (0..k)
                .map(|_| Plane::from_fn(side, |_, _| rng.random_range(0.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_crops_center() {
        let mut p = FeatureNetParams::zeros(1, 1, 3, 1).unwrap();
        p.kernels[4] = 1.0;
        let x = random_input(6, 1, 0);
        let (y, _) = conv_forward(&x, &p).unwrap();
        assert_eq!(y.side(), 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y.channel(0)[(i, j)], x.channel(0)[(i + 1, j + 1)]);
            }
        }
    }

    #[test]
    fn zero_kernels_give_zero_and_no_gradient() {
        let p = FeatureNetParams::zeros(1, 2, 3, 1).unwrap();
        let x = random_input(5, 1, 1);
        let (y, cache) = conv_forward(&x, &p).unwrap();
        assert_eq!(y.max_abs(), 0.0);
        let g = MultiChannelMap::new(vec![Plane::filled(3, 1.0); 2]).unwrap();
        let (gi, gp) = conv_backward(&cache, &p, &g).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert!(gp.kernels.iter().chain(&gp.biases).all(|&v| v == 0.0));
    }

    #[test]
    fn strided_output_side() {
        let p = FeatureNetParams::zeros(1, 1, 3, 2).unwrap();
        assert_eq!(p.output_side(9).unwrap(), 4);
        assert_eq!(p.input_side(4), 9);
        assert!(p.output_side(2).is_err());
        assert!(FeatureNetParams::zeros(1, 1, 4, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = FeatureNetParams::xavier(2, 3, 3, 2, &mut rng).unwrap();
        for b in &mut p.biases {
            *b = rng.random_range(-0.1..0.1);
        }
        let x = random_input(9, 2, 4);
        let (y, cache) = conv_forward(&x, &p).unwrap();
        let upstream = random_input(y.side(), 3, 5);
        let (gi, gp) = conv_backward(&cache, &p, &upstream).unwrap();

        let loss = |p: &FeatureNetParams, x: &MultiChannelMap| {
            conv_forward(x, p).unwrap().0.dot(&upstream)
        };
        let mut flat: Vec<f64> = p.kernels.iter().chain(&p.biases).copied().collect();
        let nk = p.kernels.len();
        let num = numeric_gradient(
            |v| {
                let mut q = p.clone();
                q.kernels.copy_from_slice(&v[..nk]);
                q.biases.copy_from_slice(&v[nk..]);
                loss(&q, &x)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        flat.clear();
        flat.extend(gp.kernels.iter().chain(&gp.biases));
        assert!(max_relative_error(&flat, &num) <= 1e-4);

        let num_x = numeric_gradient(
            |v| loss(&p, &MultiChannelMap::unflatten(9, 2, v).unwrap()),
            &x.flatten(),
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&gi.flatten(), &num_x) <= 1e-4);
    }
}
