//! Real 2-D circular signal algebra.
//!
//! Signals live on the square domain `{0, .., m-1}²` and are stored row-major.
//! The forward DFT is unnormalized and the inverse carries the `1/m²` factor,
//! so Parseval reads `⟨a, b⟩ = ⟨â, b̂⟩ / m²`.
//!
//! Cross-correlation and convolution follow the circular definitions
//!
//! ```text
//! (a ⋆ b)[u] = Σ_t a[t] · b[(u + t) mod m]      F(a ⋆ b) = â* ∘ b̂
//! (a * b)[u] = Σ_t a[t] · b[(u − t) mod m]      F(a * b) = â ∘ b̂
//! ```

use std::cell::RefCell;
use std::ops::{Add, Index, IndexMut, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real-valued square signal of side `m`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    m: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m],
        }
    }

    pub fn filled(m: usize, value: f64) -> Self {
        Self {
            m,
            data: vec![value; m * m],
        }
    }

    /// Wraps row-major samples. `data.len()` must equal `m²`.
    pub fn from_vec(m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || data.len() != m * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{} = {} samples, got {}",
                m,
                m,
                m * m,
                data.len()
            )));
        }
        Ok(Self { m, data })
    }

    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(m * m);
        for r in 0..m {
            for c in 0..m {
                data.push(f(r, c));
            }
        }
        Self { m, data }
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.m
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Sample at `(row, col)` with both indices reduced modulo `m`.
    #[inline]
    pub fn wrapped(&self, r: isize, c: isize) -> f64 {
        let m = self.m as isize;
        self.data[(r.rem_euclid(m) * m + c.rem_euclid(m)) as usize]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            m: self.m,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Plane {
        self.map(|v| v * k)
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Plane) -> Result<Plane> {
        ensure_same_side(self.m, other.m)?;
        Ok(Plane {
            m: self.m,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn dot(&self, other: &Plane) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Position and value of the largest sample; ties resolve to the first in row-major order.
    pub fn argmax(&self) -> ((usize, usize), f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        ((best.0 / self.m, best.0 % self.m), best.1)
    }

    /// Circular translation: `out[t] = self[t − shift]`.
    pub fn roll(&self, dr: isize, dc: isize) -> Plane {
        Plane::from_fn(self.m, |r, c| {
            self.wrapped(r as isize - dr, c as isize - dc)
        })
    }

    /// Moves the origin sample to the center (index `m/2`).
    pub fn fftshift(&self) -> Plane {
        let h = (self.m / 2) as isize;
        self.roll(h, h)
    }

    /// Inverse of [`Plane::fftshift`].
    pub fn ifftshift(&self) -> Plane {
        let h = (self.m / 2) as isize;
        self.roll(-h, -h)
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, other: &Plane, k: f64) {
        debug_assert_eq!(self.m, other.m);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }
}

impl Index<(usize, usize)> for Plane {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.m + c]
    }
}

impl IndexMut<(usize, usize)> for Plane {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.m + c]
    }
}

impl Add for &Plane {
    type Output = Plane;

    fn add(self, rhs: &Plane) -> Plane {
        assert_eq!(self.m, rhs.m, "plane sides differ");
        Plane {
            m: self.m,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Plane {
    type Output = Plane;

    fn sub(self, rhs: &Plane) -> Plane {
        assert_eq!(self.m, rhs.m, "plane sides differ");
        Plane {
            m: self.m,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &Plane {
    type Output = Plane;

    fn mul(self, k: f64) -> Plane {
        self.scale(k)
    }
}

/// A stack of `k ≥ 1` planes sharing one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelMap {
    channels: Vec<Plane>,
}

impl MultiChannelMap {
    pub fn new(channels: Vec<Plane>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::ShapeMismatch("a map needs at least one channel".into()));
        };
        let m = first.side();
        if let Some(bad) = channels.iter().find(|p| p.side() != m) {
            return Err(Error::ShapeMismatch(format!(
                "channel side {} differs from {m}",
                bad.side()
            )));
        }
        Ok(Self { channels })
    }

    pub fn single(p: Plane) -> Self {
        Self { channels: vec![p] }
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            channels: vec![Plane::zeros(m); k.max(1)],
        }
    }

    pub fn side(&self) -> usize {
        self.channels[0].side()
    }

    /// Channel count.
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Plane] {
        &self.channels
    }

    pub fn channel(&self, p: usize) -> &Plane {
        &self.channels[p]
    }

    pub fn channel_mut(&mut self, p: usize) -> &mut Plane {
        &mut self.channels[p]
    }

    pub fn into_channels(self) -> Vec<Plane> {
        self.channels
    }

    pub fn max_abs(&self) -> f64 {
        self.channels.iter().fold(0.0, |acc, p| acc.max(p.max_abs()))
    }

    pub fn max_abs_diff(&self, other: &MultiChannelMap) -> f64 {
        self.channels
            .iter()
            .zip(&other.channels)
            .fold(0.0, |acc, (a, b)| acc.max(a.max_abs_diff(b)))
    }

    pub fn dot(&self, other: &MultiChannelMap) -> f64 {
        self.channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// All samples, channel-major then row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect()
    }

    /// Inverse of [`MultiChannelMap::flatten`].
    pub fn unflatten(m: usize, k: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * m * k {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {k} channels of side {m}",
                data.len()
            )));
        }
        Self::new(
            data.chunks(m * m)
                .map(|c| Plane::from_vec(m, c.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, other: &MultiChannelMap, k: f64) {
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.add_scaled(b, k);
        }
    }
}

/// Complex square array holding the DFT of a [`Plane`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    m: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![Complex64::new(0.0, 0.0); m * m],
        }
    }

    pub fn filled(m: usize, value: Complex64) -> Self {
        Self {
            m,
            data: vec![value; m * m],
        }
    }

    pub fn from_vec(m: usize, data: Vec<Complex64>) -> Result<Self> {
        if m == 0 || data.len() != m * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bins, got {}",
                m * m,
                data.len()
            )));
        }
        Ok(Self { m, data })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.m
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn conj(&self) -> Spectrum {
        Spectrum {
            m: self.m,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Spectrum) -> Spectrum {
        assert_eq!(self.m, other.m, "spectrum sides differ");
        Spectrum {
            m: self.m,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// `Σ conj(self[u]) · other[u]`
    pub fn inner(&self, other: &Spectrum) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// Largest violation of `X[u] = conj(X[−u mod m])`.
    pub fn symmetry_residue(&self) -> f64 {
        let m = self.m;
        let mut worst: f64 = 0.0;
        for r in 0..m {
            for c in 0..m {
                let mirror = self.data[((m - r) % m) * m + (m - c) % m];
                worst = worst.max((self.data[r * m + c] - mirror.conj()).norm());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Spectrum {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.m + c]
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(m: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(m)
        } else {
            p.plan_fft_forward(m)
        }
    })
}

/// Separable 2-D FFT in place: rows, then columns.
fn fft2_in_place(data: &mut [Complex64], m: usize, inverse: bool) {
    let fft = plan(m, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);

    let mut column = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..m {
        for r in 0..m {
            column[r] = data[r * m + c];
        }
        fft.process_with_scratch(&mut column, &mut scratch);
        for r in 0..m {
            data[r * m + c] = column[r];
        }
    }
}

/// Unnormalized forward DFT.
pub fn dft2(p: &Plane) -> Spectrum {
    let m = p.m;
    let mut data: Vec<Complex64> = p.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, m, false);
    Spectrum { m, data }
}

/// Inverse DFT with the `1/m²` factor. Returns the full complex result.
fn inverse_complex(s: &Spectrum) -> Vec<Complex64> {
    let m = s.m;
    let mut data = s.data.clone();
    fft2_in_place(&mut data, m, true);
    let k = 1.0 / (m * m) as f64;
    for z in &mut data {
        *z *= k;
    }
    data
}

/// Inverse DFT, rejecting spectra whose inverse is not real.
pub fn idft2(s: &Spectrum) -> Result<Plane> {
    let data = inverse_complex(s);
    let residue = data.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    if residue > 1e-9 * s.max_abs() {
        return Err(Error::NonSymmetricSpectrum { residue });
    }
    Ok(Plane {
        m: s.m,
        data: data.into_iter().map(|z| z.re).collect(),
    })
}

/// Inverse DFT keeping only the real part. For spectra that are symmetric by construction.
pub(crate) fn idft2_real(s: &Spectrum) -> Plane {
    Plane {
        m: s.m,
        data: inverse_complex(s).into_iter().map(|z| z.re).collect(),
    }
}

pub(crate) fn ensure_same_side(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("side {a} vs side {b}")));
    }
    Ok(())
}

/// Circular cross-correlation `a ⋆ b`.
pub fn circ_xcorr(a: &Plane, b: &Plane) -> Result<Plane> {
    ensure_same_side(a.m, b.m)?;
    Ok(idft2_real(&dft2(a).conj().hadamard(&dft2(b))))
}

/// Circular convolution `a * b`.
pub fn circ_conv(a: &Plane, b: &Plane) -> Result<Plane> {
    ensure_same_side(a.m, b.m)?;
    Ok(idft2_real(&dft2(a).hadamard(&dft2(b))))
}

fn check_side(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidSize(format!("side must be at least 2, got {m}")));
    }
    Ok(())
}

/// Dirac delta at the origin.
pub fn impulse(m: usize) -> Result<Plane> {
    impulse_at(m, 0, 0)
}

/// Dirac delta translated to `(r, c)`.
pub fn impulse_at(m: usize, r: usize, c: usize) -> Result<Plane> {
    check_side(m)?;
    let mut p = Plane::zeros(m);
    p[(r % m, c % m)] = 1.0;
    Ok(p)
}

/// Gaussian with unit peak at the origin, distances measured circularly.
pub fn gaussian_response(m: usize, sigma: f64) -> Result<Plane> {
    check_side(m)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSigma(sigma));
    }
    let wrap = |i: usize| {
        let d = i.min(m - i) as f64;
        d * d
    };
    let denom = 2.0 * sigma * sigma;
    Ok(Plane::from_fn(m, |r, c| (-(wrap(r) + wrap(c)) / denom).exp()))
}

/// 1-D symmetric Hann weights `0.5 (1 − cos(2πt/(m−1)))`.
pub fn hann_1d(m: usize) -> Vec<f64> {
    let denom = (m - 1).max(1) as f64;
    (0..m)
        .map(|t| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / denom).cos()))
        .collect()
}

/// Separable Hann window, the outer product of [`hann_1d`] with itself.
pub fn hann_window(m: usize) -> Result<Plane> {
    check_side(m)?;
    let w = hann_1d(m);
    Ok(Plane::from_fn(m, |r, c| w[r] * w[c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(m: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
    }

    // O(m⁴) reference transform.
    fn naive_dft(p: &Plane) -> Spectrum {
        let m = p.side();
        let mut out = Spectrum::zeros(m);
        for kr in 0..m {
            for kc in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..m {
                    for c in 0..m {
                        let phase = -2.0 * std::f64::consts::PI * ((kr * r + kc * c) % m) as f64
                            / m as f64;
                        acc += p[(r, c)] * Complex64::from_polar(1.0, phase);
                    }
                }
                out.as_mut_slice()[kr * m + kc] = acc;
            }
        }
        out
    }

    #[test]
    fn impulse_transforms_to_ones() {
        let s = dft2(&impulse(4).unwrap());
        for z in s.as_slice() {
            assert_eq!(*z, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let s = dft2(&Plane::filled(4, 2.5));
        assert!((s[(0, 0)] - Complex64::new(40.0, 0.0)).norm() < 1e-12);
        for (i, z) in s.as_slice().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i} = {z}");
        }
    }

    #[test]
    fn fft_matches_naive_dft_and_round_trips() {
        let p = random_plane(8, 3);
        let fast = dft2(&p);
        let slow = naive_dft(&p);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).norm() < 1e-11);
        }
        let back = idft2(&slow).unwrap();
        assert!(back.max_abs_diff(&p) <= 1e-12);
        assert!(idft2(&fast).unwrap().max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn inverse_of_ones_is_impulse() {
        let p = idft2(&Spectrum::filled(5, Complex64::new(1.0, 0.0))).unwrap();
        assert!(p.max_abs_diff(&impulse(5).unwrap()) < 1e-15);
        let z = idft2(&Spectrum::zeros(4)).unwrap();
        assert_eq!(z, Plane::zeros(4));
    }

    #[test]
    fn non_symmetric_spectrum_is_rejected() {
        let mut s = Spectrum::zeros(4);
        s.as_mut_slice()[1] = Complex64::new(0.0, 1.0);
        assert!(matches!(idft2(&s), Err(Error::NonSymmetricSpectrum { .. })));
    }

    #[test]
    fn delta_identities() {
        let b = random_plane(6, 1);
        let d = impulse(6).unwrap();
        assert!(circ_xcorr(&d, &b).unwrap().max_abs_diff(&b) < 1e-15);
        assert!(circ_conv(&d, &b).unwrap().max_abs_diff(&b) < 1e-15);
        assert!(circ_xcorr(&d, &d).unwrap().max_abs_diff(&d) < 1e-15);
    }

    #[test]
    fn conv_with_shifted_delta_translates() {
        let x = random_plane(5, 2);
        let shifted = circ_conv(&impulse_at(5, 1, 3).unwrap(), &x).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let expect = x.wrapped(r as isize - 1, c as isize - 3);
                assert!((shifted[(r, c)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Plane::zeros(4);
        let b = Plane::zeros(5);
        assert!(matches!(circ_xcorr(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(circ_conv(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn canonical_signals() {
        let g = gaussian_response(8, 1.0).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 0)], g[(7, 0)]);
        assert_eq!(g[(0, 3)], g[(0, 5)]);
        let h = hann_window(5).unwrap();
        assert!((h[(2, 2)] - 1.0).abs() < 1e-15);
        assert_eq!(h[(0, 0)], 0.0);
        assert!(h.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(matches!(gaussian_response(8, 0.0), Err(Error::InvalidSigma(_))));
        assert!(matches!(gaussian_response(8, f64::NAN), Err(Error::InvalidSigma(_))));
        assert!(impulse(1).is_err());
    }

    #[test]
    fn fftshift_round_trip() {
        let p = random_plane(7, 9);
        assert_eq!(p.fftshift().ifftshift(), p);
        let d = impulse(8).unwrap().fftshift();
        assert_eq!(d[(4, 4)], 1.0);
    }
}
