//! The degradation model `y = (x ⊗ k)↓s + n` and the blur-kernel generators.
//!
//! Convolution is a true convolution (the kernel is flipped) with edge
//! replication of `(side - 1) / 2` pixels on each border. The `s`-fold
//! downsampler keeps the upper-left pixel of every `s x s` patch.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{rng_for, streams};

/// Tolerance on `Σk = 1` accepted by [`BlurKernel::new`].
pub const KERNEL_SUM_TOL: f64 = 1e-8;

/// Square, odd-sided, non-negative blur stencil that sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    side: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("side must be odd, got {side}")));
        }
        if weights.len() != side * side {
            return Err(Error::InvalidKernel(format!(
                "{} weights for side {side}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidKernel(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { side, weights })
    }

    /// Clamps negatives to zero and rescales to unit sum.
    pub fn normalized(side: usize, mut weights: Vec<f64>) -> Result<Self> {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Degenerate(format!(
                "kernel weights sum to {sum} after clamping negatives"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(side, weights)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.side / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.side + col]
    }
}

/// Identity kernel: center tap one, all others zero.
pub fn dirac(side: usize) -> Result<BlurKernel> {
    if side.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("dirac side must be odd, got {side}")));
    }
    let mut w = vec![0.0; side * side];
    w[(side / 2) * side + side / 2] = 1.0;
    BlurKernel::new(side, w)
}

/// Padding applied before convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Edge replication; keeps the operator linear and halo-free.
    #[default]
    Replicate,
    Zero,
}

// ---------------------------------------------------------------------------
// Plane-level operators
// ---------------------------------------------------------------------------

fn pad_plane(x: &[f64], h: usize, w: usize, r: usize, boundary: Boundary) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![0.0; ph * pw];
    for py in 0..ph {
        let sy = py as i64 - r as i64;
        if boundary == Boundary::Zero && !(0..h as i64).contains(&sy) {
            continue;
        }
        let sy = sy.clamp(0, h as i64 - 1) as usize;
        for px in 0..pw {
            let sx = px as i64 - r as i64;
            if boundary == Boundary::Zero && !(0..w as i64).contains(&sx) {
                continue;
            }
            out[py * pw + px] = x[sy * w + sx.clamp(0, w as i64 - 1) as usize];
        }
    }
    out
}

fn flipped(stencil: &[f64]) -> Vec<f64> {
    stencil.iter().rev().copied().collect()
}

/// Blurs one `h x w` plane with an arbitrary `side x side` stencil (which need
/// not be a valid kernel) and keeps every `s`-th sample starting at the
/// upper-left pixel. `h` and `w` must be multiples of `s`.
pub fn blur_decimate_plane(
    x: &[f64],
    h: usize,
    w: usize,
    stencil: &[f64],
    side: usize,
    s: usize,
    boundary: Boundary,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), h * w);
    debug_assert_eq!(stencil.len(), side * side);
    debug_assert!(h.is_multiple_of(s) && w.is_multiple_of(s));
    let r = side / 2;
    let pw = w + 2 * r;
    let padded = pad_plane(x, h, w, r, boundary);
    let kf = flipped(stencil);
    let taps: Vec<(usize, usize, f64)> = (0..side * side)
        .filter(|&t| kf[t] != 0.0)
        .map(|t| (t / side, t % side, kf[t]))
        .collect();
    let (oh, ow) = (h / s, w / s);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let (y0, x0) = (s * i, s * j);
            out[i * ow + j] = taps
                .iter()
                .map(|&(p, q, k)| k * padded[(y0 + p) * pw + x0 + q])
                .sum();
        }
    }
    out
}

/// Adjoint of [`blur_decimate_plane`]: maps an `(h/s) x (w/s)` plane back to
/// `h x w`.
pub fn blur_decimate_adjoint_plane(
    y: &[f64],
    h: usize,
    w: usize,
    stencil: &[f64],
    side: usize,
    s: usize,
    boundary: Boundary,
) -> Vec<f64> {
    let r = side / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let (oh, ow) = (h / s, w / s);
    debug_assert_eq!(y.len(), oh * ow);
    let kf = flipped(stencil);
    let taps: Vec<(usize, usize, f64)> = (0..side * side)
        .filter(|&t| kf[t] != 0.0)
        .map(|t| (t / side, t % side, kf[t]))
        .collect();
    let mut padded = vec![0.0; ph * pw];
    for i in 0..oh {
        for j in 0..ow {
            let v = y[i * ow + j];
            let (y0, x0) = (s * i, s * j);
            for &(p, q, k) in &taps {
                padded[(y0 + p) * pw + x0 + q] += k * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for py in 0..ph {
        let sy = py as i64 - r as i64;
        if boundary == Boundary::Zero && !(0..h as i64).contains(&sy) {
            continue;
        }
        let sy = sy.clamp(0, h as i64 - 1) as usize;
        for px in 0..pw {
            let sx = px as i64 - r as i64;
            if boundary == Boundary::Zero && !(0..w as i64).contains(&sx) {
                continue;
            }
            out[sy * w + sx.clamp(0, w as i64 - 1) as usize] += padded[py * pw + px];
        }
    }
    out
}

/// Applies `blur_decimate_plane` to every channel.
pub fn blur_decimate(
    img: &Image,
    stencil: &[f64],
    side: usize,
    s: usize,
    boundary: Boundary,
) -> Result<Image> {
    let (c, h, w) = img.dims();
    check_divisible(h, w, s)?;
    let mut data = Vec::with_capacity(c * (h / s) * (w / s));
    for ch in 0..c {
        data.extend(blur_decimate_plane(img.plane(ch), h, w, stencil, side, s, boundary));
    }
    Image::new(c, h / s, w / s, data)
}

fn check_divisible(h: usize, w: usize, s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    if !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} is not divisible by scale {s}; apply modcrop first"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Degradation model
// ---------------------------------------------------------------------------

/// Same-size convolution with edge-replicate padding.
pub fn convolve2d(img: &Image, k: &BlurKernel) -> Image {
    blur_decimate(img, k.weights(), k.side(), 1, Boundary::Replicate)
        .expect("stride 1 always divides")
}

/// Keeps `input[s*i, s*j]`.
pub fn downsample_s(img: &Image, s: usize) -> Result<Image> {
    let (c, h, w) = img.dims();
    check_divisible(h, w, s)?;
    Ok(Image::from_fn(c, h / s, w / s, |ch, i, j| img.get(ch, s * i, s * j)))
}

/// Adds i.i.d. `N(0, (sigma255 / 255)^2)` noise. No clamping.
pub fn add_awgn(img: &Image, sigma255: f64, seed: u64) -> Result<Image> {
    if !(sigma255 >= 0.0) || !sigma255.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma255}")));
    }
    if sigma255 == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma255 / 255.0).expect("finite positive sigma");
    let mut rng = rng_for(seed, streams::NOISE);
    Ok(img.map(|v| v + normal.sample(&mut rng)))
}

/// How the configured noise level is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseLevel {
    /// `noise_sigma` is the standard deviation in 0-255 code units.
    #[default]
    StdDev,
    /// `noise_sigma` is the variance in squared code units.
    Variance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationConfig {
    pub scale: usize,
    /// Noise level on the 0-255 code scale.
    pub noise_sigma: f64,
    pub noise_level: NoiseLevel,
    pub seed: u64,
    pub boundary: Boundary,
}

impl DegradationConfig {
    pub fn noiseless(scale: usize) -> Self {
        Self {
            scale,
            noise_sigma: 0.0,
            noise_level: NoiseLevel::StdDev,
            seed: 0,
            boundary: Boundary::Replicate,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    /// Noise standard deviation in code units.
    pub fn noise_std(&self) -> f64 {
        match self.noise_level {
            NoiseLevel::StdDev => self.noise_sigma,
            NoiseLevel::Variance => self.noise_sigma.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// `y = (x ⊗ k)↓s + n`, composed in exactly that order.
pub fn degrade(x: &Image, k: &BlurKernel, cfg: &DegradationConfig) -> Result<Image> {
    cfg.validate()?;
    let blurred = blur_decimate(x, k.weights(), k.side(), cfg.scale, cfg.boundary)?;
    add_awgn(&blurred, cfg.noise_std(), cfg.seed)
}

// ---------------------------------------------------------------------------
// Kernel generators
// ---------------------------------------------------------------------------

/// Isotropic Gaussian `exp(-r²/2σ²)` centered on the grid, normalized.
pub fn gaussian_isotropic(side: usize, width: f64) -> Result<BlurKernel> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel width must be > 0, got {width}")));
    }
    if side.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("side must be odd, got {side}")));
    }
    let c = (side / 2) as f64;
    let w = (0..side * side)
        .map(|t| {
            let (i, j) = ((t / side) as f64 - c, (t % side) as f64 - c);
            (-(i * i + j * j) / (2.0 * width * width)).exp()
        })
        .collect();
    BlurKernel::normalized(side, w)
}

/// Valid range for the anisotropic axis lengths.
pub const ANISO_SIGMA_RANGE: (f64, f64) = (0.6, 5.0);
/// Largest multiplicative noise fraction for anisotropic kernels.
pub const MAX_KERNEL_NOISE: f64 = 0.25;

/// Rotated anisotropic Gaussian with optional multiplicative noise.
///
/// The covariance is `R(θ) diag(σ₁², σ₂²) R(θ)ᵀ` in `(x = column, y = row)`
/// coordinates. Each tap is multiplied by `1 + u`, `u ~ U(-noise_frac,
/// noise_frac)`, then negatives are clamped and the kernel is normalized.
pub fn gaussian_anisotropic(
    side: usize,
    sig1: f64,
    sig2: f64,
    theta: f64,
    noise_frac: f64,
    seed: u64,
) -> Result<BlurKernel> {
    let (lo, hi) = ANISO_SIGMA_RANGE;
    for (name, v) in [("sig1", sig1), ("sig2", sig2)] {
        if !(lo..=hi).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside ({lo}, {hi})")));
        }
    }
    if !(-PI..=PI).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta = {theta} outside [-pi, pi]")));
    }
    if !(0.0..=MAX_KERNEL_NOISE).contains(&noise_frac) {
        return Err(Error::InvalidArgument(format!(
            "noise_frac = {noise_frac} outside [0, {MAX_KERNEL_NOISE}]"
        )));
    }
    if side.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("side must be odd, got {side}")));
    }

    let (sin, cos) = theta.sin_cos();
    let (v1, v2) = (sig1 * sig1, sig2 * sig2);
    // Σ = R diag(v1, v2) Rᵀ
    let sxx = cos * cos * v1 + sin * sin * v2;
    let syy = sin * sin * v1 + cos * cos * v2;
    let sxy = cos * sin * (v1 - v2);
    let det = sxx * syy - sxy * sxy;
    let (pxx, pyy, pxy) = (syy / det, sxx / det, -sxy / det);

    let c = (side / 2) as f64;
    let mut w: Vec<f64> = (0..side * side)
        .map(|t| {
            let (y, x) = ((t / side) as f64 - c, (t % side) as f64 - c);
            (-0.5 * (pxx * x * x + 2.0 * pxy * x * y + pyy * y * y)).exp()
        })
        .collect();
    if noise_frac > 0.0 {
        let mut rng = rng_for(seed, streams::KERNEL);
        let u = Uniform::new_inclusive(-noise_frac, noise_frac).expect("valid range");
        for v in &mut w {
            *v *= 1.0 + u.sample(&mut rng);
        }
    }
    BlurKernel::normalized(side, w)
}

/// Training-kernel distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    /// Isotropic Gaussians on a 21-tap grid, width range depending on scale.
    Isotropic,
    /// Noisy rotated anisotropic Gaussians on an 11-tap grid.
    Anisotropic,
}

impl Setting {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(Setting::Isotropic),
            2 => Ok(Setting::Anisotropic),
            _ => Err(Error::InvalidArgument(format!("setting must be 1 or 2, got {i}"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Setting::Isotropic => 1,
            Setting::Anisotropic => 2,
        }
    }

    pub fn kernel_side(self) -> usize {
        match self {
            Setting::Isotropic => 21,
            Setting::Anisotropic => 11,
        }
    }
}

/// Upper bound of the isotropic training width for a scale.
pub fn isotropic_width_bound(scale: usize) -> Result<f64> {
    match scale {
        2 => Ok(2.0),
        3 => Ok(3.0),
        4 => Ok(4.0),
        _ => Err(Error::InvalidArgument(format!(
            "setting 1 supports scales 2, 3, 4, got {scale}"
        ))),
    }
}

pub const ISOTROPIC_MIN_WIDTH: f64 = 0.2;

/// Draws one training kernel for `setting` at `scale`.
pub fn sample_training_kernel(
    setting: Setting,
    scale: usize,
    rng: &mut impl Rng,
) -> Result<BlurKernel> {
    match setting {
        Setting::Isotropic => {
            let hi = isotropic_width_bound(scale)?;
            let width = rng.random_range(ISOTROPIC_MIN_WIDTH..=hi);
            gaussian_isotropic(setting.kernel_side(), width)
        }
        Setting::Anisotropic => {
            let (lo, hi) = ANISO_SIGMA_RANGE;
            let s1 = rng.random_range(lo..hi);
            let s2 = rng.random_range(lo..hi);
            let theta = rng.random_range(-PI..=PI);
            let seed = rng.random::<u64>();
            gaussian_anisotropic(setting.kernel_side(), s1, s2, theta, MAX_KERNEL_NOISE, seed)
        }
    }
}

// ---------------------------------------------------------------------------
// Kernel text files
// ---------------------------------------------------------------------------

/// `K <side>` followed by `side` rows of `side` decimals.
pub fn format_kernel(k: &BlurKernel) -> String {
    let mut out = format!("K {}\n", k.side);
    for row in k.weights.chunks(k.side) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_kernel(text: &str) -> std::result::Result<BlurKernel, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty kernel file")?;
    let side = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["K", n] => n.parse::<usize>().map_err(|e| format!("bad side {n:?}: {e}"))?,
        _ => return Err(format!("header must be `K <side>`, got {header:?}")),
    };
    let w: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad weight {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    BlurKernel::new(side, w).map_err(|e| e.to_string())
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<BlurKernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text).map_err(|r| Error::parse(path, r))
}

pub fn write_kernel(k: &BlurKernel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_kernel(k)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_for(seed, 0);
        Image::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    fn random_kernel(side: usize, seed: u64) -> BlurKernel {
        let mut rng = rng_for(seed, 9);
        BlurKernel::normalized(side, (0..side * side).map(|_| rng.random::<f64>()).collect())
            .unwrap()
    }

    /// Quadruple loop with explicit replicate padding.
    fn brute_convolve(x: &Image, k: &BlurKernel) -> Image {
        let (c, h, w) = x.dims();
        let r = k.radius() as i64;
        Image::from_fn(c, h, w, |ch, u, v| {
            let mut acc = 0.0;
            for p in 0..k.side() {
                for q in 0..k.side() {
                    let sy = (u as i64 - (p as i64 - r)).clamp(0, h as i64 - 1) as usize;
                    let sx = (v as i64 - (q as i64 - r)).clamp(0, w as i64 - 1) as usize;
                    acc += k.at(p, q) * x.get(ch, sy, sx);
                }
            }
            acc
        })
    }

    #[test]
    fn kernel_validation() {
        assert!(BlurKernel::new(2, vec![0.25; 4]).is_err());
        assert!(BlurKernel::new(1, vec![0.5]).is_err());
        assert!(BlurKernel::new(3, vec![1.0 / 9.0; 9]).is_ok());
        let mut w = vec![0.0; 9];
        w[0] = -0.1;
        w[1] = 1.1;
        assert!(BlurKernel::new(3, w).is_err());
    }

    #[test]
    fn dirac_definition() {
        let d = dirac(21).unwrap();
        assert_eq!(d.at(10, 10), 1.0);
        assert_eq!(d.weights().iter().sum::<f64>(), 1.0);
        assert_eq!(dirac(1).unwrap().weights(), &[1.0]);
        assert!(dirac(4).is_err());
    }

    #[test]
    fn convolution_identities() {
        let x = random_image(3, 9, 7, 1);
        assert_eq!(convolve2d(&x, &dirac(5).unwrap()), x);
        let flat = Image::filled(1, 6, 6, 0.42);
        let out = convolve2d(&flat, &random_kernel(7, 2));
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-14));
    }

    #[test]
    fn convolution_matches_brute_force() {
        let x = random_image(1, 8, 8, 3);
        let k = random_kernel(5, 4);
        let a = convolve2d(&x, &k);
        let b = brute_convolve(&x, &k);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_is_not_correlation() {
        // A one-hot kernel off center shifts the image by the tap offset.
        let mut w = vec![0.0; 9];
        w[5] = 1.0; // row 1, col 2 => offset (0, +1)
        let k = BlurKernel::new(3, w).unwrap();
        let x = Image::from_fn(1, 3, 4, |_, y, x| (y * 4 + x) as f64);
        let out = convolve2d(&x, &k);
        // out[u, v] = x[u, v - 1], replicated at the left edge.
        assert_eq!(out.get(0, 1, 0), x.get(0, 1, 0));
        assert_eq!(out.get(0, 1, 2), x.get(0, 1, 1));
    }

    #[test]
    fn downsample_definition() {
        let x = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f64);
        assert_eq!(downsample_s(&x, 1).unwrap(), x);
        assert_eq!(downsample_s(&x, 2).unwrap().data(), &[0.0, 2.0, 8.0, 10.0]);
        let r = random_image(2, 12, 12, 5);
        let d = downsample_s(&r, 3).unwrap();
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(d.data()[(c * 4 + i) * 4 + j], r.data()[(c * 12 + 3 * i) * 12 + 3 * j]);
                }
            }
        }
        assert!(downsample_s(&Image::zeros(1, 5, 4), 2).is_err());
    }

    #[test]
    fn awgn_zero_is_identity_and_seeded() {
        let x = random_image(1, 4, 4, 6);
        assert_eq!(add_awgn(&x, 0.0, 1).unwrap(), x);
        assert_eq!(add_awgn(&x, 15.0, 1).unwrap(), add_awgn(&x, 15.0, 1).unwrap());
        assert_ne!(add_awgn(&x, 15.0, 1).unwrap(), add_awgn(&x, 15.0, 2).unwrap());
        assert!(add_awgn(&x, -1.0, 1).is_err());
    }

    #[test]
    fn awgn_moments() {
        let x = Image::zeros(1, 1000, 1000);
        let n = add_awgn(&x, 15.0, 11).unwrap();
        let count = n.data().len() as f64;
        let mean = n.data().iter().sum::<f64>() / count;
        let var = n.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let target = 15.0 / 255.0;
        assert!(mean.abs() < 3.0 * target / 1000.0, "mean {mean}");
        assert!((var.sqrt() / target - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn variance_interpretation() {
        let cfg = DegradationConfig {
            noise_level: NoiseLevel::Variance,
            ..DegradationConfig::noiseless(1).with_noise(225.0, 0)
        };
        assert_eq!(cfg.noise_std(), 15.0);
    }

    #[test]
    fn degrade_degenerate_cases() {
        let x = random_image(3, 8, 8, 7);
        let d = dirac(21).unwrap();
        assert_eq!(degrade(&x, &d, &DegradationConfig::noiseless(1)).unwrap(), x);
        assert_eq!(
            degrade(&x, &d, &DegradationConfig::noiseless(2)).unwrap(),
            downsample_s(&x, 2).unwrap()
        );
    }

    #[test]
    fn degrade_matches_composition_oracle() {
        let x = random_image(1, 16, 16, 8);
        let k = gaussian_isotropic(21, 1.7).unwrap();
        let y = degrade(&x, &k, &DegradationConfig::noiseless(4)).unwrap();
        let oracle = brute_convolve(&x, &k);
        for i in 0..4 {
            for j in 0..4 {
                assert!((y.get(0, i, j) - oracle.get(0, 4 * i, 4 * j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity_for_both_boundaries() {
        let k = random_kernel(5, 10);
        for boundary in [Boundary::Replicate, Boundary::Zero] {
            for s in 1..=3 {
                let (h, w) = (6 * s, 3 * s);
                let u = random_image(1, h, w, 11);
                let v = random_image(1, h / s, w / s, 12);
                let du = blur_decimate_plane(u.data(), h, w, k.weights(), 5, s, boundary);
                let dtv = blur_decimate_adjoint_plane(v.data(), h, w, k.weights(), 5, s, boundary);
                let lhs: f64 = du.iter().zip(v.data()).map(|(a, b)| a * b).sum();
                let rhs: f64 = u.data().iter().zip(&dtv).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn isotropic_kernel_properties() {
        let k = gaussian_isotropic(21, 1.8).unwrap();
        let c = 10.0;
        let raw: Vec<f64> = (0..441)
            .map(|t| {
                let (i, j) = ((t / 21) as f64, (t % 21) as f64);
                (-((i - c).powi(2) + (j - c).powi(2)) / (2.0 * 1.8 * 1.8)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        for (a, b) in k.weights().iter().zip(&raw) {
            assert!((a - b / sum).abs() < 1e-14);
        }
        for i in 0..21 {
            for j in 0..21 {
                assert_eq!(k.at(i, j), k.at(j, i));
                assert_eq!(k.at(i, j), k.at(20 - i, j));
                assert_eq!(k.at(i, j), k.at(20 - j, i));
            }
        }
        assert!(gaussian_isotropic(21, 0.2).unwrap().at(10, 10) > 0.99);
        assert!(gaussian_isotropic(21, 0.0).is_err());
    }

    #[test]
    fn anisotropic_reduces_to_isotropic() {
        for (sigma, theta) in [(0.7, 0.3), (1.5, -2.0), (4.9, 3.0)] {
            let a = gaussian_anisotropic(11, sigma, sigma, theta, 0.0, 0).unwrap();
            let b = gaussian_isotropic(11, sigma).unwrap();
            for (u, v) in a.weights().iter().zip(b.weights()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anisotropic_axis_aligned_is_separable() {
        let (s1, s2) = (1.2, 3.1);
        let k = gaussian_anisotropic(11, s1, s2, 0.0, 0.0, 0).unwrap();
        let g = |s: f64| -> Vec<f64> {
            let v: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * s * s)).exp()).collect();
            let t: f64 = v.iter().sum();
            v.into_iter().map(|x| x / t).collect()
        };
        // Columns follow σ₁ (x axis), rows follow σ₂.
        let (gx, gy) = (g(s1), g(s2));
        for i in 0..11 {
            for j in 0..11 {
                assert!((k.at(i, j) - gy[i] * gx[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn anisotropic_noise_keeps_invariants() {
        let k = gaussian_anisotropic(11, 2.0, 0.8, 1.0, 0.25, 99).unwrap();
        assert!(k.weights().iter().all(|&w| w >= 0.0));
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let clean = gaussian_anisotropic(11, 2.0, 0.8, 1.0, 0.0, 99).unwrap();
        assert_ne!(k, clean);
        assert!(gaussian_anisotropic(11, 0.5, 1.0, 0.0, 0.0, 0).is_err());
        assert!(gaussian_anisotropic(11, 1.0, 1.0, 4.0, 0.0, 0).is_err());
        assert!(gaussian_anisotropic(11, 1.0, 1.0, 0.0, 0.3, 0).is_err());
    }

    #[test]
    fn training_kernel_sampling() {
        let mut rng = rng_for(0, 0);
        for _ in 0..200 {
            let k = sample_training_kernel(Setting::Isotropic, 4, &mut rng).unwrap();
            assert_eq!(k.side(), 21);
            let k = sample_training_kernel(Setting::Anisotropic, 4, &mut rng).unwrap();
            assert_eq!(k.side(), 11);
        }
        let a = sample_training_kernel(Setting::Anisotropic, 2, &mut rng_for(5, 0)).unwrap();
        let b = sample_training_kernel(Setting::Anisotropic, 2, &mut rng_for(5, 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_training_kernel(Setting::Isotropic, 1, &mut rng).is_err());
        assert!(Setting::from_index(3).is_err());
    }

    #[test]
    fn kernel_text_round_trip() {
        let k = gaussian_anisotropic(11, 1.3, 2.2, 0.4, 0.25, 3).unwrap();
        assert_eq!(parse_kernel(&format_kernel(&k)).unwrap(), k);
        assert!(parse_kernel("K 3\n1 0 0\n0 0 0\n").is_err());
        assert!(parse_kernel("X 1\n1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn degrade_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64, s in 1usize..4) {
            let (h, w) = (4 * s, 3 * s);
            let x1 = random_image(1, h, w, seed);
            let x2 = random_image(1, h, w, seed + 1);
            let k = random_kernel(5, seed);
            let cfg = DegradationConfig::noiseless(s);
            let mix = Image::from_fn(1, h, w, |c, y, x| a * x1.get(c, y, x) + b * x2.get(c, y, x));
            let lhs = degrade(&mix, &k, &cfg).unwrap();
            let d1 = degrade(&x1, &k, &cfg).unwrap();
            let d2 = degrade(&x2, &k, &cfg).unwrap();
            for i in 0..lhs.data().len() {
                prop_assert!((lhs.data()[i] - (a * d1.data()[i] + b * d2.data()[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn blur_then_stride_equals_fused_operator(seed in 0u64..1000, h in 8usize..17, w in 8usize..17, s in 1usize..5) {
            let (h, w) = (h - h % s, w - w % s);
            let x = random_image(1, h, w, seed);
            let k = random_kernel(3, seed);
            let fused = degrade(&x, &k, &DegradationConfig::noiseless(s)).unwrap();
            let composed = downsample_s(&brute_convolve(&x, &k), s).unwrap();
            for (u, v) in fused.data().iter().zip(composed.data()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
