//! Image-quality and kernel-accuracy metrics, and the Gaussian8 test kernels.

use crate::degradation::{gaussian_isotropic, BlurKernel};
use crate::error::{Error, Result};
use crate::image::{rgb_to_y, Image};
use crate::kernel_space::{project, PcaBasis, ReducedKernel};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Luma plane of `img`: converted for RGB, passed through for grayscale.
pub fn luma(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => rgb_to_y(img),
        n => Err(Error::InvalidArgument(format!("expected 1 or 3 channels, got {n}"))),
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// PSNR in dB on the Y channel after shaving `border` pixels from every side.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr_y(a: &Image, b: &Image, border: usize) -> Result<f64> {
    check_same(a, b)?;
    let (_, h, w) = a.dims();
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::InvalidArgument(format!(
            "border {border} leaves nothing of a {h}x{w} image"
        )));
    }
    let ya = luma(a)?.crop(border, border, h - 2 * border, w - 2 * border)?;
    let yb = luma(b)?.crop(border, border, h - 2 * border, w - 2 * border)?;
    let mse = ya
        .data()
        .iter()
        .zip(yb.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / ya.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn ssim_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx / total);
        }
    }
    w
}

/// Single-scale SSIM on the Y channel with an 11x11 Gaussian window
/// (σ = 1.5), averaged over all window positions fully inside the image.
pub fn ssim_y(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (_, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (ya, yb) = (luma(a)?, luma(b)?);
    let (pa, pb) = (ya.plane(0), yb.plane(0));
    let win = ssim_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in 0..SSIM_WINDOW {
                for q in 0..SSIM_WINDOW {
                    let wt = win[p * SSIM_WINDOW + q];
                    let (x, y) = (pa[(i + p) * w + j + q], pb[(i + p) * w + j + q]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean absolute coefficient error between an estimate and the projection of
/// the ground-truth kernel.
pub fn kernel_l1_reduced(est: &ReducedKernel, gt: &BlurKernel, basis: &PcaBasis) -> Result<f64> {
    let truth = project(basis, gt)?;
    if est.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimated coefficients vs {} in the basis",
            est.len(),
            truth.len()
        )));
    }
    Ok(est
        .coeffs
        .iter()
        .zip(&truth.coeffs)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / est.len() as f64)
}

/// Width range of the Gaussian8 kernels for a scale.
pub fn gaussian8_range(scale: usize) -> Result<(f64, f64)> {
    match scale {
        2 => Ok((0.80, 1.60)),
        3 => Ok((1.35, 2.40)),
        4 => Ok((1.80, 3.20)),
        _ => Err(Error::InvalidArgument(format!(
            "Gaussian8 is defined for scales 2, 3, 4, got {scale}"
        ))),
    }
}

/// Eight evenly spaced widths, both endpoints included.
pub fn gaussian8_widths(scale: usize) -> Result<Vec<f64>> {
    let (lo, hi) = gaussian8_range(scale)?;
    Ok((0..8).map(|i| lo + (hi - lo) * i as f64 / 7.0).collect())
}

pub fn gaussian8(scale: usize) -> Result<Vec<BlurKernel>> {
    gaussian8_widths(scale)?
        .into_iter()
        .map(|w| gaussian_isotropic(21, w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_space::fit_pca;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_for(seed, 0);
        Image::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random_image(1, 16, 16, 1);
        assert_eq!(psnr_y(&a, &a, 0).unwrap(), f64::INFINITY);
        let b = Image::filled(1, 16, 16, 0.3);
        let c = Image::filled(1, 16, 16, 0.4);
        assert!((psnr_y(&b, &c, 2).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr_y(&b, &c, 8).is_err());
        assert!(psnr_y(&b, &Image::zeros(1, 16, 15), 0).is_err());
    }

    #[test]
    fn psnr_matches_two_line_oracle() {
        let a = random_image(3, 20, 18, 2);
        let b = random_image(3, 20, 18, 3);
        let y = |img: &Image, i: usize, j: usize| {
            (16.0 + 65.481 * img.get(0, i, j) + 128.553 * img.get(1, i, j) + 24.966 * img.get(2, i, j)) / 255.0
        };
        let border = 3;
        let mut se = 0.0;
        let mut n = 0.0;
        for i in border..20 - border {
            for j in border..18 - border {
                se += (y(&a, i, j) - y(&b, i, j)).powi(2);
                n += 1.0;
            }
        }
        let oracle = 10.0 * (n / se).log10();
        assert!((psnr_y(&a, &b, border).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn ssim_cases() {
        let a = random_image(1, 24, 24, 4);
        assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let flat = Image::filled(3, 16, 16, 0.7);
        assert!((ssim_y(&flat, &flat.clone()).unwrap() - 1.0).abs() < 1e-12);
        // Binary image: every pixel far from mid-gray.
        let bin = random_image(1, 32, 32, 5).map(|v| if v < 0.5 { 0.1 } else { 0.9 });
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim_y(&bin, &inv).unwrap() < 0.1);
        assert!(ssim_y(&Image::zeros(1, 10, 30), &Image::zeros(1, 10, 30)).is_err());
    }

    #[test]
    fn kernel_l1_cases() {
        let ks: Vec<_> = (0..20).map(|i| gaussian_isotropic(7, 0.4 + 0.1 * i as f64).unwrap()).collect();
        let basis = fit_pca(&ks, 4).unwrap();
        let gt = &ks[5];
        let exact = project(&basis, gt).unwrap();
        assert!(kernel_l1_reduced(&exact, gt, &basis).unwrap() < 1e-15);
        let mean = BlurKernel::normalized(7, basis.mean().to_vec()).unwrap();
        assert!(kernel_l1_reduced(&ReducedKernel::zeros(4), &mean, &basis).unwrap() < 1e-12);
        let est = ReducedKernel::new(vec![0.1, -0.2, 0.3, 0.05]).unwrap();
        let hand = est.coeffs.iter().zip(&exact.coeffs).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0;
        assert!((kernel_l1_reduced(&est, gt, &basis).unwrap() - hand).abs() < 1e-15);
        assert!(kernel_l1_reduced(&ReducedKernel::zeros(3), gt, &basis).is_err());
    }

    #[test]
    fn gaussian8_widths_per_scale() {
        let w4 = gaussian8_widths(4).unwrap();
        assert_eq!(w4.len(), 8);
        assert!((w4[0] - 1.8).abs() < 1e-12 && (w4[7] - 3.2).abs() < 1e-12);
        assert!((w4[1] - 2.0).abs() < 1e-12);
        let w3 = gaussian8_widths(3).unwrap();
        for (i, w) in w3.iter().enumerate() {
            assert!((w - (1.35 + 0.15 * i as f64)).abs() < 1e-12);
        }
        let w2 = gaussian8_widths(2).unwrap();
        assert!((w2[1] - w2[0] - 8.0 / 70.0).abs() < 1e-12);
        for s in 2..=4 {
            let (lo, hi) = gaussian8_range(s).unwrap();
            for k in gaussian8(s).unwrap() {
                assert_eq!(k.side(), 21);
                assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-8);
            }
            assert!(gaussian8_widths(s).unwrap().iter().all(|w| *w >= lo - 1e-12 && *w <= hi + 1e-12));
        }
        assert!(gaussian8(5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn metrics_are_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random_image(3, 16, 16, s1);
            let b = random_image(3, 16, 16, s2 + 1000);
            prop_assert_eq!(psnr_y(&a, &b, 1).unwrap(), psnr_y(&b, &a, 1).unwrap());
            prop_assert!((ssim_y(&a, &b).unwrap() - ssim_y(&b, &a).unwrap()).abs() < 1e-15);
        }
    }
}
