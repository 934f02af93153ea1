//! Synthetic benchmark runner: blur and decimate every HR image with every
//! test kernel, super-resolve, and score against the original.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::classical::{CgRestorer, LsEstimator};
use crate::degradation::{degrade, BlurKernel, DegradationConfig};
use crate::engine::run_alternation;
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, load_image, modcrop, Image};
use crate::kernel_space::{PcaBasis, ReducedKernel};
use crate::metrics::{kernel_l1_reduced, psnr_y, ssim_y};

/// Output of a super-resolution method.
#[derive(Clone, Debug)]
pub struct SrOutput {
    pub image: Image,
    /// Final reduced kernel, when the method estimates one.
    pub kernel: Option<ReducedKernel>,
}

/// A complete super-resolution method usable by the benchmark and the CLI.
pub trait SrMethod: Sync {
    fn name(&self) -> &str;
    fn super_resolve(&self, lr: &Image, basis: &PcaBasis, scale: usize, iterations: usize) -> Result<SrOutput>;
}

/// Bicubic upscaling; the sanity baseline column.
#[derive(Clone, Copy, Debug, Default)]
pub struct BicubicMethod;

impl SrMethod for BicubicMethod {
    fn name(&self) -> &str {
        "bicubic"
    }

    fn super_resolve(&self, lr: &Image, _: &PcaBasis, scale: usize, _: usize) -> Result<SrOutput> {
        Ok(SrOutput {
            image: bicubic_resize(lr, scale as f64)?,
            kernel: None,
        })
    }
}

/// Alternation with the least-squares estimator and CG restorer.
#[derive(Clone, Debug, Default)]
pub struct ClassicalMethod {
    pub estimator: LsEstimator,
    pub restorer: CgRestorer,
}

impl SrMethod for ClassicalMethod {
    fn name(&self) -> &str {
        "classical"
    }

    fn super_resolve(&self, lr: &Image, basis: &PcaBasis, scale: usize, iterations: usize) -> Result<SrOutput> {
        let trace = run_alternation(lr, basis, &self.estimator, &self.restorer, scale, iterations)?;
        let last = trace.steps.into_iter().last().expect("at least one iteration");
        Ok(SrOutput {
            image: last.image,
            kernel: Some(last.kernel),
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub scale: usize,
    pub iterations: usize,
    /// AWGN standard deviation in code units added to each LR image.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Record wall time per row. When false the `ms` column is written as 0
    /// so reports are byte-for-byte reproducible.
    pub timing: bool,
}

impl BenchConfig {
    pub fn new(scale: usize, iterations: usize) -> Self {
        Self {
            scale,
            iterations,
            noise_sigma: 0.0,
            seed: 0,
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub image: String,
    pub kernel: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// NaN when the method does not estimate a kernel.
    pub kernel_l1: f64,
    pub ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub method: String,
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl BenchReport {
    fn ok_rows(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        mean_finite(self.ok_rows().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean_finite(self.ok_rows().map(|r| r.ssim))
    }

    pub fn mean_kernel_l1(&self) -> Option<f64> {
        mean_finite(self.ok_rows().map(|r| r.kernel_l1))
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.ok_rows().count()
    }

    /// `image,kernel,psnr_db,ssim,kernel_l1,ms`; failed rows carry `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,kernel,psnr_db,ssim,kernel_l1,ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.image,
                r.kernel,
                fmt_metric(r.psnr_db),
                fmt_metric(r.ssim),
                fmt_metric(r.kernel_l1),
                r.ms
            );
        }
        out
    }

    /// Aggregate means plus an echo of the configuration.
    pub fn to_json(&self) -> serde_json::Value {
        let failures: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| {
                    serde_json::json!({ "image": r.image, "kernel": r.kernel, "error": e })
                })
            })
            .collect();
        serde_json::json!({
            "method": self.method,
            "rows": self.rows.len(),
            "failed": self.failures(),
            "mean_psnr_db": self.mean_psnr(),
            "mean_ssim": self.mean_ssim(),
            "mean_kernel_l1": self.mean_kernel_l1(),
            "mean_ms": mean_finite(self.ok_rows().map(|r| r.ms)),
            "config": {
                "scale": self.config.scale,
                "iterations": self.config.iterations,
                "noise_sigma": self.config.noise_sigma,
                "seed": self.config.seed,
                "timing": self.config.timing,
            },
            "failures": failures,
        })
    }

    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json_path = csv_path.with_extension("json");
        let json = serde_json::to_string_pretty(&self.to_json()).expect("serializable");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

/// Lists `*.png` and `*.txt` images in `dir`, sorted by file name.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| ["png", "txt"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("no images found in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            load_image(&p).map(|img| (id, img))
        })
        .collect()
}

fn bench_one(
    hr: &Image,
    kernel: &BlurKernel,
    method: &dyn SrMethod,
    basis: &PcaBasis,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<(f64, f64, f64, f64)> {
    let hr = modcrop(hr, cfg.scale)?;
    let deg = DegradationConfig::noiseless(cfg.scale).with_noise(cfg.noise_sigma, seed);
    let lr = degrade(&hr, kernel, &deg)?;
    let start = Instant::now();
    let out = method.super_resolve(&lr, basis, cfg.scale, cfg.iterations)?;
    let ms = if cfg.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let psnr = psnr_y(&out.image, &hr, cfg.scale)?;
    let ssim = ssim_y(&out.image, &hr)?;
    let kl1 = match &out.kernel {
        Some(k) => kernel_l1_reduced(k, kernel, basis)?,
        None => f64::NAN,
    };
    Ok((psnr, ssim, kl1, ms))
}

/// Scores `method` on every `(image, kernel)` pair. Rows are ordered by image
/// then kernel; a failing pair is recorded and the run continues.
pub fn run_benchmark_images(
    images: &[(String, Image)],
    kernels: &[(String, BlurKernel)],
    method: &dyn SrMethod,
    basis: &PcaBasis,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if images.is_empty() || kernels.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs images and kernels".into()));
    }
    // Pairs run on the current rayon pool; collecting an indexed iterator
    // keeps the image-then-kernel order whatever the thread count.
    let rows = (0..images.len() * kernels.len())
        .into_par_iter()
        .map(|idx| {
            let ((image_id, hr), (kernel_id, kernel)) = (&images[idx / kernels.len()], &kernels[idx % kernels.len()]);
            let seed = cfg.seed.wrapping_add(idx as u64);
            match bench_one(hr, kernel, method, basis, cfg, seed) {
                Ok((psnr_db, ssim, kernel_l1, ms)) => BenchRow {
                    image: image_id.clone(),
                    kernel: kernel_id.clone(),
                    psnr_db,
                    ssim,
                    kernel_l1,
                    ms,
                    error: None,
                },
                Err(e) => {
                    log::warn!("{image_id} / {kernel_id}: {e}");
                    BenchRow {
                        image: image_id.clone(),
                        kernel: kernel_id.clone(),
                        psnr_db: f64::NAN,
                        ssim: f64::NAN,
                        kernel_l1: f64::NAN,
                        ms: 0.0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(BenchReport {
        method: method.name().to_owned(),
        config: cfg.clone(),
        rows,
    })
}

pub fn run_benchmark(
    hr_dir: impl AsRef<Path>,
    kernels: &[(String, BlurKernel)],
    method: &dyn SrMethod,
    basis: &PcaBasis,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let images = load_image_dir(hr_dir)?;
    run_benchmark_images(&images, kernels, method, basis, cfg)
}

/// Gaussian8 kernels labelled by width, e.g. `g8_1.80`.
pub fn named_gaussian8(scale: usize) -> Result<Vec<(String, BlurKernel)>> {
    let widths = crate::metrics::gaussian8_widths(scale)?;
    let kernels = crate::metrics::gaussian8(scale)?;
    Ok(widths
        .into_iter()
        .zip(kernels)
        .map(|(w, k)| (format!("g8_{w:.2}"), k))
        .collect())
}
