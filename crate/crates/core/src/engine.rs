//! The unfolded alternating loop.
//!
//! Starting from the Dirac kernel (in reduced coordinates), the engine calls
//! the restorer with the current kernel, then the estimator with the new
//! restored image, `T` times. Each step of the returned trace records the
//! kernel, the image and the L1 data residual of the pair.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::degradation::{blur_decimate, BlurKernel, Boundary};
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, Image};
use crate::kernel_space::{dirac_coeffs, reconstruct, PcaBasis, ReducedKernel};

pub const DEFAULT_ITERATIONS: usize = 4;

/// Solves the kernel subproblem: predict reduced kernel coordinates for the
/// LR image given the current SR estimate.
pub trait KernelEstimator {
    fn estimate(&self, lr: &Image, sr: &Image, basis: &PcaBasis, scale: usize) -> Result<ReducedKernel>;
}

/// Solves the image subproblem: restore an HR image `scale` times larger than
/// `lr` given the current kernel estimate.
pub trait ImageRestorer {
    fn restore(&self, lr: &Image, kernel: &ReducedKernel, basis: &PcaBasis, scale: usize) -> Result<Image>;
}

impl<F> KernelEstimator for F
where
    F: Fn(&Image, &Image, &PcaBasis, usize) -> Result<ReducedKernel>,
{
    fn estimate(&self, lr: &Image, sr: &Image, basis: &PcaBasis, scale: usize) -> Result<ReducedKernel> {
        self(lr, sr, basis, scale)
    }
}

impl<F> ImageRestorer for F
where
    F: Fn(&Image, &ReducedKernel, &PcaBasis, usize) -> Result<Image>,
{
    fn restore(&self, lr: &Image, kernel: &ReducedKernel, basis: &PcaBasis, scale: usize) -> Result<Image> {
        self(lr, kernel, basis, scale)
    }
}

/// Which module runs first in each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Order {
    /// `x_i = R(k_{i-1})`, then `k_i = E(x_i)`, from `k_0 = Dirac`.
    #[default]
    RestorerFirst,
    /// `k_i = E(x_{i-1})`, then `x_i = R(k_i)`, from `x_0 = bicubic(y)`.
    EstimatorFirst,
}

#[derive(Clone, Debug)]
pub struct AlternationOptions {
    pub iterations: usize,
    pub order: Order,
}

impl Default for AlternationOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            order: Order::RestorerFirst,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternationStep {
    pub kernel: ReducedKernel,
    pub image: Image,
    /// Mean absolute data residual of `(image, kernel)` against the LR input.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternationTrace {
    pub steps: Vec<AlternationStep>,
}

impl AlternationTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn last(&self) -> &AlternationStep {
        self.steps.last().expect("trace has at least one step")
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.residual).collect()
    }

    /// CSV with columns `iter,residual_l1,k0,k1,...`.
    pub fn to_csv(&self) -> String {
        let m = self.steps.first().map_or(0, |s| s.kernel.len());
        let mut out = String::from("iter,residual_l1");
        for j in 0..m {
            let _ = write!(out, ",k{j}");
        }
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            let _ = write!(out, "{},{:e}", i + 1, step.residual);
            for c in &step.kernel.coeffs {
                let _ = write!(out, ",{c:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean absolute difference between the noiseless degradation of `x` by `k`
/// and `y`.
pub fn data_residual(x: &Image, k: &BlurKernel, y: &Image, scale: usize) -> Result<f64> {
    let (c, h, w) = y.dims();
    if x.dims() != (c, h * scale, w * scale) {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} is not {:?} scaled by {scale}",
            x.dims(),
            y.dims()
        )));
    }
    let dx = blur_decimate(x, k.weights(), k.side(), scale, Boundary::Replicate)?;
    let total: f64 = dx.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / y.data().len() as f64)
}

/// Runs `iterations` restorer-first alternations from the Dirac kernel.
pub fn run_alternation(
    lr: &Image,
    basis: &PcaBasis,
    estimator: &dyn KernelEstimator,
    restorer: &dyn ImageRestorer,
    scale: usize,
    iterations: usize,
) -> Result<AlternationTrace> {
    let opts = AlternationOptions {
        iterations,
        order: Order::RestorerFirst,
    };
    run_alternation_with(lr, basis, estimator, restorer, scale, &opts)
}

pub fn run_alternation_with(
    lr: &Image,
    basis: &PcaBasis,
    estimator: &dyn KernelEstimator,
    restorer: &dyn ImageRestorer,
    scale: usize,
    opts: &AlternationOptions,
) -> Result<AlternationTrace> {
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    if lr.height() < basis.side() || lr.width() < basis.side() {
        return Err(Error::InvalidArgument(format!(
            "LR image {}x{} is smaller than the {}-tap kernel",
            lr.height(),
            lr.width(),
            basis.side()
        )));
    }
    let at = |iteration: usize| move |e: Error| Error::Iteration {
        iteration,
        source: Box::new(e),
    };

    let mut steps = Vec::with_capacity(opts.iterations);
    let mut kernel = dirac_coeffs(basis);
    let mut image = match opts.order {
        Order::RestorerFirst => None,
        Order::EstimatorFirst => Some(bicubic_resize(lr, scale as f64)?),
    };
    for i in 1..=opts.iterations {
        let (next_kernel, next_image) = match opts.order {
            Order::RestorerFirst => {
                let x = restorer.restore(lr, &kernel, basis, scale).map_err(at(i))?;
                let k = estimator.estimate(lr, &x, basis, scale).map_err(at(i))?;
                (k, x)
            }
            Order::EstimatorFirst => {
                let prev = image.as_ref().expect("initialized");
                let k = estimator.estimate(lr, prev, basis, scale).map_err(at(i))?;
                let x = restorer.restore(lr, &k, basis, scale).map_err(at(i))?;
                (k, x)
            }
        };
        check_step(lr, basis, scale, &next_kernel, &next_image).map_err(at(i))?;
        let residual = data_residual(&next_image, &reconstruct(basis, &next_kernel).map_err(at(i))?, lr, scale)
            .map_err(at(i))?;
        steps.push(AlternationStep {
            kernel: next_kernel.clone(),
            image: next_image.clone(),
            residual,
        });
        kernel = next_kernel;
        image = Some(next_image);
    }
    Ok(AlternationTrace { steps })
}

fn check_step(lr: &Image, basis: &PcaBasis, scale: usize, k: &ReducedKernel, x: &Image) -> Result<()> {
    if k.len() != basis.dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimator returned {} coefficients, basis has {}",
            k.len(),
            basis.dim()
        )));
    }
    let (c, h, w) = lr.dims();
    if x.dims() != (c, h * scale, w * scale) {
        return Err(Error::ShapeMismatch(format!(
            "restorer returned {:?}, expected {:?}",
            x.dims(),
            (c, h * scale, w * scale)
        )));
    }
    Ok(())
}
