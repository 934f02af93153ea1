//! Linear (PCA) subspace for blur kernels.
//!
//! Kernels are vectorized row-major and centered on the sample mean; the
//! basis rows are the leading right singular vectors of the centered sample
//! matrix. Estimators predict coordinates in this subspace rather than raw
//! taps.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::degradation::{dirac, sample_training_kernel, BlurKernel, Setting};
use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

pub const DEFAULT_DIM: usize = 10;
pub const DEFAULT_FIT_SAMPLES: usize = 10_000;

const BASIS_MAGIC: &[u8; 4] = b"PCAB";

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    side: usize,
    m: usize,
    mean: Vec<f64>,
    /// `m x side²`, row-major, orthonormal rows.
    components: Vec<f64>,
}

/// Coordinates of a kernel in a [`PcaBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedKernel {
    pub coeffs: Vec<f64>,
}

impl ReducedKernel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("reduced kernel has non-finite coefficients".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(m: usize) -> Self {
        Self { coeffs: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

impl PcaBasis {
    pub fn from_parts(side: usize, m: usize, mean: Vec<f64>, components: Vec<f64>) -> Result<Self> {
        let d = side * side;
        if side.is_multiple_of(2) || m == 0 || m > d {
            return Err(Error::InvalidArgument(format!(
                "invalid basis shape: side {side}, m {m}"
            )));
        }
        if mean.len() != d || components.len() != m * d {
            return Err(Error::ShapeMismatch(format!(
                "basis buffers have {} / {} values, expected {d} / {}",
                mean.len(),
                components.len(),
                m * d
            )));
        }
        Ok(Self {
            side,
            m,
            mean,
            components,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &[f64] {
        let d = self.side * self.side;
        &self.components[j * d..(j + 1) * d]
    }

    /// Linear back-projection `mean + Cᵀc` without clamping.
    pub fn expand(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.m {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a {}-dimensional basis",
                coeffs.len(),
                self.m
            )));
        }
        let mut v = self.mean.clone();
        for (j, &c) in coeffs.iter().enumerate() {
            for (vi, ci) in v.iter_mut().zip(self.component(j)) {
                *vi += c * ci;
            }
        }
        Ok(v)
    }

    /// Coordinates of a raw vectorized stencil.
    pub fn project_raw(&self, v: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                self.component(j)
                    .iter()
                    .zip(v.iter().zip(&self.mean))
                    .map(|(c, (x, mu))| c * (x - mu))
                    .sum()
            })
            .collect()
    }
}

/// Result of [`fit_pca_with_spectrum`]: the basis and the full eigenvalue
/// spectrum of the centered scatter matrix, in descending order.
#[derive(Clone, Debug)]
pub struct PcaFit {
    pub basis: PcaBasis,
    pub spectrum: Vec<f64>,
}

impl PcaFit {
    pub fn explained_variance_ratio(&self) -> f64 {
        let total: f64 = self.spectrum.iter().map(|v| v.max(0.0)).sum();
        if total == 0.0 {
            return 1.0;
        }
        self.spectrum[..self.basis.m].iter().map(|v| v.max(0.0)).sum::<f64>() / total
    }
}

pub fn fit_pca(kernels: &[BlurKernel], m: usize) -> Result<PcaBasis> {
    fit_pca_with_spectrum(kernels, m).map(|f| f.basis)
}

pub fn fit_pca_with_spectrum(kernels: &[BlurKernel], m: usize) -> Result<PcaFit> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no kernels to fit".into()))?;
    let side = first.side();
    let d = side * side;
    if kernels.iter().any(|k| k.side() != side) {
        return Err(Error::InvalidArgument("kernels have mixed sides".into()));
    }
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("m = {m} must be in 1..={d}")));
    }
    if kernels.len() < m {
        return Err(Error::InvalidArgument(format!(
            "{} samples are fewer than m = {m}",
            kernels.len()
        )));
    }

    let n = kernels.len();
    let mut mean = vec![0.0; d];
    for k in kernels {
        for (mu, w) in mean.iter_mut().zip(k.weights()) {
            *mu += w;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| kernels[i].weights()[j] - mean[j]);
    // Right singular vectors of X are the eigenvectors of XᵀX.
    let scatter = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(scatter);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(m * d);
    for &col in &order[..m] {
        let mut row: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best })
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(row);
    }
    let spectrum = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok(PcaFit {
        basis: PcaBasis::from_parts(side, m, mean, components)?,
        spectrum,
    })
}

/// Samples `n` training kernels for `setting` with the given seed and fits an
/// `m`-dimensional basis on them.
pub fn fit_default_basis(
    setting: Setting,
    scale: usize,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<PcaFit> {
    let mut rng = rng_for(seed, streams::KERNEL);
    let kernels = (0..n)
        .map(|_| sample_training_kernel(setting, scale, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    fit_pca_with_spectrum(&kernels, m)
}

pub fn project(basis: &PcaBasis, k: &BlurKernel) -> Result<ReducedKernel> {
    if k.side() != basis.side {
        return Err(Error::ShapeMismatch(format!(
            "kernel side {} does not match basis side {}",
            k.side(),
            basis.side
        )));
    }
    Ok(ReducedKernel {
        coeffs: basis.project_raw(k.weights()),
    })
}

/// Back-projects, clamps negative taps and renormalizes.
pub fn reconstruct(basis: &PcaBasis, r: &ReducedKernel) -> Result<BlurKernel> {
    let v = basis.expand(&r.coeffs)?;
    BlurKernel::normalized(basis.side, v)
}

/// Coordinates of the Dirac kernel, the alternation's starting point.
pub fn dirac_coeffs(basis: &PcaBasis) -> ReducedKernel {
    project(basis, &dirac(basis.side).expect("basis side is odd")).expect("same side")
}

// ---------------------------------------------------------------------------
// Binary basis files
// ---------------------------------------------------------------------------

/// `PCAB`, side and m as little-endian u32, then mean and components as
/// little-endian f64, row-major.
pub fn encode_basis(basis: &PcaBasis) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * (basis.mean.len() + basis.components.len()));
    out.extend_from_slice(BASIS_MAGIC);
    out.extend_from_slice(&(basis.side as u32).to_le_bytes());
    out.extend_from_slice(&(basis.m as u32).to_le_bytes());
    for v in basis.mean.iter().chain(&basis.components) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_basis(mut bytes: &[u8]) -> std::result::Result<PcaBasis, String> {
    let mut magic = [0u8; 4];
    bytes.read_exact(&mut magic).map_err(|_| "truncated header")?;
    if &magic != BASIS_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |b: &mut &[u8]| -> std::result::Result<usize, String> {
        b.read_exact(&mut u32buf).map_err(|_| "truncated header".to_string())?;
        Ok(u32::from_le_bytes(u32buf) as usize)
    };
    let side = read_u32(&mut bytes)?;
    let m = read_u32(&mut bytes)?;
    let d = side.checked_mul(side).ok_or("side overflow")?;
    let expected = d.checked_mul(m + 1).and_then(|n| n.checked_mul(8)).ok_or("size overflow")?;
    if bytes.len() != expected {
        return Err(format!("expected {expected} payload bytes, found {}", bytes.len()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (mean, comps) = values.split_at(d);
    PcaBasis::from_parts(side, m, mean.to_vec(), comps.to_vec()).map_err(|e| e.to_string())
}

pub fn save_basis(basis: &PcaBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_basis(basis)).map_err(|e| Error::io(path, e))
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<PcaBasis> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_basis(&bytes).map_err(|r| Error::parse(path, r))
}
