//! Learning-free solvers for the two alternating subproblems.
//!
//! Kernel estimation is linear least squares: the degradation is linear in
//! the kernel, so the LR image is `A·vec(k)` with column `j` of `A` being the
//! HR estimate degraded by the unit stencil `e_j`. Restoration minimizes
//! `‖y − D_k x‖² + λ‖∇x‖²` with matrix-free conjugate gradients on the normal
//! equations. Both minimize L2 surrogates of the L1 data terms; the engine
//! still reports L1 residuals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::degradation::{
    blur_decimate_adjoint_plane, blur_decimate_plane, BlurKernel, Boundary,
};
use crate::engine::{ImageRestorer, KernelEstimator};
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, Image};
use crate::kernel_space::{reconstruct, PcaBasis, ReducedKernel};
use crate::rng::{rng_for, streams};

#[derive(Clone, Debug, PartialEq)]
pub struct LsEstimatorConfig {
    /// Tikhonov weight on the unknowns.
    pub ridge: f64,
    /// Keep the kernel on the probability simplex: the full-tap fit is
    /// projected after solving, the reduced fit is solved under the
    /// constraint that every expanded tap is non-negative.
    pub simplex_project: bool,
}

impl Default for LsEstimatorConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            simplex_project: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgRestorerConfig {
    /// Weight of the squared-gradient prior.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when `‖r‖ / ‖b‖` drops below this.
    pub tol: f64,
}

impl Default for CgRestorerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_iters: 200,
            tol: 1e-8,
        }
    }
}

impl CgRestorerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid CG configuration {self:?}")));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{k ≥ 0, Σk = 1}` (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn check_pair(lr: &Image, sr: &Image, scale: usize) -> Result<()> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    let (c, h, w) = lr.dims();
    if sr.dims() != (c, h * scale, w * scale) {
        return Err(Error::ShapeMismatch(format!(
            "SR image {:?} is not the LR image {:?} scaled by {scale}",
            sr.dims(),
            lr.dims()
        )));
    }
    Ok(())
}

/// Errors when every sampling window of `sr` is constant, i.e. all columns of
/// the kernel design matrix coincide.
fn check_identifiable(sr: &Image, side: usize, scale: usize) -> Result<()> {
    let (c, h, w) = sr.dims();
    let r = side as i64 / 2;
    let first = sr.get(0, 0, 0);
    let tol = 1e-12 * sr.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for ch in 0..c {
        for i in (0..h).step_by(scale) {
            for j in (0..w).step_by(scale) {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let y = (i as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let x = (j as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        if (sr.get(ch, y, x) - sr.get(ch, i, j)).abs() > tol {
                            return Ok(());
                        }
                    }
                }
            }
        }
    }
    Err(Error::Degenerate(format!(
        "SR estimate is locally constant (value {first}); all kernel columns are identical and the kernel is unidentifiable"
    )))
}

fn check_enough_pixels(lr: &Image, unknowns: usize) -> Result<()> {
    if lr.data().len() < unknowns {
        return Err(Error::InvalidArgument(format!(
            "{} LR samples cannot determine {unknowns} kernel unknowns",
            lr.data().len()
        )));
    }
    Ok(())
}

/// Solves `(GᵀG + ridge·I) u = Gᵀ t` by Cholesky.
fn ridge_solve(design: &DMatrix<f64>, target: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let mut normal = design.transpose() * design;
    for i in 0..normal.nrows() {
        normal[(i, i)] += ridge;
    }
    let rhs = design.transpose() * target;
    let chol = normal.cholesky().ok_or_else(|| {
        Error::Degenerate("kernel normal equations are singular beyond ridge rescue".into())
    })?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("kernel solve produced non-finite values".into()));
    }
    Ok(sol)
}

/// Least-squares kernel fit over all `side²` taps.
pub fn estimate_kernel_ls(
    lr: &Image,
    sr: &Image,
    side: usize,
    cfg: &LsEstimatorConfig,
    scale: usize,
) -> Result<BlurKernel> {
    check_pair(lr, sr, scale)?;
    if side.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("side must be odd, got {side}")));
    }
    let d = side * side;
    check_enough_pixels(lr, d)?;
    check_identifiable(sr, side, scale)?;

    let (c, h, w) = lr.dims();
    let (hh, hw) = (h * scale, w * scale);
    let r = (side / 2) as i64;
    let rows = c * h * w;
    // Column (p, q) holds sr sampled at (s·i − (p − r), s·j − (q − r)).
    let design = DMatrix::from_fn(rows, d, |row, col| {
        let (ch, rem) = (row / (h * w), row % (h * w));
        let (i, j) = (rem / w, rem % w);
        let (p, q) = ((col / side) as i64, (col % side) as i64);
        let y = ((scale * i) as i64 - (p - r)).clamp(0, hh as i64 - 1) as usize;
        let x = ((scale * j) as i64 - (q - r)).clamp(0, hw as i64 - 1) as usize;
        sr.get(ch, y, x)
    });
    let target = DVector::from_column_slice(lr.data());
    let sol = ridge_solve(&design, &target, cfg.ridge)?;
    let raw: Vec<f64> = sol.iter().copied().collect();
    if cfg.simplex_project {
        BlurKernel::new(side, project_simplex(&raw))
    } else {
        BlurKernel::normalized(side, raw)
    }
}

/// Least-squares fit restricted to the PCA subspace: `k = mean + Cᵀc`.
pub fn estimate_kernel_reduced(
    lr: &Image,
    sr: &Image,
    basis: &PcaBasis,
    cfg: &LsEstimatorConfig,
    scale: usize,
) -> Result<ReducedKernel> {
    check_pair(lr, sr, scale)?;
    check_enough_pixels(lr, basis.dim())?;
    check_identifiable(sr, basis.side(), scale)?;

    let side = basis.side();
    let degrade_with = |stencil: &[f64]| -> Vec<f64> {
        let (c, h, w) = sr.dims();
        (0..c)
            .flat_map(|ch| {
                blur_decimate_plane(sr.plane(ch), h, w, stencil, side, scale, Boundary::Replicate)
            })
            .collect()
    };
    let offset = degrade_with(basis.mean());
    let columns: Vec<Vec<f64>> = (0..basis.dim()).map(|j| degrade_with(basis.component(j))).collect();
    let rows = lr.data().len();
    let design = DMatrix::from_fn(rows, basis.dim(), |row, col| columns[col][row]);
    let target = DVector::from_iterator(rows, lr.data().iter().zip(&offset).map(|(y, o)| y - o));
    let sol = if cfg.simplex_project {
        nonneg_ridge_solve(&design, &target, cfg.ridge, basis)?
    } else {
        ridge_solve(&design, &target, cfg.ridge)?
    };
    ReducedKernel::new(sol.iter().copied().collect())
}

/// Ridge least squares over PCA coordinates `r` subject to
/// `mean + Σ r_j·c_j ≥ 0` tap by tap.
///
/// Reduced to a least-distance problem through the Cholesky factor of the
/// normal matrix and solved exactly by non-negative least squares.
fn nonneg_ridge_solve(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    ridge: f64,
    basis: &PcaBasis,
) -> Result<DVector<f64>> {
    let m = basis.dim();
    let taps = basis.side() * basis.side();
    let mut normal = design.transpose() * design;
    for i in 0..m {
        normal[(i, i)] += ridge;
    }
    let chol = normal.cholesky().ok_or_else(|| {
        Error::Degenerate("kernel normal equations are singular beyond ridge rescue".into())
    })?;
    let unconstrained = chol.solve(&(design.transpose() * target));
    // G r ≥ h with G = components as rows of taps, h = −mean.
    let g = DMatrix::from_fn(taps, m, |t, j| basis.component(j)[t]);
    let slack = &g * &unconstrained + DVector::from_column_slice(basis.mean());
    if slack.iter().all(|v| *v >= 0.0) {
        return Ok(unconstrained);
    }
    // With normal = L·Lᵀ and z = Lᵀ(r − r₀): minimize ‖z‖ s.t. G L⁻ᵀ z ≥ −slack.
    let l = chol.l();
    let lt = l.transpose();
    let g_hat = l
        .solve_lower_triangular(&g.transpose())
        .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))?
        .transpose();
    let z = least_distance(&g_hat, &(-slack))?;
    let step = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))?;
    let sol = unconstrained + step;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("kernel solve produced non-finite values".into()));
    }
    Ok(sol)
}

/// Minimum-norm `z` with `g·z ≥ h`, via non-negative least squares on the
/// dual.
fn least_distance(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    let (q, n) = g.shape();
    let e = DMatrix::from_fn(n + 1, q, |i, j| if i < n { g[(j, i)] } else { h[j] });
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f);
    let rho = &e * &u - &f;
    if rho[n].abs() < 1e-14 {
        return Err(Error::Degenerate("non-negative kernel constraints are infeasible".into()));
    }
    Ok(DVector::from_fn(n, |i, _| -rho[i] / rho[n]))
}

/// Lawson–Hanson active-set non-negative least squares.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .expect("both SVD factors requested");
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };
    for _ in 0..3 * n {
        let w = a.transpose() * (b - a * &x);
        let Some(t) = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]))
        else {
            break;
        };
        passive[t] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| s[j] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..n)
                .filter(|&j| passive[j] && s[j] <= 0.0)
                .map(|j| x[j] / (x[j] - s[j]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Restoration
// ---------------------------------------------------------------------------

/// The blur-and-decimate operator `D_k` and its adjoint on whole images.
#[derive(Clone, Copy)]
pub struct DegradationOperator<'a> {
    pub stencil: &'a [f64],
    pub side: usize,
    pub scale: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl DegradationOperator<'_> {
    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.channels * (self.height / self.scale) * (self.width / self.scale)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.height * self.width;
        x.chunks(n)
            .flat_map(|plane| {
                blur_decimate_plane(
                    plane,
                    self.height,
                    self.width,
                    self.stencil,
                    self.side,
                    self.scale,
                    Boundary::Replicate,
                )
            })
            .collect()
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n = (self.height / self.scale) * (self.width / self.scale);
        y.chunks(n)
            .flat_map(|plane| {
                blur_decimate_adjoint_plane(
                    plane,
                    self.height,
                    self.width,
                    self.stencil,
                    self.side,
                    self.scale,
                    Boundary::Replicate,
                )
            })
            .collect()
    }
}

/// Forward differences with replicate boundary (last difference is zero),
/// returned as `(horizontal, vertical)` for every plane.
fn gradient(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    for (p, plane) in x.chunks(h * w).enumerate() {
        let off = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let v = plane[i * w + j];
                if j + 1 < w {
                    gx[off + i * w + j] = plane[i * w + j + 1] - v;
                }
                if i + 1 < h {
                    gy[off + i * w + j] = plane[(i + 1) * w + j] - v;
                }
            }
        }
    }
    (gx, gy)
}

/// `∇ᵀ(gx, gy)`.
fn gradient_adjoint(gx: &[f64], gy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; gx.len()];
    for p in 0..gx.len() / (h * w) {
        let off = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let t = off + i * w + j;
                if j + 1 < w {
                    out[t] -= gx[t];
                    out[t + 1] += gx[t];
                }
                if i + 1 < h {
                    out[t] -= gy[t];
                    out[t + w] += gy[t];
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of [`restore_cg`].
#[derive(Clone, Debug)]
pub struct CgOutcome {
    /// Final iterate; the CG objective is monotone, so this is also the best.
    pub image: Image,
    pub iterations: usize,
    /// False when `max_iters` was reached before `tol`.
    pub converged: bool,
    pub rel_residual: f64,
    /// `‖y − D_k x‖² + λ‖∇x‖²` at the initial guess and after every iteration.
    pub objective: Vec<f64>,
}

/// Value of the restoration objective at `x`.
pub fn restoration_objective(lr: &Image, k: &BlurKernel, lambda: f64, scale: usize, x: &Image) -> Result<f64> {
    check_pair(lr, x, scale)?;
    let (c, h, w) = x.dims();
    let op = DegradationOperator {
        stencil: k.weights(),
        side: k.side(),
        scale,
        channels: c,
        height: h,
        width: w,
    };
    let dx = op.apply(x.data());
    let data: f64 = dx.iter().zip(lr.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let (gx, gy) = gradient(x.data(), h, w);
    Ok(data + lambda * (dot(&gx, &gx) + dot(&gy, &gy)))
}

/// Minimizes `‖y − D_k x‖² + λ‖∇x‖²` by conjugate gradients, starting from
/// the bicubic upscale of `lr`.
pub fn restore_cg(lr: &Image, k: &BlurKernel, cfg: &CgRestorerConfig, scale: usize) -> Result<CgOutcome> {
    cfg.validate()?;
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    let (c, lh, lw) = lr.dims();
    let (h, w) = (lh * scale, lw * scale);
    let op = DegradationOperator {
        stencil: k.weights(),
        side: k.side(),
        scale,
        channels: c,
        height: h,
        width: w,
    };
    let apply_normal = |x: &[f64]| -> Vec<f64> {
        let mut out = op.adjoint(&op.apply(x));
        if cfg.lambda > 0.0 {
            let (gx, gy) = gradient(x, h, w);
            let reg = gradient_adjoint(&gx, &gy, h, w);
            out.iter_mut().zip(&reg).for_each(|(o, r)| *o += cfg.lambda * r);
        }
        out
    };

    let y = lr.data();
    let yy = dot(y, y);
    let b = op.adjoint(y);
    let b_norm = dot(&b, &b).sqrt();
    let mut x = bicubic_resize(lr, scale as f64)?.into_data();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            image: Image::new(c, h, w, x)?,
            iterations: 0,
            converged: true,
            rel_residual: 0.0,
            objective: vec![yy],
        });
    }

    let ax = apply_normal(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    // J(x) = ‖y‖² − bᵀx − rᵀx with r = b − Ax.
    let objective_at = |x: &[f64], r: &[f64]| yy - dot(&b, x) - dot(r, x);
    let mut objective = vec![objective_at(&x, &r)];
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut rel = rr.sqrt() / b_norm;
    while rel > cfg.tol && iterations < cfg.max_iters {
        let ap = apply_normal(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_next;
        iterations += 1;
        rel = rr.sqrt() / b_norm;
        objective.push(objective_at(&x, &r));
    }
    let converged = rel <= cfg.tol;
    if !converged {
        log::warn!(
            "CG stopped after {iterations} iterations at relative residual {rel:.3e} (tol {:.1e})",
            cfg.tol
        );
    }
    Ok(CgOutcome {
        image: Image::new(c, h, w, x)?,
        iterations,
        converged,
        rel_residual: rel,
        objective,
    })
}

/// Worst relative adjoint mismatch `|⟨Au, v⟩ − ⟨u, Aᵀv⟩| / (‖u‖‖v‖)` over
/// random trials.
pub fn adjoint_mismatch(
    forward: impl Fn(&[f64]) -> Vec<f64>,
    adjoint: impl Fn(&[f64]) -> Vec<f64>,
    input_len: usize,
    output_len: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = rng_for(seed, streams::PROBE);
    (0..trials)
        .map(|_| {
            let u: Vec<f64> = (0..input_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..output_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&forward(&u), &v);
            let rhs = dot(&u, &adjoint(&v));
            (lhs - rhs).abs() / (dot(&u, &u).sqrt() * dot(&v, &v).sqrt())
        })
        .fold(0.0, f64::max)
}

/// Adjoint consistency of `D_k` at HR size `dims = (height, width)`, which
/// must be divisible by `scale`.
pub fn adjoint_check(k: &BlurKernel, scale: usize, dims: (usize, usize)) -> Result<f64> {
    let (h, w) = dims;
    if scale == 0 || h == 0 || w == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "dims {h}x{w} must be positive multiples of scale {scale}"
        )));
    }
    let op = DegradationOperator {
        stencil: k.weights(),
        side: k.side(),
        scale,
        channels: 1,
        height: h,
        width: w,
    };
    Ok(adjoint_mismatch(
        |u| op.apply(u),
        |v| op.adjoint(v),
        op.input_len(),
        op.output_len(),
        20,
        0,
    ))
}

// ---------------------------------------------------------------------------
// Engine contracts
// ---------------------------------------------------------------------------

/// Reduced-space least-squares estimator.
#[derive(Clone, Debug, Default)]
pub struct LsEstimator {
    pub config: LsEstimatorConfig,
}

impl KernelEstimator for LsEstimator {
    fn estimate(&self, lr: &Image, sr: &Image, basis: &PcaBasis, scale: usize) -> Result<ReducedKernel> {
        estimate_kernel_reduced(lr, sr, basis, &self.config, scale)
    }
}

/// Conjugate-gradient restorer driven by a reduced kernel.
#[derive(Clone, Debug, Default)]
pub struct CgRestorer {
    pub config: CgRestorerConfig,
}

impl ImageRestorer for CgRestorer {
    fn restore(&self, lr: &Image, kernel: &ReducedKernel, basis: &PcaBasis, scale: usize) -> Result<Image> {
        let k = reconstruct(basis, kernel)?;
        Ok(restore_cg(lr, &k, &self.config, scale)?.image)
    }
}
