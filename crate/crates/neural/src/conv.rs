//! 2-D cross-correlation with zero padding, lowered to one matrix product
//! per call via im2col.

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn cols(&self) -> usize {
        self.batch * self.out_plane()
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` for row-major operands, where `op`
/// transposes when the flag is set. `a` is `m×k` after `op`, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths were checked.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let ld = g.cols();
    let mut col = vec![0.0; g.rows() * ld];
    for b in 0..g.batch {
        for ci in 0..g.c_in {
            let src = &x[(b * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (ci * g.k + ki) * g.k + kj;
                    let dst = &mut col[row * ld + b * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst_row = &mut dst[oy * ow..][..ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let ld = g.cols();
    for b in 0..g.batch {
        for ci in 0..g.c_in {
            let dst = &mut dx[(b * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (ci * g.k + ki) * g.k + kj;
                    let src = &col[row * ld + b * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Moves `(c, batch·plane)` to `(batch, c, plane)`.
fn channels_major_to_batch_major(m: &[f64], batch: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for ch in 0..c {
        for b in 0..batch {
            out[(b * c + ch) * plane..][..plane].copy_from_slice(&m[ch * batch * plane + b * plane..][..plane]);
        }
    }
    out
}

fn batch_major_to_channels_major(t: &[f64], batch: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[ch * batch * plane + b * plane..][..plane].copy_from_slice(&t[(b * c + ch) * plane..][..plane]);
        }
    }
    out
}

/// Forward pass; `w` is `(c_out, c_in, k, k)` and `bias` has `c_out` entries.
pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let col = im2col(g, x);
    let mut y = vec![0.0; g.c_out * g.cols()];
    gemm(g.c_out, g.rows(), g.cols(), w, false, &col, false, 0.0, &mut y);
    let mut out = channels_major_to_batch_major(&y, g.batch, g.c_out, g.out_plane());
    let plane = g.out_plane();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % g.c_out];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub dbias: Vec<f64>,
}

/// Backward pass given the upstream gradient `dy` in output layout.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64], need_dx: bool) -> ConvGrads {
    let plane = g.out_plane();
    let dy_cm = batch_major_to_channels_major(dy, g.batch, g.c_out, plane);
    let col = im2col(g, x);
    let mut dw = vec![0.0; g.c_out * g.rows()];
    gemm(g.c_out, g.cols(), g.rows(), &dy_cm, false, &col, true, 0.0, &mut dw);
    let dbias = (0..g.c_out)
        .map(|c| dy_cm[c * g.cols()..][..g.cols()].iter().sum())
        .collect();
    let dx = need_dx.then(|| {
        let mut dcol = vec![0.0; g.rows() * g.cols()];
        gemm(g.rows(), g.c_out, g.cols(), w, true, &dy_cm, false, 0.0, &mut dcol);
        let mut dx = vec![0.0; g.batch * g.c_in * g.h * g.w];
        col2im(g, &dcol, &mut dx);
        dx
    });
    ConvGrads { dx, dw, dbias }
}
