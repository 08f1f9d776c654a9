//! Forward and adjoint kernels for the array primitives.
//!
//! Layouts are `(batch, channels, time)` row-major. All loops run in a fixed
//! index order so results are bit-reproducible.

/// `y[t] += w * x[t + shift]` over every `t` where both indices are valid.
#[inline]
fn shifted_axpy(y: &mut [f64], x: &[f64], w: f64, shift: isize) {
    let n = y.len() as isize;
    let lo = (-shift).max(0);
    let hi = (n - shift).min(n);
    if lo >= hi {
        return;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let xs = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    for (yv, &xv) in y[lo..hi].iter_mut().zip(xs) {
        *yv += w * xv;
    }
}

/// `sum_t a[t] * b[t + shift]` over valid indices.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let n = a.len() as isize;
    let lo = (-shift).max(0);
    let hi = (n - shift).min(n);
    if lo >= hi {
        return 0.0;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let bs = &b[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    a[lo..hi].iter().zip(bs).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        ((self.kernel - 1) / 2) as isize
    }
}

/// Same-padded stride-1 convolution. `w` is `(c_out, c_in, kernel)`.
pub fn conv1d_forward(d: ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let t = d.len;
    let p = d.pad();
    let mut y = vec![0.0; d.batch * d.c_out * t];
    for bi in 0..d.batch {
        for o in 0..d.c_out {
            let yrow = &mut y[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
            yrow.fill(b[o]);
            for i in 0..d.c_in {
                let xrow = &x[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                for k in 0..d.kernel {
                    let wv = w[(o * d.c_in + i) * d.kernel + k];
                    shifted_axpy(yrow, xrow, wv, k as isize - p);
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv1d_forward`]; accumulates into the provided buffers.
pub fn conv1d_backward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let t = d.len;
    let p = d.pad();
    if let Some(db) = db {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let row = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                db[o] += row.iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = dw {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                for i in 0..d.c_in {
                    let xrow = &x[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                    for k in 0..d.kernel {
                        dw[(o * d.c_in + i) * d.kernel + k] +=
                            shifted_dot(dyrow, xrow, k as isize - p);
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                for i in 0..d.c_in {
                    let dxrow = &mut dx[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                    for k in 0..d.kernel {
                        let wv = w[(o * d.c_in + i) * d.kernel + k];
                        shifted_axpy(dxrow, dyrow, wv, p - k as isize);
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 transposed convolution. `w` is `(c_in, c_out, kernel)`.
pub fn conv_transpose1d_forward(d: ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let t = d.len;
    let p = d.pad();
    let mut y = vec![0.0; d.batch * d.c_out * t];
    for bi in 0..d.batch {
        for o in 0..d.c_out {
            let yrow = &mut y[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
            yrow.fill(b[o]);
            for i in 0..d.c_in {
                let xrow = &x[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                for k in 0..d.kernel {
                    let wv = w[(i * d.c_out + o) * d.kernel + k];
                    shifted_axpy(yrow, xrow, wv, p - k as isize);
                }
            }
        }
    }
    y
}

pub fn conv_transpose1d_backward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let t = d.len;
    let p = d.pad();
    if let Some(db) = db {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let row = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                db[o] += row.iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = dw {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                for i in 0..d.c_in {
                    let xrow = &x[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                    for k in 0..d.kernel {
                        dw[(i * d.c_out + o) * d.kernel + k] +=
                            shifted_dot(dyrow, xrow, p - k as isize);
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for bi in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(bi * d.c_out + o) * t..(bi * d.c_out + o + 1) * t];
                for i in 0..d.c_in {
                    let dxrow = &mut dx[(bi * d.c_in + i) * t..(bi * d.c_in + i + 1) * t];
                    for k in 0..d.kernel {
                        let wv = w[(i * d.c_out + o) * d.kernel + k];
                        shifted_axpy(dxrow, dyrow, wv, k as isize - p);
                    }
                }
            }
        }
    }
}

/// `(m, k) x (k, n) -> (m, n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Accumulates `da += dc * b^T` and `db += a^T * dc`.
pub fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    (m, k, n): (usize, usize, usize),
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                da[i * k + p] += dcrow
                    .iter()
                    .zip(&b[p * n..(p + 1) * n])
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (dv, &g) in db[p * n..(p + 1) * n].iter_mut().zip(dcrow) {
                    *dv += av * g;
                }
            }
        }
    }
}

/// Linear (align-corners false) or nearest factor-2 upsampling over the last axis.
pub fn upsample2_forward(x: &[f64], rows: usize, len: usize, linear: bool) -> Vec<f64> {
    let out_len = 2 * len;
    let mut y = vec![0.0; rows * out_len];
    for r in 0..rows {
        let xr = &x[r * len..(r + 1) * len];
        let yr = &mut y[r * out_len..(r + 1) * out_len];
        for j in 0..out_len {
            yr[j] = if linear {
                let (i0, i1, w1) = linear_source(j, len);
                (1.0 - w1) * xr[i0] + w1 * xr[i1]
            } else {
                xr[j / 2]
            };
        }
    }
    y
}

pub fn upsample2_backward(dy: &[f64], dx: &mut [f64], rows: usize, len: usize, linear: bool) {
    let out_len = 2 * len;
    for r in 0..rows {
        let dyr = &dy[r * out_len..(r + 1) * out_len];
        let dxr = &mut dx[r * len..(r + 1) * len];
        for j in 0..out_len {
            if linear {
                let (i0, i1, w1) = linear_source(j, len);
                dxr[i0] += (1.0 - w1) * dyr[j];
                dxr[i1] += w1 * dyr[j];
            } else {
                dxr[j / 2] += dyr[j];
            }
        }
    }
}

/// Source indices and weight of output position `j` for factor-2 linear
/// interpolation with half-pixel centers.
#[inline]
fn linear_source(j: usize, len: usize) -> (usize, usize, f64) {
    let src = ((j as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims {
            batch: 1,
            c_in: 1,
            c_out: 1,
            len: 4,
            kernel: 3,
        };
        let y = conv1d_forward(d, &[1., 2., 3., 4.], &[0., 1., 0.], &[0.5]);
        assert_eq!(y, vec![1.5, 2.5, 3.5, 4.5]);
        // shift-right kernel picks the previous sample, zero padded
        let y = conv1d_forward(d, &[1., 2., 3., 4.], &[1., 0., 0.], &[0.0]);
        assert_eq!(y, vec![0., 1., 2., 3.]);
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with matching weights and no bias
        let d = ConvDims {
            batch: 1,
            c_in: 2,
            c_out: 3,
            len: 5,
            kernel: 3,
        };
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..15).map(|i| (i as f64 * 0.71).cos()).collect();
        let w: Vec<f64> = (0..18).map(|i| (i as f64 * 1.3).sin()).collect();
        let cx = conv1d_forward(d, &x, &w, &[0.0; 3]);
        // conv weight (c_out=3, c_in=2, k) read as transpose weight (c_in'=3, c_out'=2, k)
        let dt = ConvDims {
            c_in: 3,
            c_out: 2,
            ..d
        };
        let ty = conv_transpose1d_forward(dt, &y, &w, &[0.0; 2]);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn linear_upsample_values() {
        let y = upsample2_forward(&[0., 4.], 1, 2, true);
        assert_eq!(y, vec![0., 1., 3., 4.]);
        let y = upsample2_forward(&[0., 4.], 1, 2, false);
        assert_eq!(y, vec![0., 0., 4., 4.]);
    }

    #[test]
    fn matmul_small() {
        let c = matmul(&[1., 2., 3., 4.], &[5., 6., 7., 8.], 2, 2, 2);
        assert_eq!(c, vec![19., 22., 43., 50.]);
    }
}
