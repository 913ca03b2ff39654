//! im2col-based convolution kernels shared by the forward and backward passes.

use crate::error::{Error, Result};

/// Geometry of a strided, zero-padded cross-correlation over a `[C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

fn output_extent(len: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "{axis} {len} with pad {pad} is smaller than kernel {kernel}"
        )));
    }
    let span = padded - kernel;
    if !span.is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "non-integral output {axis}: ({len} + 2*{pad} - {kernel}) / {stride}"
        )));
    }
    Ok(span / stride + 1)
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if kernel == 0 {
            return Err(Error::invalid("kernel size must be >= 1"));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_height: output_extent(height, kernel, stride, pad, "height")?,
            out_width: output_extent(width, kernel, stride, pad, "width")?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Unfolds `input` into a `[C*k*k, H'*W']` patch matrix.
    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let (h, w) = (self.height as isize, self.width as isize);
        let (oh, ow) = (self.out_height, self.out_width);
        let mut cols = vec![0.0; self.col_rows() * self.col_cols()];
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w {
                                *v = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Folds a patch matrix back, accumulating overlapping contributions into `out`.
    pub fn col2im(&self, cols: &[f64], out: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let (h, w) = (self.height as isize, self.width as isize);
        let (oh, ow) = (self.out_height, self.out_width);
        for c in 0..self.channels {
            let plane =
                &mut out[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)` of shape `k x n`,
/// all row-major. `a_t` / `b_t` mean the stored matrix is the transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_integral_output_is_rejected() {
        let err = ConvGeometry::new(3, 64, 64, 5, 2, 2).unwrap_err();
        assert!(err.to_string().contains("non-integral"));
        assert!(ConvGeometry::new(3, 64, 64, 4, 2, 1).is_ok());
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
