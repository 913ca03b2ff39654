//! Image similarity and budget metrics. Pixels are assumed to lie in `[0, 1]`.

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Standard five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const DEFAULT_MS_SSIM_SCALES: usize = 3;

/// One evaluation row: reconstruction quality toward the target, rate, budget used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub bpp: f64,
    pub delta_linf: f64,
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    a.expect_shape(b, "metric operands")
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

/// Peak signal-to-noise ratio with peak 1, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_tensor(a.tensor(), b.tensor())
}

pub fn psnr_tensor(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn linf(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data().iter().zip(b.data()).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance-contrast-structure and contrast-structure terms of one plane.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64], k1: f64, k2: f64) -> (f64, f64) {
    let c1 = k1 * k1;
    let c2 = k2 * k2;
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, _, _) = filter_valid(a, h, w, win);
    let (mu_b, _, _) = filter_valid(b, h, w, win);
    let (aa, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, win);
    let (bb, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, win);
    let (ab, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, win);
    let n = mu_a.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.dims() {
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(format!("expected [C, H, W], got {d:?}"))),
    }
}

/// Mean structural similarity with an 11-tap Gaussian window (sigma 1.5),
/// averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a.tensor(), b.tensor(), SSIM_WINDOW, SSIM_K1, SSIM_K2)
}

pub fn ssim_with(a: &Tensor, b: &Tensor, window: usize, k1: f64, k2: f64) -> Result<f64> {
    check_same(a, b)?;
    let (c, h, w) = planes(a)?;
    if h < window || w < window {
        return Err(Error::invalid(format!("image {h}x{w} smaller than SSIM window {window}")));
    }
    let win = gaussian_window(window, SSIM_SIGMA);
    let plane = h * w;
    let total: f64 = (0..c)
        .map(|ch| {
            let r = ch * plane..(ch + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, &win, k1, k2).0
        })
        .sum();
    Ok(total / c as f64)
}

fn downsample2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM over `scales` dyadic scales using the leading entries
/// of the standard weight vector, renormalized to sum to one. Negative
/// per-scale terms are clamped to zero.
pub fn ms_ssim(a: &Image, b: &Image, scales: usize) -> Result<f64> {
    ms_ssim_tensor(a.tensor(), b.tensor(), scales)
}

pub fn ms_ssim_tensor(a: &Tensor, b: &Tensor, scales: usize) -> Result<f64> {
    check_same(a, b)?;
    let (c, h, w) = planes(a)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::invalid(format!("MS-SSIM scales must be in 1..=5, got {scales}")));
    }
    let need = SSIM_WINDOW << (scales - 1);
    if h < need || w < need {
        return Err(Error::invalid(format!(
            "image {h}x{w} too small for {scales} MS-SSIM scales (needs {need})"
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let mut pa = a.data()[ch * plane..(ch + 1) * plane].to_vec();
        let mut pb = b.data()[ch * plane..(ch + 1) * plane].to_vec();
        let (mut hh, mut ww) = (h, w);
        let mut value = 1.0;
        for (s, &wt) in weights.iter().enumerate() {
            let (full, cs) = ssim_plane(&pa, &pb, hh, ww, &win, SSIM_K1, SSIM_K2);
            let term = if s + 1 == scales { full } else { cs };
            value *= term.max(0.0).powf(wt / wsum);
            if s + 1 < scales {
                let (na, nh, nw) = downsample2(&pa, hh, ww);
                let (nb, _, _) = downsample2(&pb, hh, ww);
                pa = na;
                pb = nb;
                hh = nh;
                ww = nw;
            }
        }
        total += value;
    }
    Ok(total / c as f64)
}
