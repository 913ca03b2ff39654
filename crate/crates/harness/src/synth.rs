//! Procedural stand-in corpus: smooth gradients, soft-edged shapes and a
//! faint periodic texture, optionally low-pass filtered.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ppm::Raster;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Gaussian blur sigma in pixels; 0 disables it.
    pub blur: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { width: 192, height: 128, blur: 0.0 }
    }
}

fn gaussian_blur(img: &mut [f64], h: usize, w: usize, sigma: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for vertical in [true, false] {
        let src = img.to_vec();
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for (t, k) in kernel.iter().enumerate() {
                        let d = t as isize - r;
                        let (ii, jj) = if vertical {
                            (clamp(i as isize + d, h), j)
                        } else {
                            (i, clamp(j as isize + d, w))
                        };
                        acc += k * src[c * h * w + ii * w + jj];
                    }
                    img[c * h * w + i * w + j] = acc / norm;
                }
            }
        }
    }
}

/// Planar `[3, H, W]` synthetic image in `[0, 1]`, a pure function of `seed`.
pub fn synth_planar(p: &SynthParams, seed: u64) -> Vec<f64> {
    let (h, w) = (p.height, p.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0; 3 * h * w];
    let c0: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for i in 0..h {
        for j in 0..w {
            let u = ((i as f64 / h as f64 - 0.5) * ca + (j as f64 / w as f64 - 0.5) * sa + 0.7) / 1.4;
            for c in 0..3 {
                img[c * h * w + i * w + j] = c0[c] * (1.0 - u) + c1[c] * u;
            }
        }
    }
    let shapes = rng.gen_range(3..9) * (h * w).div_ceil(64 * 64).min(4);
    for _ in 0..shapes {
        let colour: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let ry = rng.gen_range(3.0..(h as f64 / 3.0).max(4.0));
        let rx = rng.gen_range(3.0..(w as f64 / 3.0).max(4.0));
        let rect = rng.gen_bool(0.5);
        for i in 0..h {
            for j in 0..w {
                let dy = (i as f64 - cy) / ry;
                let dx = (j as f64 - cx) / rx;
                let d = if rect { dy.abs().max(dx.abs()) } else { (dy * dy + dx * dx).sqrt() };
                let a = ((1.0 - d) * ry.min(rx)).clamp(0.0, 1.0);
                for c in 0..3 {
                    let v = &mut img[c * h * w + i * w + j];
                    *v = *v * (1.0 - a) + colour[c] * a;
                }
            }
        }
    }
    let fy = rng.gen_range(0.05..0.4);
    let fx = rng.gen_range(0.05..0.4);
    let amp = rng.gen_range(0.0..0.08);
    for i in 0..h {
        for j in 0..w {
            let t = amp * (i as f64 * fy).sin() * (j as f64 * fx).cos();
            for c in 0..3 {
                img[c * h * w + i * w + j] += t;
            }
        }
    }
    if p.blur > 0.0 {
        gaussian_blur(&mut img, h, w, p.blur);
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

pub fn synth_raster(p: &SynthParams, seed: u64) -> Raster {
    let planar = synth_planar(p, seed);
    let plane = p.width * p.height;
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push((planar[c * plane + i] * 255.0).round() as u8);
        }
    }
    Raster { width: p.width, height: p.height, pixels }
}
