//! JPEG-style transformation defense: a hard round-trip used at evaluation
//! time and a soft, differentiable variant an attacker can compose with the
//! codec.

use crate::attack::{run_attack_through, AttackConfig, AttackResult, GsmPair, InputTransform};
use crate::autodiff::{Graph, Var, DCT_BLOCK};
use crate::codec::{CodecModel, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[rustfmt::skip]
const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61.,
    12., 12., 14., 19., 26., 58., 60., 55.,
    14., 13., 16., 24., 40., 57., 69., 56.,
    14., 17., 22., 29., 51., 87., 80., 62.,
    18., 22., 37., 56., 68., 109., 103., 77.,
    24., 35., 55., 64., 81., 104., 113., 92.,
    49., 64., 78., 87., 103., 121., 120., 101.,
    72., 92., 95., 98., 112., 100., 103., 99.,
];

#[rustfmt::skip]
const CHROMA_TABLE: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99.,
    18., 21., 26., 66., 99., 99., 99., 99.,
    24., 26., 56., 99., 99., 99., 99., 99.,
    47., 66., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99.,
];

// BT.601 full range, on [0, 1] samples; chroma offsets are applied separately.
const RGB_TO_YCC: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];
const YCC_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [1.0, -0.344_136, -0.714_136],
    [1.0, 1.772, 0.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rounding {
    Hard,
    Soft,
}

impl Rounding {
    pub fn as_str(self) -> &'static str {
        match self {
            Rounding::Hard => "hard",
            Rounding::Soft => "soft",
        }
    }
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Rounding::Hard),
            "soft" => Ok(Rounding::Soft),
            other => Err(Error::invalid(format!("unknown rounding {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JpegConfig {
    pub quality: u32,
    pub rounding: Rounding,
    pub soft_sharpness: f64,
}

impl Default for JpegConfig {
    fn default() -> Self {
        JpegConfig { quality: 90, rounding: Rounding::Hard, soft_sharpness: 1.0 }
    }
}

impl JpegConfig {
    pub fn new(quality: u32, rounding: Rounding) -> Self {
        JpegConfig { quality, rounding, ..JpegConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.quality) {
            return Err(Error::invalid(format!("jpeg quality {} outside [1, 100]", self.quality)));
        }
        if !(self.soft_sharpness.is_finite() && self.soft_sharpness > 0.0) {
            return Err(Error::invalid(format!("soft_sharpness {} must be positive", self.soft_sharpness)));
        }
        Ok(())
    }

    /// Quality-scaled luma and chroma tables.
    pub fn tables(&self) -> ([f64; 64], [f64; 64]) {
        let q = self.quality.clamp(1, 100) as f64;
        let scale = if q < 50.0 { (5000.0 / q).floor() } else { 200.0 - 2.0 * q };
        let s = |t: &[f64; 64]| t.map(|b| ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0));
        (s(&LUMA_TABLE), s(&CHROMA_TABLE))
    }
}

fn per_coefficient(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let plane = h * w;
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, rem) = (i / plane, i % plane);
        f(c, (rem / w % DCT_BLOCK) * DCT_BLOCK + rem % w % DCT_BLOCK)
    })
}

/// Builds the round-trip on `g`. Hard rounding requires an untracked input.
pub fn jpeg_on(g: &mut Graph, x: Var, height: usize, width: usize, cfg: &JpegConfig) -> Result<Var> {
    cfg.validate()?;
    if !height.is_multiple_of(DCT_BLOCK) || !width.is_multiple_of(DCT_BLOCK) {
        return Err(Error::shape(format!("jpeg needs dims divisible by 8, got {height}x{width}")));
    }
    let (luma, chroma) = cfg.tables();
    let table = |c: usize, k: usize| if c == 0 { luma[k] } else { chroma[k] };
    let level_shift = per_coefficient(height, width, |c, _| if c == 0 { -128.0 } else { 0.0 });
    let inv_q = per_coefficient(height, width, |c, k| 1.0 / table(c, k));
    let q = per_coefficient(height, width, table);

    let ycc = g.color_mix(x, RGB_TO_YCC)?;
    let samples = g.scale(ycc, 255.0)?;
    let shifted = g.add_const(samples, &level_shift)?;
    let coeffs = g.block_dct(shifted, false)?;
    let scaled = g.mul_const(coeffs, &inv_q)?;
    let rounded = match cfg.rounding {
        Rounding::Hard => g.round_hard(scaled)?,
        Rounding::Soft => g.soft_round(scaled, cfg.soft_sharpness)?,
    };
    let dequant = g.mul_const(rounded, &q)?;
    let spatial = g.block_dct(dequant, true)?;
    let unshifted = g.add_const(spatial, &level_shift.map(|v| -v))?;
    let unit = g.scale(unshifted, 1.0 / 255.0)?;
    let rgb = g.color_mix(unit, YCC_TO_RGB)?;
    g.clamp(rgb, 0.0, 1.0)
}

/// JPEG-style compress/decompress of `x` without entropy coding or chroma
/// subsampling.
pub fn jpeg_roundtrip(x: &Image, cfg: &JpegConfig) -> Result<Image> {
    let mut g = Graph::new();
    let v = g.constant(x.tensor().clone());
    let out = jpeg_on(&mut g, v, x.height(), x.width(), cfg)?;
    Image::from_clamped(g.value(out))
}

/// Differentiable JPEG stage for attacks; always rounds softly.
#[derive(Clone, Copy, Debug)]
pub struct SoftJpeg {
    pub cfg: JpegConfig,
}

impl InputTransform for SoftJpeg {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (h, w) = match g.value(x).dims() {
            &[_, h, w] => (h, w),
            d => return Err(Error::shape(format!("jpeg input must be [3, H, W], got {d:?}"))),
        };
        jpeg_on(g, x, h, w, &JpegConfig { rounding: Rounding::Soft, ..self.cfg })
    }
}

/// Attack whose objective differentiates through soft JPEG followed by the
/// codec. Evaluate the result with [`defended_reconstruction`].
pub fn attack_through_defense(
    model: &CodecModel,
    pair: &GsmPair,
    cfg_attack: &AttackConfig,
    cfg_jpeg: &JpegConfig,
    stream: u64,
) -> Result<AttackResult> {
    cfg_jpeg.validate()?;
    if !pair.source.height().is_multiple_of(DCT_BLOCK) || !pair.source.width().is_multiple_of(DCT_BLOCK) {
        return Err(Error::shape("jpeg needs dims divisible by 8"));
    }
    run_attack_through(model, pair, cfg_attack, stream, Some(&SoftJpeg { cfg: *cfg_jpeg }))
}

/// What the defended deployment outputs: hard JPEG, then the codec.
pub fn defended_reconstruction(model: &CodecModel, x: &Image, cfg: &JpegConfig) -> Result<Image> {
    let hard = JpegConfig { rounding: Rounding::Hard, ..*cfg };
    model.reconstruct(&jpeg_roundtrip(x, &hard)?)
}
