//! The victim codec: `decode(dequantize(quantize(encode(x))))` with the
//! dequantizer fixed to the identity and a factorized logistic prior over
//! the quantized latent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::{Graph, Var};
use crate::codec::Image;
use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.1;
/// Lower bound on the probability mass of a single latent symbol.
pub const PROB_FLOOR: f64 = 1e-9;

pub const ENC1_W: &str = "encoder.conv1.weight";
pub const ENC1_B: &str = "encoder.conv1.bias";
pub const ENC2_W: &str = "encoder.conv2.weight";
pub const ENC2_B: &str = "encoder.conv2.bias";
pub const DEC1_W: &str = "decoder.deconv1.weight";
pub const DEC1_B: &str = "decoder.deconv1.bias";
pub const DEC2_W: &str = "decoder.deconv2.weight";
pub const DEC2_B: &str = "decoder.deconv2.bias";
pub const ENT_LOC: &str = "entropy.loc";
pub const ENT_LOG_SCALE: &str = "entropy.log_scale";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise in `(-0.5, 0.5)`; training surrogate.
    Noise,
    /// Rounding forward, identity gradient backward.
    Ste,
    /// Rounding with no gradient; inference only.
    Hard,
}

/// Quantizer selection for one forward pass. Noise mode carries its RNG.
pub enum Quantizer<'a> {
    Noise(&'a mut ChaCha8Rng),
    Ste,
    Hard,
}

impl Quantizer<'_> {
    pub fn mode(&self) -> QuantMode {
        match self {
            Quantizer::Noise(_) => QuantMode::Noise,
            Quantizer::Ste => QuantMode::Ste,
            Quantizer::Hard => QuantMode::Hard,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    pub encoder: ParameterSet,
    pub decoder: ParameterSet,
    pub entropy: ParameterSet,
    pub lambda: f64,
}

/// Handles to a model's parameters recorded on a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct BoundCodec {
    pub enc1_w: Var,
    pub enc1_b: Var,
    pub enc2_w: Var,
    pub enc2_b: Var,
    pub dec1_w: Var,
    pub dec1_b: Var,
    pub dec2_w: Var,
    pub dec2_b: Var,
    pub loc: Var,
    pub log_scale: Var,
}

impl BoundCodec {
    /// Vars in weights-file order, paired with their parameter names.
    pub fn named(&self) -> [(&'static str, Var); 10] {
        [
            (ENC1_W, self.enc1_w),
            (ENC1_B, self.enc1_b),
            (ENC2_W, self.enc2_w),
            (ENC2_B, self.enc2_b),
            (DEC1_W, self.dec1_w),
            (DEC1_B, self.dec1_b),
            (DEC2_W, self.dec2_w),
            (DEC2_B, self.dec2_b),
            (ENT_LOC, self.loc),
            (ENT_LOG_SCALE, self.log_scale),
        ]
    }
}

/// Rate estimate of a quantized latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitsEstimate {
    pub total_bits: f64,
    pub bpp: f64,
}

fn uniform_tensor(dims: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-bound..bound))
}

impl CodecModel {
    /// Randomly initialized model (uniform fan-in scaling) with `hidden`
    /// intermediate and `latent` bottleneck channels.
    pub fn new(hidden: usize, latent: usize, lambda: f64, seed: u64) -> Result<Self> {
        if hidden == 0 || latent == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {lambda} must be finite and >= 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kk = KERNEL * KERNEL;
        let fan = |c: usize| (3.0 / (c * kk) as f64).sqrt() * 2f64.sqrt();
        let mut encoder = ParameterSet::new();
        encoder.insert(ENC1_W, uniform_tensor(&[hidden, 3, KERNEL, KERNEL], fan(3), &mut rng))?;
        encoder.insert(ENC1_B, Tensor::zeros(&[hidden]))?;
        encoder.insert(ENC2_W, uniform_tensor(&[latent, hidden, KERNEL, KERNEL], fan(hidden), &mut rng))?;
        encoder.insert(ENC2_B, Tensor::zeros(&[latent]))?;
        // A stride-2 transposed conv touches each output from k*k/4 taps per channel.
        let dfan = |c: usize| (3.0 / (c * kk / 4) as f64).sqrt();
        let mut decoder = ParameterSet::new();
        decoder.insert(DEC1_W, uniform_tensor(&[latent, hidden, KERNEL, KERNEL], dfan(latent), &mut rng))?;
        decoder.insert(DEC1_B, Tensor::zeros(&[hidden]))?;
        decoder.insert(DEC2_W, uniform_tensor(&[hidden, 3, KERNEL, KERNEL], dfan(hidden) * 0.5, &mut rng))?;
        decoder.insert(DEC2_B, Tensor::full(&[3], 0.5))?;
        let mut entropy = ParameterSet::new();
        entropy.insert(ENT_LOC, Tensor::zeros(&[latent]))?;
        entropy.insert(ENT_LOG_SCALE, Tensor::zeros(&[latent]))?;
        let model = CodecModel { encoder, decoder, entropy, lambda };
        model.validate()?;
        Ok(model)
    }

    /// Model with every weight and bias zero except the decoder output bias.
    pub fn zeroed(hidden: usize, latent: usize, output_bias: f64) -> Result<Self> {
        let mut m = CodecModel::new(hidden, latent, 0.0, 0)?;
        for set in [&mut m.encoder, &mut m.decoder, &mut m.entropy] {
            for (_, t) in set.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        m.decoder
            .get_mut(DEC2_B)
            .expect("decoder bias")
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = output_bias);
        Ok(m)
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.get(ENC2_W).map_or(0, |t| t.dims()[0])
    }

    pub fn hidden_channels(&self) -> usize {
        self.encoder.get(ENC1_W).map_or(0, |t| t.dims()[0])
    }

    /// Checks the channel-count wiring and entropy parameter sanity.
    pub fn validate(&self) -> Result<()> {
        let dims = |set: &ParameterSet, n: &str| -> Result<Vec<usize>> {
            Ok(set.require(n)?.dims().to_vec())
        };
        let e1 = dims(&self.encoder, ENC1_W)?;
        let e2 = dims(&self.encoder, ENC2_W)?;
        let d1 = dims(&self.decoder, DEC1_W)?;
        let d2 = dims(&self.decoder, DEC2_W)?;
        let (hidden, latent) = (e1[0], e2[0]);
        let k = [KERNEL, KERNEL];
        let ok = e1 == [hidden, 3, k[0], k[1]]
            && e2 == [latent, hidden, k[0], k[1]]
            && d1 == [latent, hidden, k[0], k[1]]
            && d2 == [hidden, 3, k[0], k[1]]
            && dims(&self.encoder, ENC1_B)? == [hidden]
            && dims(&self.encoder, ENC2_B)? == [latent]
            && dims(&self.decoder, DEC1_B)? == [hidden]
            && dims(&self.decoder, DEC2_B)? == [3]
            && dims(&self.entropy, ENT_LOC)? == [latent]
            && dims(&self.entropy, ENT_LOG_SCALE)? == [latent];
        if !ok {
            return Err(Error::shape(format!(
                "inconsistent codec parameter shapes: enc1 {e1:?}, enc2 {e2:?}, dec1 {d1:?}, dec2 {d2:?}"
            )));
        }
        if !self.entropy.require(ENT_LOG_SCALE)?.is_finite() {
            return Err(Error::invalid("entropy log-scales must be finite"));
        }
        Ok(())
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.encoder
            .get(name)
            .or_else(|| self.decoder.get(name))
            .or_else(|| self.entropy.get(name))
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if self.encoder.get(name).is_some() {
            self.encoder.get_mut(name)
        } else if self.decoder.get(name).is_some() {
            self.decoder.get_mut(name)
        } else {
            self.entropy.get_mut(name)
        }
    }

    /// Records the parameters on `g`; `track` makes them gradient leaves.
    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundCodec {
        let mut put = |name: &str| {
            let t = self.parameter(name).expect("validated model").clone();
            if track {
                g.variable(t)
            } else {
                g.constant(t)
            }
        };
        BoundCodec {
            enc1_w: put(ENC1_W),
            enc1_b: put(ENC1_B),
            enc2_w: put(ENC2_W),
            enc2_b: put(ENC2_B),
            dec1_w: put(DEC1_W),
            dec1_b: put(DEC1_B),
            dec2_w: put(DEC2_W),
            dec2_b: put(DEC2_B),
            loc: put(ENT_LOC),
            log_scale: put(ENT_LOG_SCALE),
        }
    }

    pub fn encode_on(&self, g: &mut Graph, p: &BoundCodec, x: Var) -> Result<Var> {
        let dims = g.value(x).dims().to_vec();
        match dims.as_slice() {
            &[3, h, w] if h % 4 == 0 && w % 4 == 0 => {}
            d => return Err(Error::shape(format!("encoder input must be [3, H, W] with H, W divisible by 4, got {d:?}"))),
        }
        let h = g.conv2d(x, p.enc1_w, p.enc1_b, STRIDE, PAD)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        g.conv2d(h, p.enc2_w, p.enc2_b, STRIDE, PAD)
    }

    pub fn quantize_on(&self, g: &mut Graph, y: Var, q: &mut Quantizer<'_>) -> Result<Var> {
        match q {
            Quantizer::Noise(rng) => {
                let noise = Tensor::from_fn(g.value(y).dims(), |_| rng.gen_range(-0.5..0.5));
                g.add_const(y, &noise)
            }
            Quantizer::Ste => g.round_ste(y),
            Quantizer::Hard => g.round_hard(y),
        }
    }

    pub fn decode_on(&self, g: &mut Graph, p: &BoundCodec, y_hat: Var) -> Result<Var> {
        let latent = self.latent_channels();
        match g.value(y_hat).dims() {
            &[c, _, _] if c == latent => {}
            d => return Err(Error::shape(format!("decoder input must be [{latent}, h, w], got {d:?}"))),
        }
        let h = g.deconv2d(y_hat, p.dec1_w, p.dec1_b, STRIDE, PAD)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        g.deconv2d(h, p.dec2_w, p.dec2_b, STRIDE, PAD)
    }

    /// Full pipeline; returns `(y_hat, x_hat)`.
    pub fn forward_on(&self, g: &mut Graph, p: &BoundCodec, x: Var, q: &mut Quantizer<'_>) -> Result<(Var, Var)> {
        let y = self.encode_on(g, p, x)?;
        let y_hat = self.quantize_on(g, y, q)?;
        let x_hat = self.decode_on(g, p, y_hat)?;
        Ok((y_hat, x_hat))
    }

    /// Total bits of `y_hat` under the factorized prior.
    pub fn bits_on(&self, g: &mut Graph, p: &BoundCodec, y_hat: Var) -> Result<Var> {
        g.logistic_bits(y_hat, p.loc, p.log_scale, PROB_FLOOR)
    }

    /// `bpp + lambda * MSE(x, x_hat)` for an image of `pixels` pixels.
    pub fn rd_loss_on(&self, g: &mut Graph, p: &BoundCodec, x: Var, q: &mut Quantizer<'_>) -> Result<Var> {
        let dims = g.value(x).dims().to_vec();
        let pixels = (dims[1] * dims[2]) as f64;
        let elements = g.value(x).len() as f64;
        let (y_hat, x_hat) = self.forward_on(g, p, x, q)?;
        let bits = self.bits_on(g, p, y_hat)?;
        let bpp = g.scale(bits, 1.0 / pixels)?;
        let diff = g.sub(x_hat, x)?;
        let sq = g.sum_squares(diff)?;
        let distortion = g.scale(sq, self.lambda / elements)?;
        g.add(bpp, distortion)
    }

    pub fn encode(&self, x: &Image) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.tensor().clone());
        let y = self.encode_on(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }

    /// Quantizes outside any gradient computation.
    pub fn quantize(&self, y: &Tensor, q: &mut Quantizer<'_>) -> Result<Tensor> {
        let mut g = Graph::new();
        let yv = g.constant(y.clone());
        let out = self.quantize_on(&mut g, yv, q)?;
        Ok(g.value(out).clone())
    }

    /// Raw (unclamped) decoder output.
    pub fn decode(&self, y_hat: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let yv = g.constant(y_hat.clone());
        let out = self.decode_on(&mut g, &p, yv)?;
        Ok(g.value(out).clone())
    }

    /// Raw (unclamped) reconstruction of `x`.
    pub fn forward(&self, x: &Image, q: &mut Quantizer<'_>) -> Result<Tensor> {
        self.forward_tensor(x.tensor(), q)
    }

    pub fn forward_tensor(&self, x: &Tensor, q: &mut Quantizer<'_>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (_, out) = self.forward_on(&mut g, &p, xv, q)?;
        Ok(g.value(out).clone())
    }

    /// Hard-quantized reconstruction clamped to the pixel range.
    pub fn reconstruct(&self, x: &Image) -> Result<Image> {
        Image::from_clamped(&self.forward(x, &mut Quantizer::Hard)?)
    }

    pub fn bits_estimate(&self, y_hat: &Tensor, height: usize, width: usize) -> Result<BitsEstimate> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let yv = g.constant(y_hat.clone());
        let bits = self.bits_on(&mut g, &p, yv)?;
        let total_bits = g.scalar_value(bits)?;
        Ok(BitsEstimate { total_bits, bpp: total_bits / (height * width) as f64 })
    }

    /// Hard-quantized rate estimate of `x`.
    pub fn bpp(&self, x: &Image) -> Result<f64> {
        let y_hat = self.quantize(&self.encode(x)?, &mut Quantizer::Hard)?;
        Ok(self.bits_estimate(&y_hat, x.height(), x.width())?.bpp)
    }

    pub fn rd_loss(&self, x: &Image, q: &mut Quantizer<'_>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.tensor().clone());
        let loss = self.rd_loss_on(&mut g, &p, xv, q)?;
        g.scalar_value(loss)
    }
}
