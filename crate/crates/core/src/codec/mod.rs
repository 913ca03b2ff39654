//! Toy learned image codec: two stride-2 conv stages, a quantizer with
//! training/attack surrogates, mirrored transposed-conv synthesis and a
//! per-channel logistic entropy model.

mod image;
mod model;
mod train;
mod weights;

pub use image::Image;
pub use model::{
    BitsEstimate, BoundCodec, CodecModel, QuantMode, Quantizer, DEC1_B, DEC1_W, DEC2_B, DEC2_W, ENC1_B, ENC1_W,
    ENC2_B, ENC2_W, ENT_LOC, ENT_LOG_SCALE, KERNEL, LEAKY_SLOPE, PAD, PROB_FLOOR, STRIDE,
};
pub use train::{train, TrainOptions, TrainReport};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC};

#[cfg(test)]
mod tests;
