use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image stored as a `[3, H, W]` tensor with pixels in `[0, 1]`.
/// Spatial dims must be divisible by 4 (two stride-2 stages).
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let &[c, h, w] = tensor.dims() else {
            return Err(Error::shape(format!("image must be [3, H, W], got {:?}", tensor.dims())));
        };
        if c != 3 {
            return Err(Error::shape(format!("image must have 3 channels, got {c}")));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!("image dims {h}x{w} must be divisible by 4")));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image(tensor))
    }

    /// Clamps every element to `[0, 1]` before validating the shape.
    pub fn from_clamped(tensor: &Tensor) -> Result<Self> {
        Image::new(tensor.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(Tensor::full(&[3, height, width], value))
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Copies the `size`x`size` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds image {}x{}",
                self.height(),
                self.width()
            )));
        }
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in top..top + height {
                let row = c * h * w + y * w;
                out.extend_from_slice(&self.data()[row + left..row + left + width]);
            }
        }
        Image::new(Tensor::new(&[3, height, width], out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_range_and_shape() {
        assert!(Image::new(Tensor::full(&[3, 8, 8], 1.5)).is_err());
        assert!(Image::new(Tensor::full(&[3, 6, 8], 0.5)).is_err());
        assert!(Image::new(Tensor::full(&[1, 8, 8], 0.5)).is_err());
        assert!(Image::new(Tensor::full(&[3, 8, 8], 0.5)).is_ok());
    }

    #[test]
    fn crop_copies_window() {
        let t = Tensor::from_fn(&[3, 8, 8], |i| i as f64 / 192.0);
        let img = Image::new(t).unwrap();
        let c = img.crop(4, 4, 4, 4).unwrap();
        assert_eq!(c.data()[0], (4 * 8 + 4) as f64 / 192.0);
        assert_eq!(c.data()[16], (64 + 4 * 8 + 4) as f64 / 192.0);
        assert!(img.crop(6, 0, 4, 4).is_err());
    }
}
