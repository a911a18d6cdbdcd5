use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// Gray levels at or above this are grain.
pub const MASK_THRESHOLD: u8 = 128;

/// One thin-section field of view: plane- and cross-polarized photographs
/// plus the hand-drawn ground truth (grain white, matrix black).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub ppl: RgbImage,
    pub xpl: RgbImage,
    pub mask: GrayImage,
}

impl ImagePair {
    pub fn dims(&self) -> (usize, usize) {
        (self.ppl.height() as usize, self.ppl.width() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.ppl.dimensions();
        if self.xpl.dimensions() != d || self.mask.dimensions() != d {
            return Err(Error::Shape(format!(
                "pair `{}`: ppl {:?}, xpl {:?}, mask {:?} differ",
                self.id,
                d,
                self.xpl.dimensions(),
                self.mask.dimensions()
            )));
        }
        Ok(())
    }
}

/// Per-pixel, per-channel `floor((a + b) / 2)`.
pub fn average_images(a: &RgbImage, b: &RgbImage) -> Result<RgbImage> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Shape(format!(
            "cannot average {:?} with {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let data = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| ((x as u16 + y as u16) / 2) as u8)
        .collect();
    Ok(RgbImage::from_raw(a.width(), a.height(), data).expect("same dimensions"))
}

pub fn average_pair(pair: &ImagePair) -> Result<RgbImage> {
    average_images(&pair.ppl, &pair.xpl)
}

/// Row-major binary mask, one byte per pixel, 1 = grain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v == 1).count() as f64 / self.data.len() as f64
    }

    /// 0/255 grayscale rendering.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, data).expect("dimensions")
    }
}

/// `pixel >= 128` → grain.
pub fn binarize_mask(gray: &GrayImage) -> BinaryMask {
    BinaryMask {
        height: gray.height() as usize,
        width: gray.width() as usize,
        data: gray
            .as_raw()
            .iter()
            .map(|&v| u8::from(v >= MASK_THRESHOLD))
            .collect(),
    }
}

/// Full-resolution grain probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    /// `p >= threshold` → grain.
    pub fn threshold(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| u8::from(p >= threshold)).collect(),
        }
    }

    /// Probabilities scaled to 0..=255 (rounded).
    pub fn to_gray(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (px, &p) in img.pixels_mut().zip(&self.data) {
            *px = Luma([(p.clamp(0.0, 1.0) * 255.0).round() as u8]);
        }
        img
    }
}
