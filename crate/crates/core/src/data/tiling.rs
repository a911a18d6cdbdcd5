use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::images::{BinaryMask, ProbMap};
use crate::error::{Error, Result};

/// Grid of square crop origins over an image padded at the bottom/right.
///
/// Each padded extent is the smallest `d >= max(dim, tile)` with
/// `(d − tile) % stride == 0`, so every pixel is covered and the last
/// row/column of tiles ends exactly on the padded border.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub stride: usize,
    pub pad_value: u8,
    pub padded_h: usize,
    pub padded_w: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(row, col)` of each tile's top-left corner, row-major.
    pub origins: Vec<(usize, usize)>,
}

fn padded_extent(dim: usize, tile: usize, stride: usize) -> usize {
    if dim <= tile {
        tile
    } else {
        tile + (dim - tile).div_ceil(stride) * stride
    }
}

pub fn tile_plan(height: usize, width: usize, tile: usize, stride: usize) -> Result<TilePlan> {
    if tile == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "tile ({tile}) and stride ({stride}) must be positive"
        )));
    }
    if stride > tile {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} exceeds tile {tile}; tiles would leave gaps"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("empty image {height}×{width}")));
    }
    let padded_h = padded_extent(height, tile, stride);
    let padded_w = padded_extent(width, tile, stride);
    let rows = (padded_h - tile) / stride + 1;
    let cols = (padded_w - tile) / stride + 1;
    let origins = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect();
    Ok(TilePlan {
        height,
        width,
        tile,
        stride,
        pad_value: 0,
        padded_h,
        padded_w,
        rows,
        cols,
        origins,
    })
}

impl TilePlan {
    pub fn with_pad_value(mut self, pad_value: u8) -> Self {
        self.pad_value = pad_value;
        self
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// How many tiles cover each pixel of the padded frame.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.padded_h * self.padded_w];
        for &(r0, c0) in &self.origins {
            for r in r0..r0 + self.tile {
                for v in &mut cov[r * self.padded_w + c0..r * self.padded_w + c0 + self.tile] {
                    *v += 1;
                }
            }
        }
        cov
    }
}

/// A training/test crop. Pixels are stored as bytes and scaled on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// Source image id, e.g. `pair3_avg`.
    pub source: String,
    pub origin: (usize, usize),
    pub tile: usize,
    /// Planar `3×tile×tile` RGB.
    pub image: Vec<u8>,
    /// `tile×tile`, 0 or 1.
    pub mask: Vec<u8>,
}

impl Sample {
    /// Image scaled to `[0, 1]` by `/255`, planar CHW.
    pub fn image_f32(&self) -> Vec<f32> {
        self.image.iter().map(|&v| v as f32 / 255.0).collect()
    }

    pub fn mask_f32(&self) -> Vec<f32> {
        self.mask.iter().map(|&v| v as f32).collect()
    }

    pub fn image_rgb(&self) -> RgbImage {
        let t = self.tile;
        let plane = t * t;
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            data.extend([self.image[i], self.image[plane + i], self.image[2 * plane + i]]);
        }
        RgbImage::from_raw(t as u32, t as u32, data).expect("tile dimensions")
    }

    pub fn mask_gray(&self) -> GrayImage {
        let data = self.mask.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.tile as u32, self.tile as u32, data).expect("tile dimensions")
    }

    pub fn from_images(source: String, origin: (usize, usize), image: &RgbImage, mask: &BinaryMask) -> Result<Sample> {
        let t = image.width() as usize;
        if image.height() as usize != t || mask.height != t || mask.width != t {
            return Err(Error::Shape(format!(
                "tile for `{source}` is not square or mask differs: {:?} vs {}×{}",
                image.dimensions(),
                mask.height,
                mask.width
            )));
        }
        let plane = t * t;
        let mut planar = vec![0u8; 3 * plane];
        for (i, px) in image.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * plane + i] = px[c];
            }
        }
        Ok(Sample {
            source,
            origin,
            tile: t,
            image: planar,
            mask: mask.data.clone(),
        })
    }
}

fn check_plan(plan: &TilePlan, h: usize, w: usize) -> Result<()> {
    if plan.height != h || plan.width != w {
        return Err(Error::Shape(format!(
            "tile plan built for {}×{}, image is {h}×{w}",
            plan.height, plan.width
        )));
    }
    Ok(())
}

/// Planar RGB crops at each origin; pixels outside the image take
/// `plan.pad_value`.
pub fn extract_image_tiles(image: &RgbImage, plan: &TilePlan) -> Result<Vec<Vec<u8>>> {
    let (h, w) = (image.height() as usize, image.width() as usize);
    check_plan(plan, h, w)?;
    let t = plan.tile;
    let plane = t * t;
    let raw = image.as_raw();
    Ok(plan
        .origins
        .iter()
        .map(|&(r0, c0)| {
            let mut out = vec![plan.pad_value; 3 * plane];
            for r in 0..t.min(h.saturating_sub(r0)) {
                let src_row = (r0 + r) * w;
                for c in 0..t.min(w.saturating_sub(c0)) {
                    let px = &raw[(src_row + c0 + c) * 3..(src_row + c0 + c) * 3 + 3];
                    for ch in 0..3 {
                        out[ch * plane + r * t + c] = px[ch];
                    }
                }
            }
            out
        })
        .collect())
}

/// One [`Sample`] per origin. The image is padded with `plan.pad_value`, the
/// mask always with 0 (matrix).
pub fn extract_tiles(source: &str, image: &RgbImage, mask: &BinaryMask, plan: &TilePlan) -> Result<Vec<Sample>> {
    check_plan(plan, mask.height, mask.width)?;
    let images = extract_image_tiles(image, plan)?;
    let (h, w, t) = (mask.height, mask.width, plan.tile);
    Ok(images
        .into_iter()
        .zip(&plan.origins)
        .map(|(img, &(r0, c0))| {
            let mut m = vec![0u8; t * t];
            for r in 0..t.min(h.saturating_sub(r0)) {
                let cols = t.min(w.saturating_sub(c0));
                let src = (r0 + r) * w + c0;
                m[r * t..r * t + cols].copy_from_slice(&mask.data[src..src + cols]);
            }
            Sample {
                source: source.to_string(),
                origin: (r0, c0),
                tile: t,
                image: img,
                mask: m,
            }
        })
        .collect())
}

/// Reassembles per-tile probability maps (row-major `tile×tile`, in plan
/// order). Overlaps are averaged by coverage count, accumulating in plan
/// order; the padded margin is cropped to `out_h×out_w`.
pub fn stitch(tiles: &[Vec<f32>], plan: &TilePlan, out_h: usize, out_w: usize) -> Result<ProbMap> {
    if tiles.len() != plan.len() {
        return Err(Error::Shape(format!(
            "stitch: {} tiles for a plan with {} origins",
            tiles.len(),
            plan.len()
        )));
    }
    if out_h > plan.padded_h || out_w > plan.padded_w {
        return Err(Error::Shape(format!(
            "stitch: output {out_h}×{out_w} exceeds padded frame {}×{}",
            plan.padded_h, plan.padded_w
        )));
    }
    let t = plan.tile;
    let pw = plan.padded_w;
    let mut sum = vec![0.0f64; plan.padded_h * pw];
    let mut count = vec![0u32; plan.padded_h * pw];
    for (tile, &(r0, c0)) in tiles.iter().zip(&plan.origins) {
        if tile.len() != t * t {
            return Err(Error::Shape(format!(
                "stitch: tile has {} values, expected {}",
                tile.len(),
                t * t
            )));
        }
        for r in 0..t {
            let row = (r0 + r) * pw + c0;
            for c in 0..t {
                sum[row + c] += tile[r * t + c] as f64;
                count[row + c] += 1;
            }
        }
    }
    let mut data = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let i = r * pw + c;
            data.push((sum[i] / count[i] as f64) as f32);
        }
    }
    Ok(ProbMap {
        height: out_h,
        width: out_w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_grid() {
        let p = tile_plan(512, 512, 256, 256).unwrap();
        assert_eq!((p.padded_h, p.padded_w, p.len()), (512, 512, 4));
        assert_eq!(p.origins, vec![(0, 0), (0, 256), (256, 0), (256, 256)]);
    }

    #[test]
    fn full_size_photomicrograph() {
        let p = tile_plan(1920, 2448, 256, 256).unwrap();
        assert_eq!((p.padded_h, p.padded_w, p.rows, p.cols), (2048, 2560, 8, 10));
        assert_eq!(p.len() * 14, 1120);
        let p = tile_plan(1920, 2448, 256, 128).unwrap();
        assert_eq!((p.rows, p.cols, p.len()), (14, 19, 266));
    }

    #[test]
    fn small_image_gets_one_tile() {
        let p = tile_plan(100, 30, 64, 32).unwrap();
        assert_eq!((p.padded_h, p.padded_w, p.len()), (128, 64, 3));
    }

    #[test]
    fn bad_stride() {
        assert!(tile_plan(512, 512, 256, 300).is_err());
        assert!(tile_plan(512, 512, 256, 0).is_err());
        assert!(tile_plan(512, 512, 0, 0).is_err());
    }

    #[test]
    fn coverage_is_exactly_one_without_overlap() {
        let p = tile_plan(100, 70, 32, 32).unwrap();
        assert!(p.coverage().iter().all(|&c| c == 1));
        let p = tile_plan(100, 70, 32, 8).unwrap();
        assert!(p.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn constant_image_tiles_and_padding() {
        let img = RgbImage::from_pixel(40, 30, image::Rgb([127, 127, 127]));
        let mask = BinaryMask::new(30, 40, vec![1; 1200]).unwrap();
        let plan = tile_plan(30, 40, 32, 32).unwrap().with_pad_value(9);
        let tiles = extract_tiles("x", &img, &mask, &plan).unwrap();
        assert_eq!(tiles.len(), 2);
        let s = &tiles[0];
        // rows 30, 31 are padding
        assert_eq!(s.image[29 * 32], 127);
        assert_eq!(s.image[30 * 32], 9);
        assert_eq!(s.mask[29 * 32], 1);
        assert_eq!(s.mask[30 * 32], 0);
        assert!(s.image_f32()[..32].iter().all(|&v| v == 127.0 / 255.0));
    }

    #[test]
    fn stitch_tile_count_mismatch() {
        let plan = tile_plan(64, 64, 32, 32).unwrap();
        assert!(stitch(&[vec![0.0; 1024]], &plan, 64, 64).is_err());
    }

    #[test]
    fn overlapping_halves_average() {
        // two 4×4 tiles over a 4×6 image, stride 2: overlap is columns 2..4
        let plan = tile_plan(4, 6, 4, 2).unwrap();
        assert_eq!(plan.len(), 2);
        let map = stitch(&[vec![0.0; 16], vec![1.0; 16]], &plan, 4, 6).unwrap();
        for r in 0..4 {
            assert_eq!(&map.data[r * 6..r * 6 + 6], &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        }
    }

    #[test]
    fn constant_tiles_stitch_constant() {
        let plan = tile_plan(50, 70, 16, 4).unwrap();
        let tiles = vec![vec![0.3f32; 256]; plan.len()];
        let map = stitch(&tiles, &plan, 50, 70).unwrap();
        assert!(map.data.iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn rgb_round_trip() {
        let img = RgbImage::from_fn(8, 8, |x, y| image::Rgb([x as u8, y as u8, (x * y) as u8]));
        let mask = BinaryMask::new(8, 8, vec![0; 64]).unwrap();
        let s = Sample::from_images("a".into(), (0, 0), &img, &mask).unwrap();
        assert_eq!(s.image_rgb(), img);
    }
}
