//! Synthetic thin-section fields for desk-scale experiments.
//!
//! Grains are random ellipses over a textured matrix. Each grain has one
//! plane-polarized colour and a cross-polarized brightness derived from it by
//! a per-grain factor; a fraction of grains is rendered near-black under
//! crossed polars to mimic extinction. The mask is the exact ellipse union,
//! tested at pixel centres `(col + 0.5, row + 0.5)`.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::images::ImagePair;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Smallest full axis length, as a fraction of image height.
    pub min_axis_frac: f64,
    /// Largest full axis length, as a fraction of image height.
    pub max_axis_frac: f64,
    /// Probability that a grain is extinct (near-black) under crossed polars.
    pub extinction_prob: f64,
    /// Hard cap on ellipses per image.
    pub max_grains: usize,
    /// Cell size of the matrix texture, as a fraction of image height.
    pub texture_cell_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_axis_frac: 1.0 / 16.0,
            max_axis_frac: 1.0 / 4.0,
            extinction_prob: 0.2,
            max_grains: 100_000,
            texture_cell_frac: 1.0 / 48.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Rotation of the major axis, radians.
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }

    /// Inclusive-exclusive pixel bounds `(row0, row1, col0, col1)` that can
    /// contain covered pixel centres.
    fn pixel_bounds(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let r = self.semi_major.max(self.semi_minor);
        let lo = |v: f64| (v - r - 1.0).floor().max(0.0) as usize;
        let hi = |v: f64, n: usize| ((v + r + 1.0).ceil().max(0.0) as usize).min(n);
        (lo(self.cy), hi(self.cy, h), lo(self.cx), hi(self.cx, w))
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub pair: ImagePair,
    /// In painting order; later grains cover earlier ones.
    pub grains: Vec<Ellipse>,
}

struct GrainLook {
    ppl: [f64; 3],
    xpl: [f64; 3],
}

/// Bilinear value noise in `[-1, 1]` on a lattice of `cell`-pixel squares.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, h: usize, w: usize, cell: f64) -> Self {
        let rows = (h as f64 / cell).ceil() as usize + 2;
        let cols = (w as f64 / cell).ceil() as usize + 2;
        let lattice = (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        ValueNoise { cell, cols, lattice }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        let (y, x) = (r as f64 / self.cell, c as f64 / self.cell);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let g = |yy: usize, xx: usize| self.lattice[yy * self.cols + xx];
        let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
        let bottom = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `count` pairs of size `h×w` whose masks cover roughly `grain_fraction`
/// of the pixels (ellipses are added until the union reaches it).
pub fn generate_synthetic(rng: &mut Rng, count: usize, h: usize, w: usize, grain_fraction: f64) -> Result<Vec<ImagePair>> {
    Ok(generate_synthetic_with(rng, count, h, w, grain_fraction, &SynthConfig::default())?
        .into_iter()
        .map(|s| s.pair)
        .collect())
}

pub fn generate_synthetic_with(
    rng: &mut Rng,
    count: usize,
    h: usize,
    w: usize,
    grain_fraction: f64,
    config: &SynthConfig,
) -> Result<Vec<SyntheticPair>> {
    if !(grain_fraction > 0.0 && grain_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grain fraction must lie in (0, 1), got {grain_fraction}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("empty image size {h}×{w}")));
    }
    if !(config.min_axis_frac > 0.0 && config.min_axis_frac <= config.max_axis_frac) {
        return Err(Error::InvalidArgument(format!(
            "axis range [{}, {}] is invalid",
            config.min_axis_frac, config.max_axis_frac
        )));
    }
    (0..count)
        .map(|i| generate_one(rng, format!("synth{i:03}"), h, w, grain_fraction, config))
        .collect()
}

fn generate_one(rng: &mut Rng, id: String, h: usize, w: usize, fraction: f64, config: &SynthConfig) -> Result<SyntheticPair> {
    let n = h * w;
    let target = (fraction * n as f64).ceil() as usize;
    let mut owner = vec![0u32; n];
    let mut covered = 0usize;
    let mut grains = Vec::new();
    let mut looks = Vec::new();

    while covered < target && grains.len() < config.max_grains {
        let axis = |rng: &mut Rng| rng.uniform_range(config.min_axis_frac, config.max_axis_frac) * h as f64 / 2.0;
        let (a, b) = (axis(rng), axis(rng));
        let e = Ellipse {
            cx: rng.uniform_range(0.0, w as f64),
            cy: rng.uniform_range(0.0, h as f64),
            semi_major: a.max(b),
            semi_minor: a.min(b),
            angle: rng.uniform_range(0.0, std::f64::consts::PI),
        };
        let gray = rng.uniform_range(165.0, 235.0);
        let ppl = [0, 1, 2].map(|_| gray + rng.uniform_range(-15.0, 15.0));
        let factor = if rng.uniform() < config.extinction_prob {
            rng.uniform_range(0.02, 0.10)
        } else {
            rng.uniform_range(0.30, 1.05)
        };
        let tint = [0, 1, 2].map(|_| rng.uniform_range(0.8, 1.2));
        let xpl = [0, 1, 2].map(|c| gray * factor * tint[c]);
        looks.push(GrainLook { ppl, xpl });
        grains.push(e);

        let label = grains.len() as u32;
        let (r0, r1, c0, c1) = e.pixel_bounds(h, w);
        for r in r0..r1 {
            for c in c0..c1 {
                if e.contains(c as f64 + 0.5, r as f64 + 0.5) {
                    let o = &mut owner[r * w + c];
                    if *o == 0 {
                        covered += 1;
                    }
                    *o = label;
                }
            }
        }
    }

    let matrix = [
        rng.uniform_range(95.0, 140.0),
        rng.uniform_range(75.0, 110.0),
        rng.uniform_range(55.0, 85.0),
    ];
    let cell = (config.texture_cell_frac * h as f64).max(2.0);
    let coarse = ValueNoise::new(rng, h, w, cell);
    let mut ppl = RgbImage::new(w as u32, h as u32);
    let mut xpl = RgbImage::new(w as u32, h as u32);
    let mut mask = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let fine_p = rng.uniform_range(-1.0, 1.0);
            let fine_x = rng.uniform_range(-1.0, 1.0);
            let (p, x, m) = match owner[r * w + c] {
                0 => {
                    let t = 30.0 * coarse.at(r, c) + 22.0 * fine_p;
                    let p = matrix.map(|v| v + t);
                    let x = matrix.map(|v| 0.35 * v + 0.5 * t + 10.0 * fine_x);
                    (p, x, 0u8)
                }
                g => {
                    let look = &looks[g as usize - 1];
                    let p = look.ppl.map(|v| v + 6.0 * fine_p);
                    let x = look.xpl.map(|v| v + 6.0 * fine_x);
                    (p, x, 255u8)
                }
            };
            ppl.put_pixel(c as u32, r as u32, Rgb(p.map(to_u8)));
            xpl.put_pixel(c as u32, r as u32, Rgb(x.map(to_u8)));
            mask.put_pixel(c as u32, r as u32, Luma([m]));
        }
    }

    Ok(SyntheticPair {
        pair: ImagePair { id, ppl, xpl, mask },
        grains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_fraction() {
        for f in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
            assert!(generate_synthetic(&mut Rng::new(0), 1, 32, 32, f).is_err(), "{f}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&mut Rng::new(5), 2, 48, 64, 0.4).unwrap();
        let b = generate_synthetic(&mut Rng::new(5), 2, 48, 64, 0.4).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&mut Rng::new(6), 2, 48, 64, 0.4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ppl_and_xpl_differ() {
        let p = &generate_synthetic(&mut Rng::new(1), 1, 64, 64, 0.5).unwrap()[0];
        assert_ne!(p.ppl, p.xpl);
        assert!(p.mask.as_raw().iter().all(|&v| v == 0 || v == 255));
    }
}
