use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::images::{average_images, binarize_mask, ImagePair};
use super::tiling::{extract_tiles, tile_plan, Sample, TilePlan};
use crate::error::{Error, Result};

pub const DEFAULT_TILE: usize = 256;

/// The crop-based training and test set constructions.
///
/// Sets 1–3 and test 1 tile the PPL and XPL photographs as independent
/// images; sets 4–6 and test 2 tile their per-pixel average. Sets 1/4 crop
/// without overlap, 2/5 at half-tile stride and 3/6 at quarter-tile stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetScheme {
    Set1,
    Set2,
    Set3,
    Set4,
    Set5,
    Set6,
    Test1,
    Test2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Ppl,
    Xpl,
    Average,
}

impl View {
    pub fn suffix(self) -> &'static str {
        match self {
            View::Ppl => "ppl",
            View::Xpl => "xpl",
            View::Average => "avg",
        }
    }
}

impl DatasetScheme {
    pub const ALL: [DatasetScheme; 8] = [
        DatasetScheme::Set1,
        DatasetScheme::Set2,
        DatasetScheme::Set3,
        DatasetScheme::Set4,
        DatasetScheme::Set5,
        DatasetScheme::Set6,
        DatasetScheme::Test1,
        DatasetScheme::Test2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetScheme::Set1 => "set1",
            DatasetScheme::Set2 => "set2",
            DatasetScheme::Set3 => "set3",
            DatasetScheme::Set4 => "set4",
            DatasetScheme::Set5 => "set5",
            DatasetScheme::Set6 => "set6",
            DatasetScheme::Test1 => "test1",
            DatasetScheme::Test2 => "test2",
        }
    }

    pub fn uses_average(self) -> bool {
        matches!(
            self,
            DatasetScheme::Set4 | DatasetScheme::Set5 | DatasetScheme::Set6 | DatasetScheme::Test2
        )
    }

    pub fn is_test(self) -> bool {
        matches!(self, DatasetScheme::Test1 | DatasetScheme::Test2)
    }

    pub fn views(self) -> &'static [View] {
        if self.uses_average() {
            &[View::Average]
        } else {
            &[View::Ppl, View::Xpl]
        }
    }

    pub fn stride(self, tile: usize) -> usize {
        match self {
            DatasetScheme::Set2 | DatasetScheme::Set5 => (tile / 2).max(1),
            DatasetScheme::Set3 | DatasetScheme::Set6 => (tile / 4).max(1),
            _ => tile,
        }
    }

    /// Test-Set2 pads its averaged images with white; everything else with 0.
    pub fn pad_value(self) -> u8 {
        match self {
            DatasetScheme::Test2 => 255,
            _ => 0,
        }
    }

    pub fn plan(self, height: usize, width: usize, tile: usize) -> Result<TilePlan> {
        Ok(tile_plan(height, width, tile, self.stride(tile))?.with_pad_value(self.pad_value()))
    }
}

impl fmt::Display for DatasetScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetScheme::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset scheme `{s}` (expected set1..set6, test1, test2)")))
    }
}

/// The images a scheme tiles for one pair, with their source ids.
pub fn scheme_views(id: &str, ppl: &RgbImage, xpl: &RgbImage, scheme: DatasetScheme) -> Result<Vec<(String, RgbImage)>> {
    scheme
        .views()
        .iter()
        .map(|&v| {
            let img = match v {
                View::Ppl => ppl.clone(),
                View::Xpl => xpl.clone(),
                View::Average => average_images(ppl, xpl)?,
            };
            Ok((format!("{id}_{}", v.suffix()), img))
        })
        .collect()
}

/// Samples plus the plan used for every source image.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub scheme: DatasetScheme,
    pub tile: usize,
    pub sources: Vec<(String, TilePlan)>,
    pub samples: Vec<Sample>,
}

pub fn prepare_dataset(pairs: &[ImagePair], scheme: DatasetScheme, tile: usize) -> Result<PreparedDataset> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no image pairs to build a dataset from".into()));
    }
    let mut sources = Vec::new();
    let mut samples = Vec::new();
    for pair in pairs {
        pair.validate()?;
        let mask = binarize_mask(&pair.mask);
        let (h, w) = pair.dims();
        let plan = scheme.plan(h, w, tile)?;
        let views = scheme_views(&pair.id, &pair.ppl, &pair.xpl, scheme)?;
        for (source, img) in views {
            samples.extend(extract_tiles(&source, &img, &mask, &plan)?);
            sources.push((source, plan.clone()));
        }
    }
    Ok(PreparedDataset {
        scheme,
        tile,
        sources,
        samples,
    })
}

/// Samples in pair order, and within a pair PPL before XPL, each in plan
/// order. Uses 256×256 tiles.
pub fn build_dataset(pairs: &[ImagePair], scheme: DatasetScheme) -> Result<Vec<Sample>> {
    build_dataset_with_tile(pairs, scheme, DEFAULT_TILE)
}

pub fn build_dataset_with_tile(pairs: &[ImagePair], scheme: DatasetScheme, tile: usize) -> Result<Vec<Sample>> {
    Ok(prepare_dataset(pairs, scheme, tile)?.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    fn pair(h: u32, w: u32) -> ImagePair {
        ImagePair {
            id: "p".into(),
            ppl: RgbImage::from_pixel(w, h, Rgb([200, 10, 10])),
            xpl: RgbImage::from_pixel(w, h, Rgb([100, 20, 11])),
            mask: GrayImage::from_pixel(w, h, Luma([255])),
        }
    }

    #[test]
    fn strides_and_padding() {
        assert_eq!(DatasetScheme::Set1.stride(256), 256);
        assert_eq!(DatasetScheme::Set2.stride(256), 128);
        assert_eq!(DatasetScheme::Set6.stride(256), 64);
        assert_eq!(DatasetScheme::Test1.stride(256), 256);
        assert_eq!(DatasetScheme::Test2.pad_value(), 255);
        assert_eq!(DatasetScheme::Set4.pad_value(), 0);
    }

    #[test]
    fn one_square_pair_gives_eight_set1_samples() {
        let s = build_dataset(&[pair(512, 512)], DatasetScheme::Set1).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s[0].source, "p_ppl");
        assert_eq!(s[4].source, "p_xpl");
        let s = build_dataset(&[pair(512, 512)], DatasetScheme::Set4).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].source, "p_avg");
        assert_eq!(s[0].image[0], 150);
    }

    #[test]
    fn test2_pads_white() {
        let s = build_dataset_with_tile(&[pair(40, 40)], DatasetScheme::Test2, 32).unwrap();
        assert_eq!(s.len(), 4);
        let last = &s[3];
        assert_eq!(last.image[0], 150);
        assert_eq!(last.image[32 * 32 - 1], 255);
        assert_eq!(last.mask[32 * 32 - 1], 0);
    }

    #[test]
    fn parse_and_reject() {
        for s in DatasetScheme::ALL {
            assert_eq!(s.as_str().parse::<DatasetScheme>().unwrap(), s);
        }
        assert!("set7".parse::<DatasetScheme>().is_err());
        assert!(build_dataset(&[], DatasetScheme::Set1).is_err());
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let mut p = pair(64, 64);
        p.mask = GrayImage::new(32, 64);
        assert!(build_dataset_with_tile(&[p], DatasetScheme::Set1, 32).is_err());
    }
}
