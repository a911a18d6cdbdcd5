//! PNG directories and prepared-dataset manifests.
//!
//! Raw corpora are flat directories of `<id>_ppl.png`, `<id>_xpl.png` and
//! `<id>_mask.png`. A prepared dataset is a `manifest.json` next to a
//! `tiles/` directory holding one RGB PNG and one 0/255 mask PNG per sample.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::images::{BinaryMask, ImagePair};
use super::scheme::{DatasetScheme, PreparedDataset};
use super::tiling::Sample;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const SUFFIXES: [&str; 3] = ["_ppl.png", "_xpl.png", "_mask.png"];

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.into_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.into_luma8())
}

pub fn write_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Ids that have at least one of the three files, sorted.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = SUFFIXES.iter().find_map(|s| name.strip_suffix(s)) {
            ids.insert(id.to_string());
        }
    }
    Ok(ids.into_iter().collect())
}

fn file_for(dir: &Path, id: &str, suffix: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{id}{suffix}"));
    if !path.is_file() {
        return Err(Error::MissingFile {
            id: id.to_string(),
            path,
        });
    }
    Ok(path)
}

pub fn load_pair(dir: &Path, id: &str) -> Result<ImagePair> {
    let pair = ImagePair {
        id: id.to_string(),
        ppl: read_rgb(&file_for(dir, id, SUFFIXES[0])?)?,
        xpl: read_rgb(&file_for(dir, id, SUFFIXES[1])?)?,
        mask: read_gray(&file_for(dir, id, SUFFIXES[2])?)?,
    };
    pair.validate()?;
    Ok(pair)
}

/// Every complete triple in `dir`; an incomplete one is an error naming it.
pub fn load_pairs(dir: &Path) -> Result<Vec<ImagePair>> {
    let ids = list_ids(dir)?;
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no <id>_ppl.png / <id>_xpl.png / <id>_mask.png files",
            dir.display()
        )));
    }
    ids.iter().map(|id| load_pair(dir, id)).collect()
}

/// PPL/XPL photographs without requiring a mask.
pub fn load_photos(dir: &Path) -> Result<Vec<(String, RgbImage, RgbImage)>> {
    let ids = list_ids(dir)?;
    let mut out = Vec::new();
    for id in ids {
        let ppl_path = dir.join(format!("{id}_ppl.png"));
        let xpl_path = dir.join(format!("{id}_xpl.png"));
        if !ppl_path.is_file() && !xpl_path.is_file() {
            continue;
        }
        let ppl = read_rgb(&file_for(dir, &id, SUFFIXES[0])?)?;
        let xpl = read_rgb(&file_for(dir, &id, SUFFIXES[1])?)?;
        if ppl.dimensions() != xpl.dimensions() {
            return Err(Error::Shape(format!(
                "`{id}`: ppl {:?} and xpl {:?} differ",
                ppl.dimensions(),
                xpl.dimensions()
            )));
        }
        out.push((id, ppl, xpl));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no PPL/XPL images", dir.display())));
    }
    Ok(out)
}

pub fn write_pair(dir: &Path, pair: &ImagePair) -> Result<()> {
    create_dir(dir)?;
    write_png(&dir.join(format!("{}_ppl.png", pair.id)), &pair.ppl)?;
    write_png(&dir.join(format!("{}_xpl.png", pair.id)), &pair.xpl)?;
    write_png(&dir.join(format!("{}_mask.png", pair.id)), &pair.mask)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSource {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub pad_value: u8,
    pub padded_h: usize,
    pub padded_w: usize,
    pub origins: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub source: String,
    pub origin: [usize; 2],
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: DatasetScheme,
    pub tile: usize,
    pub sources: Vec<ManifestSource>,
    pub samples: Vec<ManifestSample>,
}

/// Writes tiles and `manifest.json` into `dir`.
pub fn write_prepared(dir: &Path, data: &PreparedDataset) -> Result<Manifest> {
    let tiles = dir.join("tiles");
    create_dir(&tiles)?;
    let mut samples = Vec::with_capacity(data.samples.len());
    for (i, s) in data.samples.iter().enumerate() {
        let image = format!("tiles/{i:06}_image.png");
        let mask = format!("tiles/{i:06}_mask.png");
        write_png(&dir.join(&image), &s.image_rgb())?;
        write_png(&dir.join(&mask), &s.mask_gray())?;
        samples.push(ManifestSample {
            source: s.source.clone(),
            origin: [s.origin.0, s.origin.1],
            image,
            mask,
        });
    }
    let manifest = Manifest {
        scheme: data.scheme,
        tile: data.tile,
        sources: data
            .sources
            .iter()
            .map(|(id, p)| ManifestSource {
                id: id.clone(),
                height: p.height,
                width: p.width,
                stride: p.stride,
                pad_value: p.pad_value,
                padded_h: p.padded_h,
                padded_w: p.padded_w,
                origins: p.origins.iter().map(|&(r, c)| [r, c]).collect(),
            })
            .collect(),
        samples,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the samples of a manifest; tile paths are relative to its directory.
pub fn read_prepared(manifest_path: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let samples = manifest
        .samples
        .iter()
        .map(|m| {
            let img = read_rgb(&base.join(&m.image))?;
            let gray = read_gray(&base.join(&m.mask))?;
            let mask = super::images::binarize_mask(&gray);
            let mask = BinaryMask::new(mask.height, mask.width, mask.data)?;
            Sample::from_images(m.source.clone(), (m.origin[0], m.origin[1]), &img, &mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, prepare_dataset};
    use crate::Rng;

    #[test]
    fn prepared_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate_synthetic(&mut Rng::new(2), 2, 40, 70, 0.3).unwrap();
        let data = prepare_dataset(&pairs, DatasetScheme::Set2, 32).unwrap();
        let written = write_prepared(dir.path(), &data).unwrap();
        let (manifest, samples) = read_prepared(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, written);
        assert_eq!(samples, data.samples);
    }

    #[test]
    fn pairs_round_trip_and_missing_mask() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate_synthetic(&mut Rng::new(3), 2, 16, 24, 0.3).unwrap();
        for p in &pairs {
            write_pair(dir.path(), p).unwrap();
        }
        assert_eq!(load_pairs(dir.path()).unwrap(), pairs);
        fs::remove_file(dir.path().join("synth001_mask.png")).unwrap();
        match load_pairs(dir.path()) {
            Err(Error::MissingFile { id, .. }) => assert_eq!(id, "synth001"),
            other => panic!("{other:?}"),
        }
        assert_eq!(load_photos(dir.path()).unwrap().len(), 2);
    }
}
