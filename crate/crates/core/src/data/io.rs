//! Dataset export and import.
//!
//! Layout of an exported directory:
//!
//! ```text
//! manifest.csv        scene_id,family,level,score,path   (one row per image)
//! dataset.json        generator config, label mapping, pristine paths
//! images/*.png        16-bit RGB, lossless
//! pristine/*.png      per-scene pristine, for labelling only
//! ```
//!
//! Pixels live on the 16-bit grid, so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetConfig, DistortionSpec, Family, Image, LabeledImage, Scene, PIXEL_LEVELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_HEADER: &str = "scene_id,family,level,score,path";
const FORMAT_VERSION: u32 = 1;
const LABEL_MAPPING: &str = "score = (mean over RGB channels of global SSIM(pristine, image) + 1) / 2";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    scene_id: u32,
    family: Family,
    level: u8,
    score: f64,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    label_mapping: String,
    config: DatasetConfig,
    /// `(scene_id, relative path)` of each pristine.
    pristine: Vec<(u32, String)>,
}

fn write_png(img: &Image, path: &Path) -> Result<()> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::Data(format!("PNG export needs [3, H, W], got {:?}", img.shape())));
    };
    let d = img.data();
    let plane = h * w;
    let buf = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb(std::array::from_fn(|c| (d[c * plane + i] * PIXEL_LEVELS as f32).round() as u16))
    });
    buf.save(path).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })
}

fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })?;
    let img = img.into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / PIXEL_LEVELS as f32;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

fn image_name(img: &LabeledImage) -> String {
    format!("images/s{:04}_{}_{}.png", img.scene_id, img.distortion.family, img.distortion.level)
}

pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["images", "pristine"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest_path = dir.join("manifest.csv");
    let mut wtr = csv::Writer::from_path(&manifest_path).map_err(|e| csv_err(&manifest_path, e))?;
    let mut pristine = Vec::with_capacity(dataset.scenes.len());
    for scene in &dataset.scenes {
        let rel = format!("pristine/s{:04}.png", scene.scene_id);
        write_png(&scene.pristine, &dir.join(&rel))?;
        pristine.push((scene.scene_id, rel));
        for img in &scene.images {
            let rel = image_name(img);
            write_png(&img.pixels, &dir.join(&rel))?;
            let row = ManifestRow {
                scene_id: img.scene_id,
                family: img.distortion.family,
                level: img.distortion.level,
                score: img.score,
                path: rel,
            };
            wtr.serialize(row).map_err(|e| csv_err(&manifest_path, e))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        label_mapping: LABEL_MAPPING.into(),
        config: dataset.config.clone(),
        pristine,
    };
    let meta_path = dir.join("dataset.json");
    let json = serde_json::to_string_pretty(&meta).expect("dataset metadata serializes");
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format { path: path.into(), message: e.to_string() }
    }
}

pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("dataset.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format { path: meta_path.clone(), message: e.to_string() })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: meta.format_version, expected: FORMAT_VERSION });
    }

    let mut scenes: Vec<Scene> = meta
        .pristine
        .iter()
        .map(|(id, rel)| Ok(Scene { scene_id: *id, pristine: read_png(&dir.join(rel))?, images: Vec::new() }))
        .collect::<Result<_>>()?;

    let manifest_path = dir.join("manifest.csv");
    let mut rdr = csv::Reader::from_path(&manifest_path).map_err(|e| csv_err(&manifest_path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(&manifest_path, e))?.iter().collect::<Vec<_>>().join(",");
    if header != MANIFEST_HEADER {
        return Err(Error::Format { path: manifest_path, message: format!("expected header {MANIFEST_HEADER:?}, got {header:?}") });
    }
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| csv_err(&manifest_path, e))?;
        let scene = scenes.iter_mut().find(|s| s.scene_id == row.scene_id).ok_or_else(|| Error::Format {
            path: manifest_path.clone(),
            message: format!("image {} belongs to unknown scene {}", row.path, row.scene_id),
        })?;
        scene.images.push(LabeledImage {
            pixels: read_png(&dir.join(&row.path))?,
            scene_id: row.scene_id,
            distortion: DistortionSpec { family: row.family, level: row.level },
            score: row.score,
        });
    }
    Ok(Dataset { config: meta.config, scenes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_dataset;

    #[test]
    fn round_trip_is_lossless() {
        let config = DatasetConfig { scenes: 2, levels: vec![2, 5], image_size: 64, seed: 7, ..Default::default() };
        let ds = build_dataset(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().next(), Some(MANIFEST_HEADER));
        assert_eq!(import_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_directory_is_io() {
        let err = import_dataset(Path::new("/nonexistent/priq")).unwrap_err();
        assert!(err.is_io());
    }
}
