//! File formats: 8-bit RGB PNG images, single-channel PNG label maps, raw score dumps.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, ScoreMap};

fn codec_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

/// Reads any 8-bit PNG and converts it to RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| codec_err(path, e))?;
    let rgb = dynimg.into_rgb8();
    let (width, height) = rgb.dimensions();
    Ok(Image {
        width,
        height,
        data: rgb.into_raw(),
    })
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    img.check_shape()?;
    let buf = RgbImage::from_raw(img.width, img.height, img.data.clone())
        .ok_or_else(|| Error::Structural("image buffer size mismatch".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

/// Reads a label map stored as a single-channel 8-bit PNG whose sample is the class index.
pub fn read_labels(path: &Path, taxonomy: &str) -> Result<LabelMap> {
    let dynimg = image::open(path).map_err(|e| codec_err(path, e))?;
    let gray = match dynimg {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Data(format!(
                "{}: label maps must be 8-bit single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (width, height) = gray.dimensions();
    LabelMap::new(width, height, gray.into_raw(), taxonomy)
}

pub fn write_labels(path: &Path, map: &LabelMap) -> Result<()> {
    map.check_shape()?;
    let buf = GrayImage::from_raw(map.width, map.height, map.data.clone())
        .ok_or_else(|| Error::Structural("label buffer size mismatch".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub width: u32,
    pub height: u32,
    pub classes: usize,
}

/// Writes `<stem>.f32` (little-endian 32-bit reals, row-major, channel-last) and
/// `<stem>.json` with the dimensions.
pub fn write_score_dump(dir: &Path, stem: &str, map: &ScoreMap) -> Result<()> {
    map.check_shape()?;
    let mut raw = Vec::with_capacity(map.data.len() * 4);
    for v in &map.data {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let bin = dir.join(format!("{stem}.f32"));
    fs::write(&bin, raw).map_err(|e| Error::io(&bin, e))?;
    let sidecar = ScoreSidecar {
        width: map.width,
        height: map.height,
        classes: map.num_classes,
    };
    let meta = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string(&sidecar).expect("sidecar serializes");
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
}

pub fn read_score_dump(dir: &Path, stem: &str) -> Result<ScoreMap> {
    let meta = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let sidecar: ScoreSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", meta.display())))?;
    let bin = dir.join(format!("{stem}.f32"));
    let raw = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if raw.len() % 4 != 0 {
        return Err(Error::Structural(format!(
            "{}: length {} is not a multiple of 4",
            bin.display(),
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    ScoreMap::new(sidecar.width, sidecar.height, sidecar.classes, data)
}
