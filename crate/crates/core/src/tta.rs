//! Sliding-window tiling, multi-scale test-time fusion, argmax decoding and majority voting.
//!
//! Fusion is bit-stable: tiles may be inferred concurrently, but their scores are
//! accumulated in row-major tile order and scales are summed in listed order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Concurrency, SegmenterBackend};
use crate::error::{Error, Result};
use crate::raster::{resize_image, resize_scores, scaled_len, Image, LabelMap, ScoreMap};
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub width: u32,
    pub height: u32,
    pub crop: u32,
    pub stride: u32,
    /// Tile size after clipping to the image.
    pub tile_w: u32,
    pub tile_h: u32,
    /// Top-left offsets, row-major.
    pub tiles: Vec<(u32, u32)>,
}

fn axis_offsets(size: u32, crop: u32, stride: u32) -> Vec<u32> {
    if size <= crop {
        return vec![0];
    }
    let last = size - crop;
    let mut offsets = Vec::new();
    let mut o = 0u32;
    loop {
        offsets.push(o.min(last));
        if o >= last {
            break;
        }
        o += stride;
    }
    offsets.dedup();
    offsets
}

pub fn plan_tiles(width: u32, height: u32, crop: u32, stride: u32) -> Result<TilePlan> {
    if crop == 0 {
        return Err(Error::invalid("crop must be >= 1"));
    }
    if stride == 0 || stride > crop {
        return Err(Error::invalid(format!(
            "stride {stride} must satisfy 1 <= stride <= crop ({crop})"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("cannot tile a {width}x{height} image")));
    }
    let xs = axis_offsets(width, crop, stride);
    let ys = axis_offsets(height, crop, stride);
    let tiles = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(TilePlan {
        width,
        height,
        crop,
        stride,
        tile_w: crop.min(width),
        tile_h: crop.min(height),
        tiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleSet(Vec<f64>);

impl ScaleSet {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("scale set is empty".into()));
        }
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("scale {bad} is not a positive ratio")));
        }
        Ok(ScaleSet(scales))
    }

    pub fn single() -> Self {
        ScaleSet(vec![1.0])
    }

    pub fn scales(&self) -> &[f64] {
        &self.0
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet(vec![0.75, 1.0, 1.25])
    }
}

impl TryFrom<Vec<f64>> for ScaleSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ScaleSet::new(v)
    }
}

impl From<ScaleSet> for Vec<f64> {
    fn from(s: ScaleSet) -> Self {
        s.0
    }
}

/// Sum-and-count blending buffer. The first contribution to a pixel is copied rather than
/// added to zero so that single-coverage pixels keep their exact bits.
struct Blend {
    sum: ScoreMap,
    count: Vec<u32>,
}

impl Blend {
    fn new(w: u32, h: u32, k: usize) -> Self {
        Blend {
            sum: ScoreMap::zeros(w, h, k),
            count: vec![0; w as usize * h as usize],
        }
    }

    fn add_tile(&mut self, x0: u32, y0: u32, tile: &ScoreMap) {
        let k = self.sum.num_classes;
        let w = self.sum.width as usize;
        for ty in 0..tile.height as usize {
            for tx in 0..tile.width as usize {
                let p = (y0 as usize + ty) * w + x0 as usize + tx;
                let src = &tile.data[(ty * tile.width as usize + tx) * k..][..k];
                let dst = &mut self.sum.data[p * k..][..k];
                if self.count[p] == 0 {
                    dst.copy_from_slice(src);
                } else {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.count[p] += 1;
            }
        }
    }

    fn finish(mut self) -> ScoreMap {
        let k = self.sum.num_classes;
        for (px, &n) in self.sum.data.chunks_exact_mut(k).zip(&self.count) {
            debug_assert!(n > 0, "tile plan left a pixel uncovered");
            if n > 1 {
                let n = n as f32;
                px.iter_mut().for_each(|v| *v /= n);
            }
        }
        self.sum
    }
}

fn infer_tile(backend: &dyn SegmenterBackend, img: &Image, plan: &TilePlan, idx: usize, scale: f64) -> Result<ScoreMap> {
    let (x, y) = plan.tiles[idx];
    let tile = img.crop(x, y, plan.tile_w, plan.tile_h);
    let ctx = || format!("scale {scale}, tile #{idx} at ({x},{y})");
    let out = backend
        .infer(&tile)
        .map_err(|e| e.in_backend(backend.name(), ctx()))?;
    if out.width != tile.width || out.height != tile.height || out.num_classes != backend.num_classes() {
        return Err(Error::Data(format!(
            "returned {}x{}x{} scores for a {}x{} tile with {} classes",
            out.width,
            out.height,
            out.num_classes,
            tile.width,
            tile.height,
            backend.num_classes()
        ))
        .in_backend(backend.name(), ctx()));
    }
    out.check_shape().map_err(|e| e.in_backend(backend.name(), ctx()))?;
    Ok(out)
}

/// Sliding-window inference over one image at its own resolution.
pub fn infer_tiled(backend: &dyn SegmenterBackend, img: &Image, crop: u32, stride: u32, scale: f64) -> Result<ScoreMap> {
    let plan = plan_tiles(img.width, img.height, crop, stride)?;
    if let Some(max) = backend.max_tile() {
        if plan.tile_w > max || plan.tile_h > max {
            return Err(Error::Config(format!(
                "crop {crop} exceeds max_tile {max}"
            ))
            .in_backend(backend.name(), format!("scale {scale}")));
        }
    }
    let n = plan.tiles.len();
    let tiles: Vec<ScoreMap> = if backend.concurrency() == Concurrency::Parallel && n > 1 {
        (0..n)
            .into_par_iter()
            .map(|i| infer_tile(backend, img, &plan, i, scale))
            .collect::<Result<_>>()?
    } else {
        (0..n)
            .map(|i| infer_tile(backend, img, &plan, i, scale))
            .collect::<Result<_>>()?
    };
    let mut blend = Blend::new(img.width, img.height, backend.num_classes());
    for (&(x, y), tile) in plan.tiles.iter().zip(&tiles) {
        blend.add_tile(x, y, tile);
    }
    Ok(blend.finish())
}

/// Runs the backend over every scale and sums the per-scale maps at the original
/// resolution.
pub fn infer_multiscale(
    img: &Image,
    backend: &dyn SegmenterBackend,
    scales: &ScaleSet,
    crop: u32,
    stride: u32,
) -> Result<ScoreMap> {
    img.check_shape()?;
    let mut fused: Option<ScoreMap> = None;
    for &s in scales.scales() {
        let (sw, sh) = (scaled_len(img.width, s), scaled_len(img.height, s));
        let scaled = resize_image(img, sw, sh)?;
        let scores = infer_tiled(backend, &scaled, crop, stride, s)?;
        let back = resize_scores(&scores, img.width, img.height)?;
        match fused.as_mut() {
            None => fused = Some(back),
            Some(acc) => acc.data.iter_mut().zip(&back.data).for_each(|(a, b)| *a += b),
        }
    }
    Ok(fused.expect("scale set is non-empty"))
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labels(scores: &ScoreMap, tax: &ClassTaxonomy) -> Result<LabelMap> {
    scores.check_shape()?;
    if scores.num_classes != tax.num_classes() {
        return Err(Error::invalid(format!(
            "score map has {} classes, taxonomy `{}` has {}",
            scores.num_classes,
            tax.task_name(),
            tax.num_classes()
        )));
    }
    let data = scores
        .data
        .chunks_exact(scores.num_classes)
        .enumerate()
        .map(|(i, px)| {
            let mut best = 0usize;
            for (c, &v) in px.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite score {v} at pixel {i}, class {c}")));
                }
                if v > px[best] {
                    best = c;
                }
            }
            Ok(best as u8)
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(LabelMap {
        width: scores.width,
        height: scores.height,
        data,
        taxonomy: tax.task_name().to_string(),
    })
}

/// Per-pixel mode across models; ties go to the lowest class index.
pub fn majority_vote(preds: &[LabelMap]) -> Result<LabelMap> {
    let first = preds
        .first()
        .ok_or_else(|| Error::invalid("majority vote needs at least one prediction"))?;
    for (i, p) in preds.iter().enumerate() {
        p.check_shape()?;
        if !p.same_dims(first.width, first.height) {
            return Err(Error::invalid(format!(
                "prediction #{i} is {}x{}, expected {}x{}",
                p.width, p.height, first.width, first.height
            )));
        }
        if p.taxonomy != first.taxonomy {
            return Err(Error::invalid(format!(
                "prediction #{i} uses taxonomy `{}`, expected `{}`",
                p.taxonomy, first.taxonomy
            )));
        }
    }
    if preds.len() == 1 {
        return Ok(first.clone());
    }
    let mut votes = [0u32; 256];
    let data = (0..first.data.len())
        .map(|i| {
            for p in preds {
                votes[usize::from(p.data[i])] += 1;
            }
            let mut best = 0usize;
            let mut best_votes = 0u32;
            for p in preds {
                let v = usize::from(p.data[i]);
                let n = votes[v];
                if n > best_votes || (n == best_votes && v < best) {
                    best = v;
                    best_votes = n;
                }
            }
            for p in preds {
                votes[usize::from(p.data[i])] = 0;
            }
            best as u8
        })
        .collect();
    Ok(LabelMap {
        width: first.width,
        height: first.height,
        data,
        taxonomy: first.taxonomy.clone(),
    })
}
