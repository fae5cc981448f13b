//! Images, label maps, score maps and the deterministic resize primitives.
//!
//! All containers are row-major. [`ScoreMap`] is channel-last: the `K` scores of pixel
//! `(x, y)` live at `data[(y * width + x) * K ..][..K]`.
//!
//! Resizing uses half-pixel centers. For a destination coordinate `d` the source
//! coordinate is `(d + 0.5) * src / dst - 0.5`, computed in `f64` and clamped to
//! `[0, src - 1]`. Bilinear weights are applied in `f32`; 8-bit images round the
//! interpolated value half-up. Nearest-neighbour label resizing picks
//! `floor((d + 0.5) * src / dst)`, clamped.

use crate::error::{Error, Result};
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// RGB triples, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let img = Image { width, height, data };
        img.check_shape()?;
        Ok(img)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn check_shape(&self) -> Result<()> {
        let expected = self.pixel_count() * 3;
        if self.data.len() != expected {
            return Err(Error::Structural(format!(
                "image {}x{} needs {expected} bytes, has {}",
                self.width,
                self.height,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `w`x`h` window at `(x, y)`. The window must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Image {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        let row = self.width as usize * 3;
        for yy in y..y + h {
            let start = yy as usize * row + x as usize * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Image {
            width: w,
            height: h,
            data,
        }
    }
}

/// Per-pixel class indices (or the taxonomy's ignore index) for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
    /// `task_name` of the taxonomy the values refer to.
    pub taxonomy: String,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, data: Vec<u8>, taxonomy: impl Into<String>) -> Result<Self> {
        let map = LabelMap {
            width,
            height,
            data,
            taxonomy: taxonomy.into(),
        };
        map.check_shape()?;
        Ok(map)
    }

    pub fn filled(width: u32, height: u32, value: u8, taxonomy: impl Into<String>) -> Self {
        LabelMap {
            width,
            height,
            data: vec![value; width as usize * height as usize],
            taxonomy: taxonomy.into(),
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize;
        if self.data.len() != expected {
            return Err(Error::Structural(format!(
                "label map {}x{} needs {expected} values, has {}",
                self.width,
                self.height,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn same_dims(&self, w: u32, h: u32) -> bool {
        self.width == w && self.height == h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: u32,
    pub height: u32,
    pub num_classes: usize,
    pub data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        let map = ScoreMap {
            width,
            height,
            num_classes,
            data,
        };
        map.check_shape()?;
        if let Some(pos) = map.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite score at flat index {pos}")));
        }
        Ok(map)
    }

    pub fn zeros(width: u32, height: u32, num_classes: usize) -> Self {
        ScoreMap {
            width,
            height,
            num_classes,
            data: vec![0.0; width as usize * height as usize * num_classes],
        }
    }

    /// Lifts hard labels to a one-hot score map. Values `>= num_classes` yield an all-zero row.
    pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Self {
        let mut map = ScoreMap::zeros(labels.width, labels.height, num_classes);
        for (i, &v) in labels.data.iter().enumerate() {
            if usize::from(v) < num_classes {
                map.data[i * num_classes + usize::from(v)] = 1.0;
            }
        }
        map
    }

    pub fn check_shape(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize * self.num_classes;
        if self.num_classes == 0 {
            return Err(Error::Structural("score map has zero classes".into()));
        }
        if self.data.len() != expected {
            return Err(Error::Structural(format!(
                "score map {}x{}x{} needs {expected} values, has {}",
                self.width,
                self.height,
                self.num_classes,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn scores(&self, x: u32, y: u32) -> &[f32] {
        let i = (y as usize * self.width as usize + x as usize) * self.num_classes;
        &self.data[i..i + self.num_classes]
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &ScoreMap) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.num_classes == other.num_classes
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidLabel {
    pub x: u32,
    pub y: u32,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelValidation {
    Valid,
    Invalid(Vec<InvalidLabel>),
}

impl LabelValidation {
    pub fn is_valid(&self) -> bool {
        matches!(self, LabelValidation::Valid)
    }
}

/// Reports every pixel whose value is neither a class of `tax` nor its ignore index.
pub fn validate_label_map(map: &LabelMap, tax: &ClassTaxonomy) -> Result<LabelValidation> {
    map.check_shape()?;
    let w = map.width.max(1) as usize;
    let bad: Vec<InvalidLabel> = map
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| !tax.is_legal_label(v))
        .map(|(i, &value)| InvalidLabel {
            x: (i % w) as u32,
            y: (i / w) as u32,
            value,
        })
        .collect();
    Ok(if bad.is_empty() {
        LabelValidation::Valid
    } else {
        LabelValidation::Invalid(bad)
    })
}

/// Pixel counts for every possible 8-bit label value, ignore index included.
#[derive(Clone, PartialEq, Eq)]
pub struct ClassHistogram {
    counts: [u64; 256],
}

impl std::fmt::Debug for ClassHistogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.nonzero()).finish()
    }
}

impl Default for ClassHistogram {
    fn default() -> Self {
        ClassHistogram { counts: [0; 256] }
    }
}

impl ClassHistogram {
    pub fn count(&self, value: u8) -> u64 {
        self.counts[usize::from(value)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (u8, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as u8, c))
    }

    pub fn from_counts(pairs: impl IntoIterator<Item = (u8, u64)>) -> Self {
        let mut h = ClassHistogram::default();
        for (v, c) in pairs {
            h.counts[usize::from(v)] += c;
        }
        h
    }
}

pub fn class_histogram(map: &LabelMap) -> ClassHistogram {
    let mut h = ClassHistogram::default();
    for &v in &map.data {
        h.counts[usize::from(v)] += 1;
    }
    h
}

/// `round_half_up(scale * size)`, never below 1.
pub fn scaled_len(size: u32, scale: f64) -> u32 {
    ((scale * f64::from(size) + 0.5).floor() as u32).max(1)
}

fn check_target(w: u32, h: u32) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!("resize target {w}x{h} has a zero dimension")));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn bilinear_taps(src: u32, dst: u32) -> Vec<Tap> {
    let ratio = f64::from(src) / f64::from(dst);
    let max = f64::from(src - 1);
    (0..dst)
        .map(|d| {
            let s = ((f64::from(d) + 0.5) * ratio - 0.5).clamp(0.0, max);
            let lo = s.floor();
            Tap {
                lo: lo as usize,
                hi: ((lo as u32) + 1).min(src - 1) as usize,
                frac: (s - lo) as f32,
            }
        })
        .collect()
}

/// Bilinear resize of `channels`-interleaved samples, calling `emit` once per output sample.
fn bilinear<F>(src: &[f32], sw: u32, sh: u32, channels: usize, dw: u32, dh: u32, mut emit: F)
where
    F: FnMut(f32),
{
    let xs = bilinear_taps(sw, dw);
    let ys = bilinear_taps(sh, dh);
    let row = sw as usize * channels;
    for ty in &ys {
        let (r0, r1) = (ty.lo * row, ty.hi * row);
        let wy = ty.frac;
        for tx in &xs {
            let wx = tx.frac;
            let (c0, c1) = (tx.lo * channels, tx.hi * channels);
            for c in 0..channels {
                let top = (1.0 - wx) * src[r0 + c0 + c] + wx * src[r0 + c1 + c];
                let bottom = (1.0 - wx) * src[r1 + c0 + c] + wx * src[r1 + c1 + c];
                emit((1.0 - wy) * top + wy * bottom);
            }
        }
    }
}

pub fn resize_image(img: &Image, width: u32, height: u32) -> Result<Image> {
    check_target(width, height)?;
    img.check_shape()?;
    if img.width == width && img.height == height {
        return Ok(img.clone());
    }
    let src: Vec<f32> = img.data.iter().map(|&v| f32::from(v)).collect();
    let mut data = Vec::with_capacity(width as usize * height as usize * 3);
    bilinear(&src, img.width, img.height, 3, width, height, |v| {
        data.push(v.round().clamp(0.0, 255.0) as u8)
    });
    Ok(Image { width, height, data })
}

pub fn resize_scores(map: &ScoreMap, width: u32, height: u32) -> Result<ScoreMap> {
    check_target(width, height)?;
    map.check_shape()?;
    if map.width == width && map.height == height {
        return Ok(map.clone());
    }
    let mut data = Vec::with_capacity(width as usize * height as usize * map.num_classes);
    bilinear(
        &map.data,
        map.width,
        map.height,
        map.num_classes,
        width,
        height,
        |v| data.push(v),
    );
    Ok(ScoreMap {
        width,
        height,
        num_classes: map.num_classes,
        data,
    })
}

fn nearest_index(d: u32, src: u32, dst: u32) -> usize {
    let s = ((f64::from(d) + 0.5) * f64::from(src) / f64::from(dst)).floor() as u32;
    s.min(src - 1) as usize
}

pub fn resize_labels(map: &LabelMap, width: u32, height: u32) -> Result<LabelMap> {
    check_target(width, height)?;
    map.check_shape()?;
    if map.same_dims(width, height) {
        return Ok(map.clone());
    }
    let xs: Vec<usize> = (0..width).map(|d| nearest_index(d, map.width, width)).collect();
    let mut data = Vec::with_capacity(width as usize * height as usize);
    for dy in 0..height {
        let row = nearest_index(dy, map.height, height) * map.width as usize;
        data.extend(xs.iter().map(|&sx| map.data[row + sx]));
    }
    Ok(LabelMap {
        width,
        height,
        data,
        taxonomy: map.taxonomy.clone(),
    })
}
