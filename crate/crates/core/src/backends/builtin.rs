//! Rule-based segmenters used as deterministic stand-ins for trained models.

use serde::{Deserialize, Serialize};

use super::{Concurrency, SegmenterBackend};
use crate::error::{Error, Result};
use crate::raster::{Image, ScoreMap};
use crate::taxonomy::{damage, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorRule {
    pub color: [u8; 3],
    /// Per-channel absolute tolerance.
    #[serde(default)]
    pub tolerance: [u8; 3],
    pub class: u8,
}

impl ColorRule {
    pub fn matches(&self, px: [u8; 3]) -> bool {
        (0..3).all(|c| px[c].abs_diff(self.color[c]) <= self.tolerance[c])
    }
}

/// Ordered colour rules; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorRuleSet {
    pub rules: Vec<ColorRule>,
    #[serde(default)]
    pub default_class: u8,
    pub num_classes: usize,
}

impl ColorRuleSet {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("colour rules need at least one class".into()));
        }
        let k = self.num_classes;
        if usize::from(self.default_class) >= k {
            return Err(Error::Config(format!(
                "default class {} outside {k} classes",
                self.default_class
            )));
        }
        if let Some(r) = self.rules.iter().find(|r| usize::from(r.class) >= k) {
            return Err(Error::Config(format!("rule class {} outside {k} classes", r.class)));
        }
        Ok(())
    }

    pub fn classify(&self, px: [u8; 3]) -> u8 {
        self.rules
            .iter()
            .find(|r| r.matches(px))
            .map_or(self.default_class, |r| r.class)
    }
}

fn one_hot_from<F: Fn([u8; 3]) -> u8>(img: &Image, k: usize, classify: F) -> ScoreMap {
    let mut out = ScoreMap::zeros(img.width, img.height, k);
    for (i, px) in img.pixels().enumerate() {
        out.data[i * k + usize::from(classify(px))] = 1.0;
    }
    out
}

pub fn color_rule_segment(img: &Image, rules: &ColorRuleSet) -> ScoreMap {
    one_hot_from(img, rules.num_classes, |px| rules.classify(px))
}

/// Integer BT.601 luminance.
pub fn luma(px: [u8; 3]) -> u8 {
    ((299 * u32::from(px[0]) + 587 * u32::from(px[1]) + 114 * u32::from(px[2])) / 1000) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarknessParams {
    /// Pixels with luminance strictly below this are concrete damage.
    pub luma_threshold: u8,
    pub rebar_color: [u8; 3],
    pub rebar_tolerance: [u8; 3],
}

impl Default for DarknessParams {
    fn default() -> Self {
        DarknessParams {
            luma_threshold: 70,
            rebar_color: [150, 80, 40],
            rebar_tolerance: [24, 24, 24],
        }
    }
}

impl DarknessParams {
    pub fn classify(&self, px: [u8; 3]) -> u8 {
        let rebar = ColorRule {
            color: self.rebar_color,
            tolerance: self.rebar_tolerance,
            class: damage::EXPOSED_REBAR,
        };
        if luma(px) < self.luma_threshold {
            damage::CONCRETE_DAMAGE
        } else if rebar.matches(px) {
            damage::EXPOSED_REBAR
        } else {
            damage::NON_DAMAGE
        }
    }
}

pub fn darkness_damage_segment(img: &Image, params: &DarknessParams) -> ScoreMap {
    one_hot_from(img, damage::NUM_CLASSES, |px| params.classify(px))
}

#[derive(Debug, Clone)]
pub struct ColorRuleBackend {
    name: String,
    task: Task,
    rules: ColorRuleSet,
}

impl ColorRuleBackend {
    pub fn new(name: impl Into<String>, task: Task, rules: ColorRuleSet) -> Result<Self> {
        rules.validate()?;
        Ok(ColorRuleBackend {
            name: name.into(),
            task,
            rules,
        })
    }

    pub fn rules(&self) -> &ColorRuleSet {
        &self.rules
    }
}

impl SegmenterBackend for ColorRuleBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        self.task
    }

    fn num_classes(&self) -> usize {
        self.rules.num_classes
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        Ok(color_rule_segment(tile, &self.rules))
    }
}

#[derive(Debug, Clone)]
pub struct DarknessBackend {
    name: String,
    params: DarknessParams,
}

impl DarknessBackend {
    pub fn new(name: impl Into<String>, params: DarknessParams) -> Self {
        DarknessBackend {
            name: name.into(),
            params,
        }
    }
}

impl SegmenterBackend for DarknessBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        Task::Damage
    }

    fn num_classes(&self) -> usize {
        damage::NUM_CLASSES
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        Ok(darkness_damage_segment(tile, &self.params))
    }
}

/// A coarse-output damage detector for exercising multi-scale inference.
///
/// The tile is split into `stride`x`stride` cells anchored at the tile origin. Each pixel
/// gets the verdict of [`DarknessParams::classify`], cells pool the verdicts (mean or max)
/// and cell scores are upsampled bilinearly around cell centres, so structures thinner than
/// a cell are smeared at native scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StridedDarknessParams {
    pub luma_threshold: u8,
    pub rebar_color: [u8; 3],
    pub rebar_tolerance: [u8; 3],
    pub stride: u32,
    pub pooling: CellPooling,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellPooling {
    /// Class score is the fraction of cell pixels with that verdict.
    #[default]
    Mean,
    /// A damage class scores 1 if any pixel of the cell shows it; non-damage scores 1 only
    /// in cells without damage.
    Max,
}

impl Default for StridedDarknessParams {
    fn default() -> Self {
        let d = DarknessParams::default();
        StridedDarknessParams {
            luma_threshold: d.luma_threshold,
            rebar_color: d.rebar_color,
            rebar_tolerance: d.rebar_tolerance,
            stride: 4,
            pooling: CellPooling::Mean,
        }
    }
}

impl StridedDarknessParams {
    fn pixel_rule(&self) -> DarknessParams {
        DarknessParams {
            luma_threshold: self.luma_threshold,
            rebar_color: self.rebar_color,
            rebar_tolerance: self.rebar_tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StridedDarknessBackend {
    name: String,
    params: StridedDarknessParams,
}

impl StridedDarknessBackend {
    pub fn new(name: impl Into<String>, params: StridedDarknessParams) -> Result<Self> {
        if params.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(StridedDarknessBackend {
            name: name.into(),
            params,
        })
    }
}

fn cell_taps(size: u32, stride: u32) -> Vec<(usize, usize, f32)> {
    // Cell i covers [i*stride, min((i+1)*stride, size)); its centre is the midpoint.
    let cells = size.div_ceil(stride);
    let centre = |i: u32| -> f64 {
        let lo = f64::from(i * stride);
        let hi = f64::from(((i + 1) * stride).min(size));
        (lo + hi) / 2.0 - 0.5
    };
    (0..size)
        .map(|p| {
            let p = f64::from(p);
            let mut i = 0;
            while i + 1 < cells && centre(i + 1) <= p {
                i += 1;
            }
            let j = (i + 1).min(cells - 1);
            let frac = if j == i || p <= centre(i) {
                0.0
            } else {
                ((p - centre(i)) / (centre(j) - centre(i))).min(1.0)
            };
            (i as usize, j as usize, frac as f32)
        })
        .collect()
}

impl SegmenterBackend for StridedDarknessBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        Task::Damage
    }

    fn num_classes(&self) -> usize {
        damage::NUM_CLASSES
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        let k = damage::NUM_CLASSES;
        let s = self.params.stride;
        let rule = self.params.pixel_rule();
        let (cw, ch) = (tile.width.div_ceil(s) as usize, tile.height.div_ceil(s) as usize);
        let mut pooled = vec![[0f32; 3]; cw * ch];
        let mut sizes = vec![0u32; cw * ch];
        for y in 0..tile.height {
            for x in 0..tile.width {
                let cell = (y / s) as usize * cw + (x / s) as usize;
                let class = usize::from(rule.classify(tile.pixel(x, y)));
                match self.params.pooling {
                    CellPooling::Mean => pooled[cell][class] += 1.0,
                    CellPooling::Max => pooled[cell][class] = 1.0,
                }
                sizes[cell] += 1;
            }
        }
        let cell_scores: Vec<[f32; 3]> = pooled
            .iter()
            .zip(&sizes)
            .map(|(a, &n)| match self.params.pooling {
                CellPooling::Mean => {
                    let n = n as f32;
                    [a[0] / n, a[1] / n, a[2] / n]
                }
                CellPooling::Max if a[1] + a[2] > 0.0 => [0.0, a[1], a[2]],
                CellPooling::Max => [1.0, 0.0, 0.0],
            })
            .collect();
        let xs = cell_taps(tile.width, s);
        let ys = cell_taps(tile.height, s);
        let mut out = ScoreMap::zeros(tile.width, tile.height, k);
        let mut i = 0;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let (a, b) = (&cell_scores[y0 * cw + x0], &cell_scores[y0 * cw + x1]);
                let (d, e) = (&cell_scores[y1 * cw + x0], &cell_scores[y1 * cw + x1]);
                for c in 0..k {
                    let top = (1.0 - fx) * a[c] + fx * b[c];
                    let bot = (1.0 - fx) * d[c] + fx * e[c];
                    out.data[i] = (1.0 - fy) * top + fy * bot;
                    i += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Emits score 1.0 for one class everywhere.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    name: String,
    task: Task,
    num_classes: usize,
    class: usize,
    concurrency: Concurrency,
}

impl ConstantBackend {
    pub fn new(name: impl Into<String>, task: Task, num_classes: usize, class: usize) -> Self {
        assert!(class < num_classes);
        ConstantBackend {
            name: name.into(),
            task,
            num_classes,
            class,
            concurrency: Concurrency::Parallel,
        }
    }
}

impl SegmenterBackend for ConstantBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        self.task
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn concurrency(&self) -> Concurrency {
        self.concurrency
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        let mut out = ScoreMap::zeros(tile.width, tile.height, self.num_classes);
        for px in out.data.chunks_exact_mut(self.num_classes) {
            px[self.class] = 1.0;
        }
        Ok(out)
    }
}

/// Three-class model whose scores are the tile's RGB bytes; lets a protocol round trip
/// be checked value by value.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    name: String,
    task: Task,
}

impl EchoBackend {
    pub fn new(name: impl Into<String>, task: Task) -> Self {
        EchoBackend { name: name.into(), task }
    }
}

impl SegmenterBackend for EchoBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> Task {
        self.task
    }

    fn num_classes(&self) -> usize {
        3
    }

    fn infer(&self, tile: &Image) -> Result<ScoreMap> {
        tile.check_shape()?;
        let data = tile.data.iter().map(|&v| f32::from(v)).collect();
        ScoreMap::new(tile.width, tile.height, 3, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::component;

    fn labels_of(map: &ScoreMap) -> Vec<usize> {
        map.data
            .chunks_exact(map.num_classes)
            .map(|s| s.iter().position(|&v| v == 1.0).unwrap())
            .collect()
    }

    fn rules() -> ColorRuleSet {
        ColorRuleSet {
            rules: vec![
                ColorRule { color: [200, 0, 0], tolerance: [0; 3], class: 1 },
                ColorRule { color: [0, 200, 0], tolerance: [10; 3], class: 2 },
                ColorRule { color: [0, 205, 0], tolerance: [10; 3], class: 3 },
            ],
            default_class: 0,
            num_classes: 4,
        }
    }

    #[test]
    fn exact_colour_is_one_hot() {
        let img = Image::filled(3, 2, [200, 0, 0]);
        let out = color_rule_segment(&img, &rules());
        assert_eq!(labels_of(&out), vec![1; 6]);
        assert!(out.data.chunks_exact(4).all(|s| s.iter().sum::<f32>() == 1.0));
    }

    #[test]
    fn unmatched_colour_is_default_and_first_match_wins() {
        let out = color_rule_segment(&Image::filled(2, 2, [1, 2, 3]), &rules());
        assert_eq!(labels_of(&out), vec![0; 4]);
        // [0,203,0] matches both green rules; the first one wins.
        let out = color_rule_segment(&Image::filled(1, 1, [0, 203, 0]), &rules());
        assert_eq!(labels_of(&out), vec![2]);
    }

    #[test]
    fn invalid_rule_sets_are_rejected() {
        let mut r = rules();
        r.default_class = 4;
        assert!(ColorRuleBackend::new("x", Task::Component, r).is_err());
        let mut r = rules();
        r.rules[0].class = component::NUM_CLASSES as u8;
        assert!(r.validate().is_err());
    }

    #[test]
    fn darkness_extremes() {
        let p = DarknessParams::default();
        let white = darkness_damage_segment(&Image::filled(2, 2, [255; 3]), &p);
        assert_eq!(labels_of(&white), vec![0; 4]);
        let black = darkness_damage_segment(&Image::filled(2, 2, [0; 3]), &p);
        assert_eq!(labels_of(&black), vec![1; 4]);
        let rust = darkness_damage_segment(&Image::filled(1, 1, p.rebar_color), &p);
        assert_eq!(labels_of(&rust), vec![2]);
    }

    #[test]
    fn darkness_matches_luma_oracle() {
        let p = DarknessParams { luma_threshold: 100, ..DarknessParams::default() };
        let data: Vec<u8> = (0..=255u8).step_by(5).flat_map(|v| [v, 255 - v, v / 2]).collect();
        let n = data.len() as u32 / 3;
        let img = Image::new(n, 1, data).unwrap();
        let out = labels_of(&darkness_damage_segment(&img, &p));
        for (i, px) in img.pixels().enumerate() {
            let weighted = 299.0 * f64::from(px[0]) + 587.0 * f64::from(px[1]) + 114.0 * f64::from(px[2]);
            let y = (weighted / 1000.0).floor();
            let rebar = (0..3).all(|c| px[c].abs_diff(p.rebar_color[c]) <= p.rebar_tolerance[c]);
            let want = if y < 100.0 { 1 } else if rebar { 2 } else { 0 };
            assert_eq!(out[i], want, "pixel {px:?}");
        }
    }

    fn strided(stride: u32) -> StridedDarknessBackend {
        pooled(stride, CellPooling::Mean)
    }

    fn pooled(stride: u32, pooling: CellPooling) -> StridedDarknessBackend {
        StridedDarknessBackend::new(
            "coarse",
            StridedDarknessParams {
                stride,
                pooling,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn strided_stride_one_equals_pixel_rule() {
        let data: Vec<u8> = (0..48u32).flat_map(|i| [(i * 37 % 256) as u8, (i * 11 % 256) as u8, (i * 5 % 256) as u8]).collect();
        let img = Image::new(8, 6, data).unwrap();
        let fine = darkness_damage_segment(&img, &DarknessParams::default());
        for pooling in [CellPooling::Mean, CellPooling::Max] {
            assert!(pooled(1, pooling).infer(&img).unwrap().bitwise_eq(&fine));
        }
    }

    #[test]
    fn max_pooling_flags_whole_cells() {
        let mut img = Image::filled(16, 16, [200; 3]);
        for y in 0..16 {
            img.set_pixel(5, y, [20; 3]);
        }
        let out = pooled(4, CellPooling::Max).infer(&img).unwrap();
        // Cell centres sit at 1.5, 5.5, 9.5; only the middle one is flagged, so crack
        // wins exactly where the interpolation weight of that centre exceeds one half.
        for x in 0..16 {
            let w = (1.0 - (x as f32 - 5.5).abs() / 4.0).max(0.0);
            assert_eq!(out.scores(x, 9), [1.0 - w, w, 0.0], "x = {x}");
            assert_eq!(out.scores(x, 9)[1] > 0.5, (4..8).contains(&x));
        }
    }

    #[test]
    fn strided_misses_thin_lines_and_keeps_wide_ones() {
        let mut img = Image::filled(16, 16, [200; 3]);
        for y in 0..16 {
            img.set_pixel(5, y, [20; 3]);
        }
        let out = strided(4).infer(&img).unwrap();
        // One dark column in a 4-wide cell is a quarter of the cell: never the argmax.
        assert!(out.data.chunks_exact(3).all(|s| s[0] > s[1]));
        for y in 0..16 {
            for x in 4..8 {
                img.set_pixel(x, y, [20; 3]);
            }
        }
        let out = strided(4).infer(&img).unwrap();
        assert!(out.scores(5, 5)[1] > out.scores(5, 5)[0]);
        // Scores stay a convex combination.
        assert!(out.data.chunks_exact(3).all(|s| (s.iter().sum::<f32>() - 1.0).abs() < 1e-5));
    }

    #[test]
    fn strided_handles_ragged_tiles() {
        let out = strided(4).infer(&Image::filled(7, 5, [0; 3])).unwrap();
        assert_eq!((out.width, out.height), (7, 5));
        assert!(out.data.chunks_exact(3).all(|s| s == [0.0, 1.0, 0.0]));
        let zero = StridedDarknessParams { stride: 0, ..Default::default() };
        assert!(StridedDarknessBackend::new("x", zero).is_err());
    }

    #[test]
    fn constant_backend_fills_one_class() {
        let b = ConstantBackend::new("echo", Task::Damage, 3, 0);
        let out = b.infer(&Image::filled(8, 8, [9; 3])).unwrap();
        assert_eq!(labels_of(&out), vec![0; 64]);
    }

    #[test]
    fn echo_backend_returns_the_bytes() {
        let img = Image::new(2, 1, vec![0, 7, 255, 1, 2, 3]).unwrap();
        let out = EchoBackend::new("echo", Task::Damage).infer(&img).unwrap();
        assert_eq!(out.data, [0.0, 7.0, 255.0, 1.0, 2.0, 3.0]);
    }
}
