//! Deterministic synthetic bridge scenes with pixel-exact component and damage labels.
//!
//! A scene is painted back to front: background, parapet, slab, beams, columns, then
//! optional rail and sleepers. Cracks and rebar blobs are drawn strictly inside columns;
//! dark distractor strokes are drawn strictly outside them. Labels are written alongside
//! the paint, so before noise every pixel colour identifies its component class (damage
//! colours identify columns).
//!
//! Every scene draws from its own RNG stream derived from `(seed, index)`, so a corpus does
//! not depend on generation order. Scenes of one simulated viaduct share their geometry
//! stream.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusEntry, CorpusIndex};
use crate::error::{Error, Result};
use crate::io::{write_image, write_labels};
use crate::raster::{Image, LabelMap};
use crate::taxonomy::{component, damage, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePalette {
    /// Colour of each component class, indexed by class.
    pub components: [[u8; 3]; component::NUM_CLASSES],
    pub crack: [u8; 3],
    pub rebar: [u8; 3],
    pub distractor: [u8; 3],
}

impl Default for ScenePalette {
    fn default() -> Self {
        ScenePalette {
            components: [
                [100, 170, 230], // non-bridge
                [220, 210, 160], // slab
                [200, 120, 90],  // beam
                [150, 150, 150], // column
                [90, 180, 90],   // nonstructural
                [210, 210, 240], // rail
                [170, 100, 190], // sleeper
            ],
            crack: [40, 35, 30],
            rebar: [150, 70, 30],
            distractor: [20, 40, 110],
        }
    }
}

impl ScenePalette {
    fn all_colors(&self) -> Vec<[u8; 3]> {
        let mut v = self.components.to_vec();
        v.extend([self.crack, self.rebar, self.distractor]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub palette: ScenePalette,
    /// Inclusive range of column counts.
    pub columns: [u32; 2],
    pub nonstructural_probability: f64,
    pub rail_probability: f64,
    /// Sleepers imply a rail.
    pub sleeper_probability: f64,
    /// Expected cracks per column.
    pub crack_density: f64,
    /// Inclusive crack stroke width range in pixels.
    pub crack_thickness: [u32; 2],
    /// Expected rebar blobs per column.
    pub rebar_density: f64,
    /// Expected dark distractor strokes per scene.
    pub distractor_density: f64,
    /// Uniform per-channel noise amplitude.
    pub noise: u8,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 160,
            height: 120,
            palette: ScenePalette::default(),
            columns: [1, 3],
            nonstructural_probability: 0.7,
            rail_probability: 0.3,
            sleeper_probability: 0.06,
            crack_density: 1.5,
            crack_thickness: [1, 3],
            rebar_density: 0.5,
            distractor_density: 3.0,
            noise: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let colors = self.palette.all_colors();
        for (i, a) in colors.iter().enumerate() {
            if colors[i + 1..].contains(a) {
                return Err(Error::Config(format!("palette colour {a:?} is used twice")));
            }
        }
        for (name, p) in [
            ("nonstructural_probability", self.nonstructural_probability),
            ("rail_probability", self.rail_probability),
            ("sleeper_probability", self.sleeper_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, d) in [
            ("crack_density", self.crack_density),
            ("rebar_density", self.rebar_density),
            ("distractor_density", self.distractor_density),
        ] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Config(format!("{name} = {d} must be >= 0")));
            }
        }
        let [cmin, cmax] = self.columns;
        if cmin == 0 || cmin > cmax {
            return Err(Error::Config(format!("column range {cmin}..={cmax} is invalid")));
        }
        let [tmin, tmax] = self.crack_thickness;
        if tmin == 0 || tmin > tmax {
            return Err(Error::Config(format!("crack thickness range {tmin}..={tmax} is invalid")));
        }
        Ok(())
    }

    fn check_canvas(&self) -> Result<()> {
        let min_col = self.min_column_width();
        let needed = self.columns[1] * (min_col + 2);
        if self.width < 32 || self.height < 32 || self.width < needed {
            return Err(Error::invalid(format!(
                "canvas {}x{} too small for {} columns (needs at least {}x32)",
                self.width,
                self.height,
                self.columns[1],
                needed.max(32)
            )));
        }
        Ok(())
    }

    fn min_column_width(&self) -> u32 {
        // Room for the thickest crack plus a one-pixel margin on each side.
        (self.width / 14).max(self.crack_thickness[1] + 4)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub image: Image,
    pub component: LabelMap,
    pub damage: LabelMap,
}

struct Canvas {
    w: u32,
    h: u32,
    image: Image,
    comp: LabelMap,
    dmg: LabelMap,
}

impl Canvas {
    fn new(w: u32, h: u32, bg: [u8; 3]) -> Self {
        Canvas {
            w,
            h,
            image: Image::filled(w, h, bg),
            comp: LabelMap::filled(w, h, component::NON_BRIDGE, Task::Component.as_str()),
            dmg: LabelMap::filled(w, h, damage::NON_DAMAGE, Task::Damage.as_str()),
        }
    }

    fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, class: u8, color: [u8; 3]) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                self.image.set_pixel(x, y, color);
                self.comp.set(x, y, class);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Column {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

/// `floor(d)` events plus one more with probability `frac(d)`.
fn event_count(rng: &mut ChaCha8Rng, density: f64) -> u32 {
    let whole = density.floor();
    whole as u32 + u32::from(rng.random_bool(density - whole))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream seed for item `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5eed)))
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    generate_scene_with_geometry(seed, seed, params)
}

/// Scene whose layout comes from `geometry_seed` and whose content (rails, damage,
/// distractors, noise) comes from `detail_seed`.
pub fn generate_scene_with_geometry(geometry_seed: u64, detail_seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    params.check_canvas()?;
    let (w, h) = (params.width, params.height);
    let pal = &params.palette;
    let frac = |f: f64, n: u32| (f * f64::from(n)).round() as u32;

    let mut geo = ChaCha8Rng::seed_from_u64(derive_seed(geometry_seed, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(detail_seed, 1));
    let mut c = Canvas::new(w, h, pal.components[usize::from(component::NON_BRIDGE)]);

    let slab_top = frac(0.22, h) + geo.random_range(0..=2);
    let slab_bottom = slab_top + frac(0.10, h);
    let beam_bottom = slab_bottom + frac(0.08, h);
    let ground = frac(0.94, h);

    if rng.random_bool(params.nonstructural_probability) {
        let top = slab_top - frac(0.05, h);
        let mut x = 0;
        while x < w {
            let len = geo.random_range(8..=20);
            c.fill_rect(x, top, x + len, slab_top, component::NONSTRUCTURAL, pal.components[4]);
            x += len + geo.random_range(2..=6);
        }
    }
    c.fill_rect(0, slab_top, w, slab_bottom, component::SLAB, pal.components[1]);
    c.fill_rect(0, slab_bottom, w, beam_bottom, component::BEAM, pal.components[2]);

    let n_cols = geo.random_range(params.columns[0]..=params.columns[1]);
    let slot = w / n_cols;
    let min_cw = params.min_column_width();
    let max_cw = (slot - 2).min((w / 6).max(min_cw));
    let columns: Vec<Column> = (0..n_cols)
        .map(|i| {
            let cw = geo.random_range(min_cw..=max_cw.max(min_cw));
            let slack = slot - cw;
            let x0 = i * slot + geo.random_range(1..slack.max(2));
            Column {
                x0,
                x1: (x0 + cw).min(w - 1),
                y0: beam_bottom,
                y1: ground,
            }
        })
        .collect();
    for col in &columns {
        c.fill_rect(col.x0, col.y0, col.x1, col.y1, component::COLUMN, pal.components[3]);
    }

    let sleepers = rng.random_bool(params.sleeper_probability);
    if sleepers || rng.random_bool(params.rail_probability) {
        let rail_y = slab_top - frac(0.08, h);
        c.fill_rect(0, rail_y, w, rail_y + 2, component::RAIL, pal.components[5]);
        if sleepers {
            let phase = rng.random_range(0..6);
            let mut x = phase;
            while x + 5 <= w {
                c.fill_rect(x, rail_y + 2, x + 5, rail_y + 5, component::SLEEPER, pal.components[6]);
                x += 12;
            }
        }
    }

    let [tmin, tmax] = params.crack_thickness;
    for col in &columns {
        for _ in 0..event_count(&mut rng, params.rebar_density) {
            let bw = rng.random_range(3..=6).min(col.x1 - col.x0 - 2);
            let bh = rng.random_range(3..=6);
            let x = rng.random_range(col.x0 + 1..=col.x1 - 1 - bw);
            let y = rng.random_range(col.y0 + 1..col.y1 - 1 - bh);
            for yy in y..y + bh {
                for xx in x..x + bw {
                    c.image.set_pixel(xx, yy, pal.rebar);
                    c.dmg.set(xx, yy, damage::EXPOSED_REBAR);
                }
            }
        }
        for _ in 0..event_count(&mut rng, params.crack_density) {
            let t = rng.random_range(tmin..=tmax);
            // Stroke occupies [x, x + t); keep a one-pixel margin inside the column.
            let (lo, hi) = (col.x0 + 1, col.x1 - 1 - t);
            let mut x = rng.random_range(lo..=hi);
            let len = rng.random_range((col.y1 - col.y0) / 5..=(col.y1 - col.y0) / 2);
            let start = rng.random_range(col.y0 + 1..col.y1 - 1 - len);
            for y in start..start + len {
                for xx in x..x + t {
                    c.image.set_pixel(xx, y, pal.crack);
                    c.dmg.set(xx, y, damage::CONCRETE_DAMAGE);
                }
                match rng.random_range(0..4) {
                    0 if x > lo => x -= 1,
                    1 if x < hi => x += 1,
                    _ => {}
                }
            }
        }
    }

    for _ in 0..event_count(&mut rng, params.distractor_density) {
        let t = rng.random_range(tmin..=tmax);
        let horizontal = rng.random_bool(0.5);
        let len = rng.random_range(10..=40);
        let (mut x, mut y) = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
        for _ in 0..len {
            for d in 0..i64::from(t) {
                let (px, py) = if horizontal { (x, y + d) } else { (x + d, y) };
                if px < 0 || py < 0 || px >= i64::from(w) || py >= i64::from(h) {
                    continue;
                }
                let (px, py) = (px as u32, py as u32);
                if c.comp.get(px, py) != component::COLUMN {
                    c.image.set_pixel(px, py, pal.distractor);
                }
            }
            let jitter = rng.random_range(-1i64..=1);
            if horizontal {
                x += 1;
                y += jitter;
            } else {
                y += 1;
                x += jitter;
            }
        }
    }

    if params.noise > 0 {
        let amp = i16::from(params.noise);
        for v in c.image.data.iter_mut() {
            let n = rng.random_range(-amp..=amp);
            *v = (i16::from(*v) + n).clamp(0, 255) as u8;
        }
    }

    Ok(Scene {
        image: c.image,
        component: c.comp,
        damage: c.dmg,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `count` scenes under `out_dir` in `groups` consecutive viaduct groups and returns
/// the index (also written to `out_dir/index.csv`), rooted at `out_dir`.
pub fn generate_corpus(
    out_dir: &Path,
    seed: u64,
    count: usize,
    groups: usize,
    params: &SceneParams,
) -> Result<CorpusIndex> {
    if count == 0 {
        return Err(Error::invalid("corpus needs at least one scene"));
    }
    if groups == 0 || groups > count {
        return Err(Error::invalid(format!(
            "group count {groups} must be between 1 and the scene count {count}"
        )));
    }
    params.validate()?;
    params.check_canvas()?;
    for sub in ["images", "labels_cmp", "labels_dmg"] {
        create_dir(&out_dir.join(sub))?;
    }
    let per_group = count.div_ceil(groups);
    let entries: Vec<CorpusEntry> = (0..count)
        .into_par_iter()
        .map(|i| {
            let group = i / per_group;
            let geometry_seed = derive_seed(seed, 1_000_000 + group as u64);
            let scene = generate_scene_with_geometry(geometry_seed, derive_seed(seed, i as u64), params)?;
            let stem = format!("{i:04}");
            let rel = |dir: &str| PathBuf::from(dir).join(format!("{stem}.png"));
            write_image(&out_dir.join(rel("images")), &scene.image)?;
            write_labels(&out_dir.join(rel("labels_cmp")), &scene.component)?;
            write_labels(&out_dir.join(rel("labels_dmg")), &scene.damage)?;
            Ok(CorpusEntry {
                image_id: stem.clone(),
                group_id: format!("viaduct{group:03}"),
                image: rel("images"),
                component_gt: Some(rel("labels_cmp")),
                damage_gt: Some(rel("labels_dmg")),
            })
        })
        .collect::<Result<_>>()?;
    let index = CorpusIndex::new(entries)?.with_root(out_dir);
    index.write_csv(&out_dir.join("index.csv"))?;
    Ok(index)
}
