//! Semantic-guided masking: component predictions gate what the damage stage sees.

use std::borrow::Cow;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resize_labels, Image, LabelMap};
use crate::taxonomy::{component, ClassTaxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    /// `task_name` of the taxonomy that `keep_set` indexes into.
    #[serde(default = "default_parent")]
    pub parent_taxonomy: String,
    #[serde(default = "default_keep")]
    pub keep_set: BTreeSet<u8>,
    #[serde(default)]
    pub fill_color: [u8; 3],
}

fn default_parent() -> String {
    "component".into()
}

fn default_keep() -> BTreeSet<u8> {
    [component::COLUMN].into()
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            parent_taxonomy: default_parent(),
            keep_set: default_keep(),
            fill_color: [0, 0, 0],
        }
    }
}

impl MaskSpec {
    pub fn validate(&self, parent: &ClassTaxonomy) -> Result<()> {
        if self.keep_set.is_empty() {
            return Err(Error::Config("mask keep_set is empty".into()));
        }
        if parent.task_name() != self.parent_taxonomy {
            return Err(Error::Config(format!(
                "mask refers to taxonomy `{}`, got `{}`",
                self.parent_taxonomy,
                parent.task_name()
            )));
        }
        if let Some(bad) = self.keep_set.iter().find(|&&c| !parent.is_class(c)) {
            return Err(Error::Config(format!(
                "mask keep_set class {bad} is not a class of `{}`",
                parent.task_name()
            )));
        }
        Ok(())
    }

    pub fn keeps(&self, class: u8) -> bool {
        self.keep_set.contains(&class)
    }
}

/// Returns `comp` at `w`x`h`, resizing by nearest neighbour when needed.
pub fn align_labels(comp: &LabelMap, w: u32, h: u32) -> Result<Cow<'_, LabelMap>> {
    comp.check_shape()?;
    if comp.same_dims(w, h) {
        Ok(Cow::Borrowed(comp))
    } else {
        resize_labels(comp, w, h).map(Cow::Owned)
    }
}

/// Replaces every pixel whose component class is outside the keep set with the fill colour.
pub fn apply_semantic_mask(img: &Image, comp: &LabelMap, spec: &MaskSpec) -> Result<Image> {
    img.check_shape()?;
    let comp = align_labels(comp, img.width, img.height)?;
    let mut out = img.clone();
    for (px, &c) in out.data.chunks_exact_mut(3).zip(&comp.data) {
        if !spec.keeps(c) {
            px.copy_from_slice(&spec.fill_color);
        }
    }
    Ok(out)
}

/// Damage ground truth restricted to kept regions; everything else becomes the ignore index.
pub fn mask_labels(
    dmg_gt: &LabelMap,
    comp: &LabelMap,
    spec: &MaskSpec,
    damage_tax: &ClassTaxonomy,
) -> Result<LabelMap> {
    dmg_gt.check_shape()?;
    let comp = align_labels(comp, dmg_gt.width, dmg_gt.height)?;
    let ignore = damage_tax.ignore_index();
    let data = dmg_gt
        .data
        .iter()
        .zip(&comp.data)
        .map(|(&d, &c)| if spec.keeps(c) { d } else { ignore })
        .collect();
    Ok(LabelMap {
        width: dmg_gt.width,
        height: dmg_gt.height,
        data,
        taxonomy: dmg_gt.taxonomy.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{iou_from_confusion, ConfusionMatrix};
    use crate::taxonomy::component::{COLUMN, SLAB};
    use proptest::prelude::*;

    const GRAY: [u8; 3] = [128, 128, 128];

    fn checker(w: u32, h: u32) -> LabelMap {
        let data = (0..h)
            .flat_map(|y| (0..w).map(move |x| if (x + y) % 2 == 0 { COLUMN } else { SLAB }))
            .collect();
        LabelMap::new(w, h, data, "component").unwrap()
    }

    #[test]
    fn full_column_is_identity() {
        let img = Image::new(2, 2, (0..12).collect()).unwrap();
        let comp = LabelMap::filled(2, 2, COLUMN, "component");
        assert_eq!(apply_semantic_mask(&img, &comp, &MaskSpec::default()).unwrap(), img);
    }

    #[test]
    fn no_column_is_black() {
        let img = Image::filled(3, 3, GRAY);
        let comp = LabelMap::filled(3, 3, SLAB, "component");
        let out = apply_semantic_mask(&img, &comp, &MaskSpec::default()).unwrap();
        assert_eq!(out, Image::filled(3, 3, [0, 0, 0]));
    }

    #[test]
    fn checkerboard_alternates() {
        let img = Image::filled(4, 3, GRAY);
        let comp = checker(4, 3);
        let out = apply_semantic_mask(&img, &comp, &MaskSpec::default()).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let want = if comp.get(x, y) == COLUMN { GRAY } else { [0, 0, 0] };
                assert_eq!(out.pixel(x, y), want);
            }
        }
    }

    #[test]
    fn lower_resolution_components_are_upsampled() {
        let img = Image::filled(4, 4, GRAY);
        let comp = LabelMap::new(2, 2, vec![COLUMN, SLAB, SLAB, COLUMN], "component").unwrap();
        let out = apply_semantic_mask(&img, &comp, &MaskSpec::default()).unwrap();
        assert_eq!(out.pixel(1, 1), GRAY);
        assert_eq!(out.pixel(2, 1), [0, 0, 0]);
        assert_eq!(out.pixel(3, 3), GRAY);
    }

    #[test]
    fn label_masking() {
        let tax = ClassTaxonomy::bridge_damage();
        let gt = LabelMap::new(4, 1, vec![0, 1, 2, 1], "damage").unwrap();
        let all_col = LabelMap::filled(4, 1, COLUMN, "component");
        assert_eq!(mask_labels(&gt, &all_col, &MaskSpec::default(), &tax).unwrap(), gt);
        let none = LabelMap::filled(4, 1, SLAB, "component");
        assert_eq!(
            mask_labels(&gt, &none, &MaskSpec::default(), &tax).unwrap().data,
            vec![255; 4]
        );
        let mixed = LabelMap::new(4, 1, vec![COLUMN, SLAB, COLUMN, SLAB], "component").unwrap();
        assert_eq!(
            mask_labels(&gt, &mixed, &MaskSpec::default(), &tax).unwrap().data,
            vec![0, 255, 2, 255]
        );
    }

    #[test]
    fn masked_gt_hides_off_column_errors() {
        let tax = ClassTaxonomy::bridge_damage();
        let gt = LabelMap::new(4, 1, vec![1, 0, 0, 0], "damage").unwrap();
        let comp = LabelMap::new(4, 1, vec![COLUMN, COLUMN, SLAB, SLAB], "component").unwrap();
        let masked = mask_labels(&gt, &comp, &MaskSpec::default(), &tax).unwrap();
        // Off-column false positives do not count.
        let pred = LabelMap::new(4, 1, vec![1, 0, 1, 1], "damage").unwrap();
        let mut m = ConfusionMatrix::for_taxonomy(&tax);
        m.accumulate(&pred, &masked, &tax).unwrap();
        assert_eq!(iou_from_confusion(&m, &tax).unwrap().class_iou(1), Some(1.0));
    }

    #[test]
    fn validate_rejects_bad_keep_set() {
        let parent = ClassTaxonomy::bridge_components();
        assert!(MaskSpec::default().validate(&parent).is_ok());
        let empty = MaskSpec { keep_set: BTreeSet::new(), ..MaskSpec::default() };
        assert!(empty.validate(&parent).is_err());
        let bad = MaskSpec { keep_set: [9].into(), ..MaskSpec::default() };
        assert!(bad.validate(&parent).is_err());
    }

    proptest! {
        #[test]
        fn masking_is_idempotent_and_counts_changes(
            w in 1u32..10, h in 1u32..10,
            classes in proptest::collection::vec(0u8..7, 100),
            colors in proptest::collection::vec(1u8..=255, 300),
        ) {
            let n = (w * h) as usize;
            let comp = LabelMap::new(w, h, classes[..n].to_vec(), "component").unwrap();
            // No pre-existing fill-colour pixels: every channel is >= 1.
            let img = Image::new(w, h, colors[..n * 3].to_vec()).unwrap();
            let spec = MaskSpec::default();
            let once = apply_semantic_mask(&img, &comp, &spec).unwrap();
            let twice = apply_semantic_mask(&once, &comp, &spec).unwrap();
            prop_assert_eq!(&once, &twice);
            let changed = img.pixels().zip(once.pixels()).filter(|(a, b)| a != b).count();
            let off = comp.data.iter().filter(|&&c| !spec.keeps(c)).count();
            prop_assert_eq!(changed, off);
        }
    }
}
