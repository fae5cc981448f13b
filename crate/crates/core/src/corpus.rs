//! Corpus index files and leakage-free train/validation splitting by viaduct group.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_id: String,
    pub group_id: String,
    /// Paths are relative to the index root.
    pub image: PathBuf,
    pub component_gt: Option<PathBuf>,
    pub damage_gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    entries: Vec<CorpusEntry>,
    root: PathBuf,
}

impl CorpusIndex {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.image_id.is_empty() {
                return Err(Error::Data("corpus entry with empty image_id".into()));
            }
            if e.group_id.is_empty() {
                return Err(Error::Data(format!("entry `{}` has no group_id", e.image_id)));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Data(format!("duplicate image_id `{}`", e.image_id)));
            }
        }
        Ok(CorpusIndex {
            entries,
            root: PathBuf::from("."),
        })
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn get(&self, image_id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Sub-index of the given ids, in index order.
    pub fn subset(&self, ids: &[String]) -> CorpusIndex {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        CorpusIndex {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(e.image_id.as_str()))
                .cloned()
                .collect(),
            root: self.root.clone(),
        }
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.group_id.as_str()).collect()
    }

    /// Reads `image_id,group_id,image,component_gt,damage_gt`; the root becomes the CSV's
    /// directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        let expected = ["image_id", "group_id", "image", "component_gt", "damage_gt"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "{}: header must be {}",
                path.display(),
                expected.join(",")
            )));
        }
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<CorpusEntry>, _>>()
            .map_err(|e| csv_err(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(CorpusIndex::new(entries)?.with_root(root))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        if self.entries.is_empty() {
            writer
                .write_record(["image_id", "group_id", "image", "component_gt", "damage_gt"])
                .map_err(|e| csv_err(path, e))?;
        }
        for e in &self.entries {
            writer.serialize(e).map_err(|err| csv_err(path, err))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Data(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub train_groups: Vec<String>,
    pub val_groups: Vec<String>,
}

/// Shuffles the distinct groups with a seeded generator and sends the first
/// `ceil(ratio * G)` to training, always keeping one group for validation when `G >= 2`.
/// Ids keep their index order.
pub fn split_by_group(index: &CorpusIndex, ratio: f64, seed: u64) -> Result<GroupSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if index.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus index"));
    }
    let mut groups: Vec<&str> = index.groups().into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let g = groups.len();
    // The epsilon keeps products such as 0.7 * 10 = 7.000000000000001 from rounding up.
    let mut n_train = ((ratio * g as f64) - 1e-9).ceil() as usize;
    if g == 1 {
        warn!("corpus has a single group; every image goes to training");
        n_train = 1;
    } else {
        n_train = n_train.clamp(1, g - 1);
    }
    let train: HashSet<&str> = groups[..n_train].iter().copied().collect();
    let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
    for e in index.entries() {
        if train.contains(e.group_id.as_str()) {
            train_ids.push(e.image_id.clone());
        } else {
            val_ids.push(e.image_id.clone());
        }
    }
    let mut train_groups: Vec<String> = groups[..n_train].iter().map(|s| s.to_string()).collect();
    let mut val_groups: Vec<String> = groups[n_train..].iter().map(|s| s.to_string()).collect();
    train_groups.sort();
    val_groups.sort();
    Ok(GroupSplit {
        train_ids,
        val_ids,
        train_groups,
        val_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index(groups: &[usize]) -> CorpusIndex {
        CorpusIndex::new(
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| CorpusEntry {
                    image_id: format!("{i:04}"),
                    group_id: format!("g{g}"),
                    image: format!("images/{i:04}.png").into(),
                    component_gt: None,
                    damage_gt: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_groups_split_nine_to_one() {
        let idx = index(&(0..50).map(|i| i / 5).collect::<Vec<_>>());
        let s = split_by_group(&idx, 0.9, 3).unwrap();
        assert_eq!((s.train_groups.len(), s.val_groups.len()), (9, 1));
        assert_eq!(s.train_ids.len() + s.val_ids.len(), 50);
        assert_eq!(s, split_by_group(&idx, 0.9, 3).unwrap());
    }

    #[test]
    fn two_groups_keep_one_for_validation() {
        let idx = index(&[0, 0, 1, 1]);
        let s = split_by_group(&idx, 0.9, 11).unwrap();
        assert_eq!((s.train_groups.len(), s.val_groups.len()), (1, 1));
    }

    #[test]
    fn single_group_goes_to_training() {
        let idx = index(&[4, 4, 4]);
        let s = split_by_group(&idx, 0.5, 0).unwrap();
        assert_eq!(s.train_ids.len(), 3);
        assert!(s.val_ids.is_empty());
    }

    #[test]
    fn bad_arguments() {
        assert!(split_by_group(&index(&[]), 0.9, 0).is_err());
        assert!(split_by_group(&index(&[0, 1]), 1.0, 0).is_err());
        assert!(split_by_group(&index(&[0, 1]), 0.0, 0).is_err());
    }

    #[test]
    fn ratio_products_do_not_overshoot() {
        let idx = index(&(0..10).collect::<Vec<_>>());
        let s = split_by_group(&idx, 0.7, 1).unwrap();
        assert_eq!(s.train_groups.len(), 7);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = index(&[0, 1]);
        idx.entries[0].damage_gt = Some("labels_dmg/0000.png".into());
        let path = dir.path().join("index.csv");
        idx.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,group_id,image,component_gt,damage_gt\n0000,g0,images/0000.png,,labels_dmg/0000.png\n"));
        let back = CorpusIndex::read_csv(&path).unwrap();
        assert_eq!(back.entries(), idx.entries());
        assert_eq!(back.root(), dir.path());

        std::fs::write(&path, "image_id,group_id,image,component_gt,damage_gt\na,g,x.png,,\na,g,y.png,,\n").unwrap();
        assert!(matches!(CorpusIndex::read_csv(&path), Err(Error::Data(_))));
        std::fs::write(&path, "id,group\n").unwrap();
        assert!(matches!(CorpusIndex::read_csv(&path), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn split_never_leaks(groups in proptest::collection::vec(0usize..12, 1..60), ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let idx = index(&groups);
            let s = split_by_group(&idx, ratio, seed).unwrap();
            let train: HashSet<_> = s.train_groups.iter().collect();
            prop_assert!(s.val_groups.iter().all(|g| !train.contains(g)));
            prop_assert_eq!(s.train_ids.len() + s.val_ids.len(), groups.len());
            if idx.groups().len() >= 2 {
                prop_assert!(!s.val_ids.is_empty() && !s.train_ids.is_empty());
            }
        }
    }
}
