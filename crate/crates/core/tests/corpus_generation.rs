use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hierseg_core::io::read_labels;
use hierseg_core::raster::class_histogram;
use hierseg_core::taxonomy::component;
use hierseg_core::{generate_corpus, split_by_group, CorpusIndex, SceneParams};

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let params = SceneParams {
        noise: 6,
        ..SceneParams::default()
    };
    generate_corpus(a.path(), 31, 24, 5, &params).unwrap();
    generate_corpus(b.path(), 31, 24, 5, &params).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 3 * 24 + 1);
    assert!(ta == tb, "corpora differ");

    let c = tempfile::tempdir().unwrap();
    generate_corpus(c.path(), 32, 24, 5, &params).unwrap();
    assert!(tree(c.path()) != ta);
}

#[test]
fn sleeper_share_matches_the_rarity_premise() {
    let dir = tempfile::tempdir().unwrap();
    let index = generate_corpus(dir.path(), 2024, 1000, 100, &SceneParams::default()).unwrap();
    assert_eq!(index.root(), dir.path());
    let with_sleepers = index
        .entries()
        .iter()
        .filter(|e| {
            let map = read_labels(&index.resolve(e.component_gt.as_ref().unwrap()), "component").unwrap();
            class_histogram(&map).count(component::SLEEPER) > 0
        })
        .count();
    let share = with_sleepers as f64 / 1000.0;
    assert!((0.04..=0.08).contains(&share), "sleeper share {share}");
}

#[test]
fn written_index_round_trips_and_splits_by_viaduct() {
    let dir = tempfile::tempdir().unwrap();
    let index = generate_corpus(dir.path(), 5, 40, 10, &SceneParams::default()).unwrap();
    let back = CorpusIndex::read_csv(&dir.path().join("index.csv")).unwrap();
    assert_eq!(back.entries(), index.entries());
    assert_eq!(back.groups().len(), 10);
    let split = split_by_group(&back, 0.9, 0).unwrap();
    assert_eq!((split.train_groups.len(), split.val_groups.len()), (9, 1));
    assert_eq!(split.val_ids.len(), 4);
}
