//! Seeded inputs shared by the benchmarks in `benches/`.

use hierseg_core::{Image, LabelMap, ScoreMap};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Image {
    let mut data = vec![0u8; (width * height * 3) as usize];
    rng.fill_bytes(&mut data);
    Image::new(width, height, data).expect("sized buffer")
}

pub fn random_labels(rng: &mut ChaCha8Rng, width: u32, height: u32, k: u8, taxonomy: &str) -> LabelMap {
    let data = (0..width * height).map(|_| rng.random_range(0..k)).collect();
    LabelMap::new(width, height, data, taxonomy).expect("sized buffer")
}

pub fn random_scores(rng: &mut ChaCha8Rng, width: u32, height: u32, k: usize) -> ScoreMap {
    let data = (0..width as usize * height as usize * k).map(|_| rng.random::<f32>()).collect();
    ScoreMap::new(width, height, k, data).expect("sized buffer")
}
