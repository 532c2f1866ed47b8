//! Shared fixtures for the benchmarks.

use dcc_core::data::{make_episode, synthetic_dataset, Dataset, Episode, SynthConfig};
use dcc_core::encoder::FeatureMap;
use dcc_core::model::{Model, ModelConfig};
use dcc_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale model, the 20-identity synthetic set and one episode.
pub struct Fixture {
    pub model: Model,
    pub data: Dataset,
    pub episode: Episode,
}

impl Fixture {
    pub fn desk() -> Self {
        let cfg = ModelConfig::default();
        let side = cfg.encoder.input_side;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::new(cfg, &mut rng).expect("default config is valid");
        let data = synthetic_dataset(&SynthConfig { ids: 20, views: 4, side, seed: 1 }).expect("valid synth config");
        let episode = make_episode(&data, model.config().classes, &mut rng).expect("enough identities");
        Fixture { model, data, episode }
    }
}

/// Uniform random `C×M×M` features.
pub fn random_features(channels: usize, side: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..channels * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(channels, side, Tensor::new(&[channels, side * side], values).expect("sized"))
        .expect("sized")
}
