//! A checkpoint written to disk and read back samples exactly the same images.

use perldiff::diffusion::{DenoiserConfig, DenoiserModel};
use perldiff::numerics::Tensor;
use perldiff::pipeline::{default_vocabulary, encode_ppm, generate_views, Checkpoint, DiffusionConfig, GenerateOptions};
use perldiff::scenegen::{generate_scene, Palette, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

pub fn checkpoint() -> Outcome {
    let palette = Palette::default();
    let model = DenoiserModel::new(DenoiserConfig::default(), default_vocabulary(&palette)).expect("model");
    let mut store = model.init(21).expect("init");
    // open the zero-initialized gates and output maps so sampling depends on every tensor
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in &names {
        let t = store.get(n).expect("param");
        if t.data().iter().all(|&v| v == 0.0) {
            store.set(n, Tensor::from_fn(t.dims(), |_| 0.1 * rng.random_range(-1.0..1.0))).expect("set");
        }
    }
    let original = Checkpoint::new(model, DiffusionConfig::default(), palette, &store);
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.bin");
    original.save(&path).expect("save");
    let loaded = Checkpoint::load(&path).expect("load");
    let resaved = loaded.to_bytes().expect("serialize") == std::fs::read(&path).expect("read");

    let scene = generate_scene(31, &SceneConfig::default()).expect("scene");
    let opts = GenerateOptions { seed: 5, steps: Some(20), ..GenerateOptions::default() };
    let a = generate_views(&original, &scene, &opts, false).expect("generate");
    let b = generate_views(&loaded, &scene, &opts, false).expect("generate");
    let identical = a.images.len() == b.images.len()
        && a.images.iter().zip(&b.images).all(|(x, y)| {
            x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()) && encode_ppm(x) == encode_ppm(y)
        });
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    Outcome {
        pass: resaved && identical,
        detail: format!(
            "{bytes}-byte checkpoint, re-serialization identical {resaved}, {} views bit-identical {identical}",
            a.images.len()
        ),
    }
}
