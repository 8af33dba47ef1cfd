//! Fixtures shared by the benchmarks.

use std::collections::HashMap;

use verifkit_core::features::{white_noise, AudioSignal};
use verifkit_core::rng::SeededRng;
use verifkit_core::synth::{sample_plda, SynthPldaConfig, SynthPldaData};
use verifkit_core::{FeatureMatrix, Manifest};

/// PLDA training data of the given size.
pub fn plda_data(dim: usize, speakers: usize, per_speaker: usize) -> SynthPldaData {
    sample_plda(&SynthPldaConfig {
        dim,
        num_speakers: speakers,
        embeddings_per_speaker: per_speaker,
        seed: 1,
        ..SynthPldaConfig::default()
    })
    .expect("valid synthetic configuration")
}

/// Random embeddings for every recording of `manifest`.
pub fn embeddings_for(manifest: &Manifest, dim: usize) -> HashMap<String, Vec<f64>> {
    let mut rng = SeededRng::new(2);
    manifest
        .recordings()
        .iter()
        .map(|r| (r.recording_id.clone(), (0..dim).map(|_| rng.normal()).collect()))
        .collect()
}

pub fn random_features(frames: usize, dim: usize) -> FeatureMatrix {
    let mut rng = SeededRng::new(3);
    FeatureMatrix::new(frames, dim, (0..frames * dim).map(|_| rng.normal() as f32).collect())
        .expect("shape matches data")
}

pub fn noise_signal(seconds: f64) -> AudioSignal {
    let rate = 16_000;
    white_noise(rate, (seconds * rate as f64) as usize, &mut SeededRng::new(4))
}
