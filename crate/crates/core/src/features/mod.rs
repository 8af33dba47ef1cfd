//! Acoustic front end: raw audio I/O, log mel filterbank features and
//! waveform augmentation.

mod audio;
mod augment;
mod fbank;

use std::path::{Path, PathBuf};

pub use audio::{audio_path_string, parse_audio_path, read_raw_audio, write_raw_audio, AudioSignal};
pub use augment::{
    augment, convolve, double_corpus, music_hum, plan_augmentation, synthetic_impulse_response, white_noise,
    AugmentKind, AugmentPolicy, AugmentSpec, DoubledCorpus, AUGMENTED_SUFFIX, MIN_BABBLE_TALKERS,
};
pub use fbank::{
    extract_fbank, frame_count, hz_to_mel, log_mel_energies, mean_normalize, mel_to_hz, FbankConfig, ENERGY_FLOOR,
};

/// Location of a recording's feature matrix inside a features directory.
pub fn feature_path(dir: &Path, recording_id: &str) -> PathBuf {
    dir.join(format!("{recording_id}.svm"))
}
