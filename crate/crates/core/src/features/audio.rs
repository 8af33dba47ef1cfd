use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    sample_rate: u32,
    samples: Vec<f32>,
}

impl AudioSignal {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty audio signal".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is outside [-1, 1]: {}",
                samples[i]
            )));
        }
        Ok(AudioSignal { sample_rate, samples })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(self.samples.iter().map(|&v| v as f64))
    }
}

pub(crate) fn mean_power(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.map(|v| v * v).sum::<f64>() / n as f64
}

/// Splits a manifest source path of the form `file@<rate>` into the file
/// path and its sample rate.
pub fn parse_audio_path(source: &str) -> Result<(PathBuf, u32)> {
    let (file, rate) = source
        .rsplit_once('@')
        .ok_or_else(|| Error::InvalidArgument(format!("audio path `{source}` lacks an @<rate> suffix")))?;
    let rate: u32 = rate
        .parse()
        .ok()
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("bad sample rate in `{source}`")))?;
    Ok((PathBuf::from(file), rate))
}

pub fn audio_path_string(file: &Path, rate: u32) -> String {
    format!("{}@{rate}", file.display())
}

/// Reads headerless little-endian `f32` mono audio. `source` carries the
/// `@<rate>` suffix; relative paths are resolved against `base`.
pub fn read_raw_audio(base: &Path, source: &str) -> Result<AudioSignal> {
    let (file, rate) = parse_audio_path(source)?;
    let path = if file.is_absolute() { file } else { base.join(file) };
    let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated(path.display().to_string()));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    AudioSignal::new(rate, samples)
}

pub fn write_raw_audio(path: &Path, signal: &AudioSignal) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * 4);
    for s in signal.samples() {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audio_path_suffix() {
        let (p, r) = parse_audio_path("dir/a@b.f32@16000").unwrap();
        assert_eq!(p, PathBuf::from("dir/a@b.f32"));
        assert_eq!(r, 16000);
        assert!(parse_audio_path("x.f32").is_err());
        assert!(parse_audio_path("x.f32@0").is_err());
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sig = AudioSignal::new(8000, vec![0.5, -0.25, 0.0, 1.0]).unwrap();
        write_raw_audio(&dir.path().join("a.f32"), &sig).unwrap();
        let back = read_raw_audio(dir.path(), "a.f32@8000").unwrap();
        assert_eq!(back, sig);
    }

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(AudioSignal::new(8000, vec![1.5]).is_err());
        assert!(AudioSignal::new(8000, vec![]).is_err());
        assert!(AudioSignal::new(8000, vec![f32::NAN]).is_err());
    }
}
