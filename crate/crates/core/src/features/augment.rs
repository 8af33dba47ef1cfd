//! Waveform augmentation with synthetic interference sources.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::{audio_path_string, mean_power, read_raw_audio, write_raw_audio, AudioSignal};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::rng::SeededRng;
use crate::types::RecordingRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentKind {
    Babble,
    Music,
    Noise,
    Reverb,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::Babble,
        AugmentKind::Music,
        AugmentKind::Noise,
        AugmentKind::Reverb,
    ];

    pub fn is_additive(self) -> bool {
        self != AugmentKind::Reverb
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::Babble => "babble",
            AugmentKind::Music => "music",
            AugmentKind::Noise => "noise",
            AugmentKind::Reverb => "reverb",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "augmentation",
                token: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    /// Signal-to-interference ratio for additive kinds.
    pub snr_db: f64,
    /// Reverberation time for `Reverb`, seconds.
    pub rt60: f64,
    pub rng_seed: u64,
}

/// Minimum number of talkers mixed into babble.
pub const MIN_BABBLE_TALKERS: usize = 3;

/// Applies one augmentation. Additive kinds keep the signal length;
/// reverb appends the impulse-response tail. The result is scaled down
/// if its peak exceeds 1.
pub fn augment(signal: &AudioSignal, spec: &AugmentSpec, interferers: &[AudioSignal]) -> Result<AudioSignal> {
    let power = signal.power();
    if power <= 0.0 {
        return Err(Error::Precondition("input signal has zero power".into()));
    }
    let mut rng = SeededRng::new(spec.rng_seed);
    let rate = signal.sample_rate();
    let x: Vec<f64> = signal.samples().iter().map(|&v| v as f64).collect();

    let mixed = if spec.kind.is_additive() {
        if !spec.snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!("snr_db must be finite, got {}", spec.snr_db)));
        }
        let needed = if spec.kind == AugmentKind::Babble { MIN_BABBLE_TALKERS } else { 1 };
        if interferers.len() < needed {
            return Err(Error::Precondition(format!(
                "{} needs at least {needed} interferer(s), got {}",
                spec.kind,
                interferers.len()
            )));
        }
        let used = if spec.kind == AugmentKind::Babble { interferers } else { &interferers[..1] };
        let mut noise = vec![0.0f64; x.len()];
        for src in used {
            if src.sample_rate() != rate {
                return Err(Error::InvalidArgument(format!(
                    "interferer sample rate {} differs from {rate}",
                    src.sample_rate()
                )));
            }
            let s = src.samples();
            let offset = rng.below(s.len());
            for (i, n) in noise.iter_mut().enumerate() {
                *n += s[(offset + i) % s.len()] as f64;
            }
        }
        let noise_power = mean_power(noise.iter().copied());
        if noise_power <= 0.0 {
            return Err(Error::Precondition("interference has zero power".into()));
        }
        let gain = (power / (noise_power * 10f64.powf(spec.snr_db / 10.0))).sqrt();
        x.iter().zip(&noise).map(|(s, n)| s + gain * n).collect()
    } else {
        if !(spec.rt60 > 0.0 && spec.rt60.is_finite()) {
            return Err(Error::InvalidArgument(format!("rt60 must be positive, got {}", spec.rt60)));
        }
        let ir = synthetic_impulse_response(rate, spec.rt60, &mut rng);
        convolve(&x, &ir)
    };

    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let out: Vec<f32> = mixed.iter().map(|v| ((v * scale) as f32).clamp(-1.0, 1.0)).collect();
    AudioSignal::new(rate, out)
}

/// Exponentially decaying Gaussian noise with a unit direct path. The
/// envelope falls by 60 dB after `rt60` seconds.
pub fn synthetic_impulse_response(rate: u32, rt60: f64, rng: &mut SeededRng) -> Vec<f64> {
    let len = ((rt60 * rate as f64).ceil() as usize).max(1);
    let decay = 3.0 * std::f64::consts::LN_10 / (rt60 * rate as f64);
    let mut ir: Vec<f64> = (0..len)
        .map(|n| if n == 0 { 1.0 } else { rng.normal() * (-decay * n as f64).exp() })
        .collect();
    let norm = ir.iter().map(|v| v * v).sum::<f64>().sqrt();
    ir.iter_mut().for_each(|v| *v /= norm);
    ir
}

/// Full linear convolution via FFT; output length `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (d, &s) in buf.iter_mut().zip(v) {
            d.re = s;
        }
        buf
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// White Gaussian noise, clipped to `[-1, 1]`.
pub fn white_noise(rate: u32, len: usize, rng: &mut SeededRng) -> AudioSignal {
    let s = (0..len).map(|_| (0.25 * rng.normal()).clamp(-1.0, 1.0) as f32).collect();
    AudioSignal::new(rate, s).expect("clipped noise is valid audio")
}

/// Harmonic hum with a slow tremolo, standing in for background music.
pub fn music_hum(rate: u32, len: usize, rng: &mut SeededRng) -> AudioSignal {
    let f0 = rng.uniform_range(80.0, 400.0);
    let phases: Vec<f64> = (0..5).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();
    let trem = rng.uniform_range(0.5, 4.0);
    let raw: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / rate as f64;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, p)| (std::f64::consts::TAU * f0 * (k + 1) as f64 * t + p).sin() / (k + 1) as f64)
                .sum();
            tone * (1.0 + 0.5 * (std::f64::consts::TAU * trem * t).sin())
        })
        .collect();
    let peak = raw.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    AudioSignal::new(rate, raw.iter().map(|v| (0.5 * v / peak) as f32).collect()).expect("hum is valid audio")
}

/// Ranges the augmentation planner draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub noise_snr_db: (f64, f64),
    pub music_snr_db: (f64, f64),
    pub babble_snr_db: (f64, f64),
    pub rt60_s: (f64, f64),
    pub babble_talkers: (usize, usize),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            noise_snr_db: (0.0, 15.0),
            music_snr_db: (5.0, 15.0),
            babble_snr_db: (13.0, 20.0),
            rt60_s: (0.2, 0.8),
            babble_talkers: (3, 5),
        }
    }
}

/// Draws one augmentation per recording, kinds uniform over the four sources.
pub fn plan_augmentation(count: usize, policy: &AugmentPolicy, seed: u64) -> Vec<AugmentSpec> {
    (0..count)
        .map(|i| {
            let mut rng = SeededRng::derive(seed, i as u64);
            let kind = AugmentKind::ALL[rng.below(4)];
            let range = match kind {
                AugmentKind::Noise => policy.noise_snr_db,
                AugmentKind::Music => policy.music_snr_db,
                AugmentKind::Babble => policy.babble_snr_db,
                AugmentKind::Reverb => (0.0, 0.0),
            };
            let snr_db = rng.uniform_range(range.0, range.1);
            let rt60 = rng.uniform_range(policy.rt60_s.0, policy.rt60_s.1);
            AugmentSpec {
                kind,
                snr_db,
                rt60,
                rng_seed: rng.next_u64(),
            }
        })
        .collect()
}

pub const AUGMENTED_SUFFIX: &str = "-aug";

#[derive(Debug)]
pub struct DoubledCorpus {
    /// Original recordings followed by their augmented copies.
    pub manifest: Manifest,
    pub specs: Vec<(String, AugmentSpec)>,
    /// Recordings that could not be augmented.
    pub failures: Vec<(String, Error)>,
}

/// Writes one augmented copy of every recording to `out_dir` and returns
/// the extended manifest. Per-recording failures are collected rather
/// than aborting the run.
pub fn double_corpus(
    manifest: &Manifest,
    audio_base: &Path,
    out_dir: &Path,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<DoubledCorpus> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let recs = manifest.recordings();
    let plan = plan_augmentation(recs.len(), policy, seed);
    let mut extra = Vec::new();
    let mut specs = Vec::new();
    let mut failures = Vec::new();

    for (i, (rec, spec)) in recs.iter().zip(&plan).enumerate() {
        let result = (|| -> Result<RecordingRecord> {
            let signal = read_raw_audio(audio_base, &rec.source_path)?;
            let mut rng = SeededRng::derive(spec.rng_seed, 1);
            let rate = signal.sample_rate();
            let interferers = match spec.kind {
                AugmentKind::Noise => vec![white_noise(rate, signal.len(), &mut rng)],
                AugmentKind::Music => vec![music_hum(rate, signal.len(), &mut rng)],
                AugmentKind::Reverb => Vec::new(),
                AugmentKind::Babble => {
                    let (lo, hi) = policy.babble_talkers;
                    let talkers = lo.max(MIN_BABBLE_TALKERS) + rng.below(hi.saturating_sub(lo) + 1);
                    let mut mix = Vec::with_capacity(talkers);
                    for _ in 0..talkers {
                        let j = if recs.len() > 1 {
                            // any recording other than this one
                            (i + 1 + rng.below(recs.len() - 1)) % recs.len()
                        } else {
                            i
                        };
                        let other = read_raw_audio(audio_base, &recs[j].source_path)?;
                        if other.sample_rate() != rate {
                            return Err(Error::InvalidArgument(format!(
                                "babble source `{}` has rate {}",
                                recs[j].recording_id,
                                other.sample_rate()
                            )));
                        }
                        mix.push(other);
                    }
                    mix
                }
            };
            let out = augment(&signal, spec, &interferers)?;
            let new_id = format!("{}{AUGMENTED_SUFFIX}", rec.recording_id);
            let file = out_dir.join(format!("{new_id}.f32"));
            write_raw_audio(&file, &out)?;
            Ok(RecordingRecord {
                recording_id: new_id,
                speaker_id: rec.speaker_id.clone(),
                section: rec.section,
                source_path: audio_path_string(&file, rate),
            })
        })();
        match result {
            Ok(r) => {
                specs.push((r.recording_id.clone(), *spec));
                extra.push(r);
            }
            Err(e) => {
                log::warn!(target: "features", "augmenting {} failed: {e}", rec.recording_id);
                failures.push((rec.recording_id.clone(), e));
            }
        }
    }
    Ok(DoubledCorpus {
        manifest: manifest.with_recordings(extra)?,
        specs,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Gender, Grade, L1Label, Section, SpeakerRecord};

    fn noise_signal(seed: u64, len: usize, scale: f64) -> AudioSignal {
        let mut rng = SeededRng::new(seed);
        AudioSignal::new(16000, (0..len).map(|_| (scale * rng.normal()).clamp(-1.0, 1.0) as f32).collect())
            .unwrap()
    }

    fn spec(kind: AugmentKind, snr_db: f64) -> AugmentSpec {
        AugmentSpec { kind, snr_db, rt60: 0.3, rng_seed: 11 }
    }

    #[test]
    fn infinite_snr_rejected() {
        let s = noise_signal(1, 1000, 0.1);
        let n = noise_signal(2, 1000, 0.1);
        let err = augment(&s, &spec(AugmentKind::Noise, f64::INFINITY), &[n]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zero_db_noise_doubles_power() {
        let s = noise_signal(1, 200_000, 0.05);
        let n = noise_signal(2, 200_000, 0.05);
        let out = augment(&s, &spec(AugmentKind::Noise, 0.0), &[n]).unwrap();
        assert_eq!(out.len(), s.len());
        let ratio = out.power() / s.power();
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let s = noise_signal(1, 5000, 0.1);
        let talkers: Vec<_> = (2..5).map(|i| noise_signal(i, 3000, 0.1)).collect();
        for kind in AugmentKind::ALL {
            let a = augment(&s, &spec(kind, 5.0), &talkers).unwrap();
            let b = augment(&s, &spec(kind, 5.0), &talkers).unwrap();
            let bits = |x: &AudioSignal| x.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn missing_interferers_and_silence_rejected() {
        let s = noise_signal(1, 1000, 0.1);
        let n = noise_signal(2, 1000, 0.1);
        assert!(augment(&s, &spec(AugmentKind::Music, 5.0), &[]).is_err());
        assert!(augment(&s, &spec(AugmentKind::Babble, 5.0), &[n.clone(), n.clone()]).is_err());
        let silent = AudioSignal::new(16000, vec![0.0; 100]).unwrap();
        assert!(augment(&silent, &spec(AugmentKind::Noise, 5.0), &[n]).is_err());
        let bad = AugmentSpec { rt60: 0.0, ..spec(AugmentKind::Reverb, 0.0) };
        assert!(augment(&s, &bad, &[]).is_err());
    }

    #[test]
    fn reverb_extends_by_tail_and_peak_is_bounded() {
        let s = noise_signal(1, 4000, 0.9);
        let out = augment(&s, &spec(AugmentKind::Reverb, 0.0), &[]).unwrap();
        let tail = (0.3f64 * 16000.0).ceil() as usize;
        assert_eq!(out.len(), s.len() + tail - 1);
        assert!(out.samples().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.5, -0.25, 2.0];
        let fast = convolve(&a, &b);
        for (k, v) in fast.iter().enumerate() {
            let direct: f64 = (0..a.len())
                .filter(|&i| k >= i && k - i < b.len())
                .map(|i| a[i] * b[k - i])
                .sum();
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn kind_frequencies_are_uniform() {
        let plan = plan_augmentation(10_000, &AugmentPolicy::default(), 5);
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for kind in AugmentKind::ALL {
            let n = plan.iter().filter(|s| s.kind == kind).count() as f64;
            assert!((n - 2500.0).abs() <= 3.0 * sigma, "{kind}: {n}");
        }
    }

    #[test]
    fn doubling_keeps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut speakers = Vec::new();
        let mut recs = Vec::new();
        for i in 0..5 {
            speakers.push(SpeakerRecord {
                speaker_id: format!("s{i}"),
                gender: Gender::Female,
                l1: L1Label::new("Thai").unwrap(),
                grade: Grade::B1,
            });
            let sig = noise_signal(i, 4000, 0.1);
            super::write_raw_audio(&dir.path().join(format!("r{i}.f32")), &sig).unwrap();
            recs.push(RecordingRecord {
                recording_id: format!("r{i}"),
                speaker_id: format!("s{i}"),
                section: Section::C,
                source_path: format!("r{i}.f32@16000"),
            });
        }
        let m = Manifest::new(speakers, recs).unwrap();
        let out = dir.path().join("aug");
        let doubled = double_corpus(&m, dir.path(), &out, &AugmentPolicy::default(), 1).unwrap();
        assert!(doubled.failures.is_empty());
        let all = doubled.manifest.recordings();
        assert_eq!(all.len(), 10);
        let augmented: Vec<_> = all.iter().filter(|r| r.recording_id.ends_with("-aug")).collect();
        assert_eq!(augmented.len(), 5);
        for r in augmented {
            let orig = m.recording(r.recording_id.trim_end_matches("-aug")).unwrap();
            assert_eq!(r.speaker_id, orig.speaker_id);
            assert!(read_raw_audio(dir.path(), &r.source_path).is_ok());
        }
    }
}
