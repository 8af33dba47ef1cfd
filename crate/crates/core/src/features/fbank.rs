//! Log mel filterbank front end.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::AudioSignal;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Floor applied to filterbank energies before taking the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub num_filters: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    /// FFT size; `None` picks the next power of two at or above the frame length.
    pub fft_size: Option<usize>,
    pub low_freq: f64,
    /// Upper cutoff; `None` means Nyquist.
    pub high_freq: Option<f64>,
    pub preemphasis: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            num_filters: 40,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: None,
            low_freq: 20.0,
            high_freq: None,
            preemphasis: 0.97,
        }
    }
}

impl FbankConfig {
    pub const KEYS: &'static [&'static str] = &[
        "num_filters",
        "frame_length_ms",
        "frame_shift_ms",
        "fft_size",
        "low_freq",
        "high_freq",
        "preemphasis",
    ];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.check_keys(Self::KEYS)?;
        let d = FbankConfig::default();
        Ok(FbankConfig {
            num_filters: kv.get_or("num_filters", d.num_filters)?,
            frame_length_ms: kv.get_or("frame_length_ms", d.frame_length_ms)?,
            frame_shift_ms: kv.get_or("frame_shift_ms", d.frame_shift_ms)?,
            fft_size: kv.get_parsed("fft_size")?,
            low_freq: kv.get_or("low_freq", d.low_freq)?,
            high_freq: kv.get_parsed("high_freq")?,
            preemphasis: kv.get_or("preemphasis", d.preemphasis)?,
        })
    }

    pub fn frame_samples(&self, rate: u32) -> usize {
        (rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, rate: u32) -> usize {
        (rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    fn validate(&self, rate: u32) -> Result<(usize, usize, usize, f64)> {
        let frame = self.frame_samples(rate);
        let shift = self.shift_samples(rate);
        if self.num_filters == 0 || frame == 0 || shift == 0 {
            return Err(Error::InvalidArgument("filter count and frame sizes must be positive".into()));
        }
        if self.frame_length_ms < self.frame_shift_ms {
            return Err(Error::InvalidArgument("frame length shorter than frame shift".into()));
        }
        let fft = match self.fft_size {
            Some(n) if n.is_power_of_two() && n >= frame => n,
            Some(n) => {
                return Err(Error::InvalidArgument(format!(
                    "fft_size {n} must be a power of two >= {frame}"
                )))
            }
            None => frame.next_power_of_two(),
        };
        let nyquist = rate as f64 / 2.0;
        let high = self.high_freq.unwrap_or(nyquist);
        if !(self.low_freq >= 0.0 && self.low_freq < high && high <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "cutoffs {}..{high} Hz must satisfy 0 <= low < high <= {nyquist}",
                self.low_freq
            )));
        }
        Ok((frame, shift, fft, high))
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters over FFT bins `0..=fft/2`, spaced evenly on the mel
/// scale. Row `m` holds the weights of filter `m`.
pub(crate) fn mel_filters(num_filters: usize, fft: usize, rate: u32, low: f64, high: f64) -> Vec<Vec<f64>> {
    let lo = hz_to_mel(low);
    let hi = hz_to_mel(high);
    let step = (hi - lo) / (num_filters + 1) as f64;
    let bins = fft / 2 + 1;
    (0..num_filters)
        .map(|m| {
            let left = lo + step * m as f64;
            let center = left + step;
            let right = center + step;
            (0..bins)
                .map(|k| {
                    let mel = hz_to_mel(k as f64 * rate as f64 / fft as f64);
                    if mel > left && mel < right {
                        if mel <= center {
                            (mel - left) / (center - left)
                        } else {
                            (right - mel) / (right - center)
                        }
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Number of frames a signal of `len` samples yields.
pub fn frame_count(len: usize, frame: usize, shift: usize) -> usize {
    if len < frame {
        0
    } else {
        1 + (len - frame) / shift
    }
}

/// Natural-log mel energies per frame, before mean normalization.
pub fn log_mel_energies(signal: &AudioSignal, cfg: &FbankConfig) -> Result<Vec<Vec<f64>>> {
    let rate = signal.sample_rate();
    let (frame, shift, fft, high) = cfg.validate(rate)?;
    let frames = frame_count(signal.len(), frame, shift);
    if frames == 0 {
        return Err(Error::Precondition(format!(
            "signal of {} samples is shorter than one frame ({frame} samples)",
            signal.len()
        )));
    }
    let filters = mel_filters(cfg.num_filters, fft, rate, cfg.low_freq, high);
    let window: Vec<f64> = (0..frame)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (frame - 1).max(1) as f64).cos())
        .collect();
    let plan = FftPlanner::<f64>::new().plan_fft_forward(fft);
    let samples = signal.samples();

    let mut out = Vec::with_capacity(frames);
    let mut frame_buf = vec![0.0f64; frame];
    let mut spec = vec![Complex::new(0.0, 0.0); fft];
    let mut power = vec![0.0f64; fft / 2 + 1];
    for t in 0..frames {
        let start = t * shift;
        for (dst, &s) in frame_buf.iter_mut().zip(&samples[start..start + frame]) {
            *dst = s as f64;
        }
        let dc = frame_buf.iter().sum::<f64>() / frame as f64;
        frame_buf.iter_mut().for_each(|v| *v -= dc);
        for n in (1..frame).rev() {
            frame_buf[n] -= cfg.preemphasis * frame_buf[n - 1];
        }
        frame_buf[0] -= cfg.preemphasis * frame_buf[0];

        spec.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for n in 0..frame {
            spec[n].re = frame_buf[n] * window[n];
        }
        plan.process(&mut spec);
        for (p, c) in power.iter_mut().zip(&spec) {
            *p = c.norm_sqr();
        }
        out.push(
            filters
                .iter()
                .map(|w| {
                    let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(ENERGY_FLOOR).ln()
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Subtracts the per-column mean over all rows.
pub fn mean_normalize(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first().cloned() else { return };
    let n = rows.len() as f64;
    // shifted by the first row so constant columns normalize to exactly zero
    let mut mean = vec![0.0; first.len()];
    for r in rows.iter() {
        for (m, (&v, &f)) in mean.iter_mut().zip(r.iter().zip(&first)) {
            *m += v - f;
        }
    }
    for (m, f) in mean.iter_mut().zip(&first) {
        *m = f + *m / n;
    }
    for r in rows.iter_mut() {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

/// Mean-normalized log mel filterbank features, one row per frame.
pub fn extract_fbank(signal: &AudioSignal, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    let mut rows = log_mel_energies(signal, cfg)?;
    mean_normalize(&mut rows);
    let cols = cfg.num_filters;
    let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
    FeatureMatrix::new(rows.len(), cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn signal(rate: u32, samples: Vec<f32>) -> AudioSignal {
        AudioSignal::new(rate, samples).unwrap()
    }

    #[test]
    fn silence_is_floor_then_zero() {
        let sig = signal(16000, vec![0.0; 16000]);
        let raw = log_mel_energies(&sig, &FbankConfig::default()).unwrap();
        for row in &raw {
            for &v in row {
                assert_eq!(v, ENERGY_FLOOR.ln());
            }
        }
        let m = extract_fbank(&sig, &FbankConfig::default()).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn framing_arithmetic_8k() {
        let sig = signal(8000, vec![0.1; 8000]);
        let m = extract_fbank(&sig, &FbankConfig::default()).unwrap();
        assert_eq!(m.rows(), 98);
        assert_eq!(m.cols(), 40);
    }

    #[test]
    fn too_short_signal_rejected() {
        let sig = signal(8000, vec![0.1; 199]);
        assert!(matches!(
            extract_fbank(&sig, &FbankConfig::default()),
            Err(Error::Precondition(_))
        ));
        let sig = signal(8000, vec![0.1; 200]);
        assert_eq!(extract_fbank(&sig, &FbankConfig::default()).unwrap().rows(), 1);
    }

    #[test]
    fn bad_configs_rejected() {
        let sig = signal(8000, vec![0.1; 8000]);
        let cfg = FbankConfig { high_freq: Some(5000.0), ..Default::default() };
        assert!(extract_fbank(&sig, &cfg).is_err());
        let cfg = FbankConfig { fft_size: Some(100), ..Default::default() };
        assert!(extract_fbank(&sig, &cfg).is_err());
        let cfg = FbankConfig { frame_length_ms: 5.0, ..Default::default() };
        assert!(extract_fbank(&sig, &cfg).is_err());
    }

    #[test]
    fn tone_peaks_in_its_mel_bin() {
        let rate = 16000;
        let samples: Vec<f32> = (0..rate)
            .map(|n| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / rate as f64).sin()) as f32)
            .collect();
        let cfg = FbankConfig::default();
        let raw = log_mel_energies(&signal(rate, samples), &cfg).unwrap();

        // independent bin edges: centres evenly spaced on the HTK mel scale
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let (lo, hi) = (mel(20.0), mel(8000.0));
        let step = (hi - lo) / 41.0;
        let target = mel(440.0);
        let expected = (0..40)
            .min_by(|&a, &b| {
                let ca = (lo + step * (a + 1) as f64 - target).abs();
                let cb = (lo + step * (b + 1) as f64 - target).abs();
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap();
        for row in &raw {
            let argmax = (0..40).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn prepending_one_shift_moves_the_grid_by_one_row() {
        let rate = 16000;
        let mut rng = SeededRng::new(3);
        let samples: Vec<f32> = (0..8000).map(|_| (rng.normal() * 0.2).clamp(-1.0, 1.0) as f32).collect();
        let cfg = FbankConfig::default();
        let shift = cfg.shift_samples(rate);
        let mut padded = vec![0.0f32; shift];
        padded.extend_from_slice(&samples);

        let a = extract_fbank(&signal(rate, samples), &cfg).unwrap();
        let b = extract_fbank(&signal(rate, padded), &cfg).unwrap();
        assert_eq!(b.rows(), a.rows() + 1);

        let common = |m: &FeatureMatrix, skip: usize| {
            let mut rows: Vec<Vec<f64>> = (skip..skip + a.rows())
                .map(|i| m.row(i).iter().map(|&v| v as f64).collect())
                .collect();
            mean_normalize(&mut rows);
            rows
        };
        let ra = common(&a, 0);
        let rb = common(&b, 1);
        for (x, y) in ra.iter().zip(&rb) {
            for (p, q) in x.iter().zip(y) {
                assert!((p - q).abs() < 1e-5, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let mut rng = SeededRng::new(9);
        let samples: Vec<f32> = (0..4000).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        let sig = signal(8000, samples);
        let a = extract_fbank(&sig, &FbankConfig::default()).unwrap();
        let b = extract_fbank(&sig, &FbankConfig::default()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.as_slice().iter().all(|v| v.is_finite()));
    }
}
