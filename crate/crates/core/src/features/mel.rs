use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, Utterance};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Framing and filterbank parameters of the log-Mel front end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Window length in milliseconds.
    pub frame_length: f32,
    /// Hop in milliseconds.
    pub frame_shift: f32,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub log_floor: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length: 25.0,
            frame_shift: 10.0,
            n_fft: 512,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn frame_samples(&self) -> usize {
        (self.sample_rate as f64 * f64::from(self.frame_length) / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate as f64 * f64::from(self.frame_shift) / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f32 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be >= 1"));
        }
        if !(self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::config(format!(
                "need fmin < fmax <= {nyquist}, got {}..{}",
                self.fmin, self.fmax
            )));
        }
        if self.frame_samples() == 0 || self.shift_samples() == 0 {
            return Err(Error::config("frame length and shift must cover >= 1 sample"));
        }
        if self.n_fft < self.frame_samples() {
            return Err(Error::config(format!(
                "n_fft {} shorter than frame ({} samples)",
                self.n_fft,
                self.frame_samples()
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank on the HTK mel scale, `n_mels × (n_fft/2 + 1)`,
/// with unit peak at each filter's centre frequency.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let lo = hz_to_mel(f64::from(cfg.fmin));
        let hi = hz_to_mel(f64::from(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        let weights = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|j| {
                        let f = j as f64 * bin_hz;
                        let up = (f - l) / (c - l);
                        let down = (r - f) / (r - c);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn center_hz(&self, mel_bin: usize) -> f64 {
        self.centers_hz[mel_bin]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Reusable analyser holding the FFT plan, window and filterbank.
pub struct LogMel {
    cfg: MelConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg: cfg.clone(),
            window: hann_window(cfg.frame_samples()),
            filterbank: MelFilterbank::new(cfg),
            fft,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        let frame = self.cfg.frame_samples();
        if num_samples < frame {
            0
        } else {
            1 + (num_samples - frame) / self.cfg.shift_samples()
        }
    }

    /// Power spectrum `|X_j|²` of one windowed, zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
            b.re = s * w;
        }
        self.fft.process(&mut buf);
        buf[..self.cfg.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Log-Mel frames of a waveform scaled to [-1, 1].
    pub fn compute(&self, samples: &[f64]) -> Result<Tensor<f32>> {
        let t = self.num_frames(samples.len());
        if t == 0 {
            return Err(Error::EmptyInput(format!(
                "{} samples is shorter than one {}-sample frame",
                samples.len(),
                self.cfg.frame_samples()
            )));
        }
        let (frame, shift) = (self.cfg.frame_samples(), self.cfg.shift_samples());
        let floor = f64::from(self.cfg.log_floor);
        let mut data = Vec::with_capacity(t * self.cfg.n_mels);
        for i in 0..t {
            let power = self.power_spectrum(&samples[i * shift..i * shift + frame]);
            data.extend(
                self.filterbank
                    .apply(&power)
                    .into_iter()
                    .map(|e| e.max(floor).ln() as f32),
            );
        }
        Tensor::new(vec![t, self.cfg.n_mels], data)
    }
}

/// Log-Mel spectrogram of an utterance.
pub fn log_mel(utt: &Utterance, cfg: &MelConfig) -> Result<FeatureSequence> {
    if utt.sample_rate != cfg.sample_rate {
        return Err(Error::config(format!(
            "utterance `{}` is {} Hz but the front end expects {} Hz",
            utt.id, utt.sample_rate, cfg.sample_rate
        )));
    }
    let samples: Vec<f64> = utt.samples.iter().map(|&s| f64::from(s) / 32768.0).collect();
    let frames = LogMel::new(cfg)?.compute(&samples).map_err(|e| match e {
        Error::EmptyInput(m) => Error::EmptyInput(format!("utterance `{}`: {m}", utt.id)),
        other => other,
    })?;
    Ok(FeatureSequence {
        utterance_id: utt.id.clone(),
        speaker_id: utt.speaker_id.clone(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(samples: Vec<i16>) -> Utterance {
        Utterance {
            id: "u".into(),
            speaker_id: "s".into(),
            sample_rate: 16_000,
            samples,
        }
    }

    fn sine(freq: f64, n: usize, amp: f64) -> Vec<i16> {
        (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as i16)
            .collect()
    }

    #[test]
    fn frame_count_for_one_second() {
        let f = log_mel(&utt(vec![0; 16_000]), &MelConfig::default()).unwrap();
        assert_eq!(f.frames.shape(), &[98, 80]);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let f = log_mel(&utt(vec![0; 4_000]), &cfg).unwrap();
        let floor = (cfg.log_floor as f64).ln() as f32;
        assert!(f.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_empty_input() {
        let err = log_mel(&utt(vec![1; 399]), &MelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn bad_ranges_rejected() {
        let cfg = MelConfig {
            fmax: 9_000.0,
            ..MelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = MelConfig {
            n_mels: 0,
            ..MelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_filter_covers_some_bin() {
        let fb = MelFilterbank::new(&MelConfig::default());
        for w in fb.weights() {
            assert!(w.iter().any(|&v| v > 0.0));
        }
    }

    /// O(N²) DFT used as an oracle for the FFT path.
    fn naive_power(frame: &[f64], n_fft: usize) -> Vec<f64> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn sine_at_filter_centre_peaks_in_that_filter() {
        let cfg = MelConfig::default();
        let lm = LogMel::new(&cfg).unwrap();
        for k in [20, 35, 50, 65, 78] {
            let f0 = lm.filterbank().center_hz(k);
            let samples = sine(f0, 1_600, 12_000.0);
            let feats = log_mel(&utt(samples.clone()), &cfg).unwrap();

            // Oracle: window + direct DFT + filterbank on the first frame.
            let frame: Vec<f64> = samples[..400]
                .iter()
                .zip(hann_window(400))
                .map(|(&s, w)| f64::from(s) / 32768.0 * w)
                .collect();
            let energies = lm.filterbank().apply(&naive_power(&frame, 512));
            let oracle_arg = energies
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(oracle_arg, k);
            for (mel, e) in energies.iter().enumerate() {
                let got = f64::from(feats.frames.get2(0, mel));
                assert!((got - e.max(1e-10).ln()).abs() < 1e-3);
            }

            for t in 0..feats.frames.rows() {
                let row = feats.frames.row(t);
                let arg = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(arg, k, "frame {t}, target bin {k}");
            }
        }
    }

    #[test]
    fn polarity_flip_invariant() {
        let cfg = MelConfig::default();
        let s: Vec<i16> = sine(440.0, 3_000, 9_000.0)
            .iter()
            .zip(sine(1234.0, 3_000, 5_000.0))
            .map(|(a, b)| a / 2 + b / 2)
            .collect();
        let flipped: Vec<i16> = s.iter().map(|&v| -v).collect();
        let a = log_mel(&utt(s), &cfg).unwrap();
        let b = log_mel(&utt(flipped), &cfg).unwrap();
        assert_eq!(a.frames, b.frames);
    }
}
