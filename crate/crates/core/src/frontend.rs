//! Log-mel frontend: 25 ms Hann windows every 10 ms at 16 kHz, a 512-point
//! transform, 64 mel bands, `ln(offset + energy)`, and non-overlapping
//! 96-frame patches.
//!
//! The whole clip is transformed once and the frame sequence is then cut
//! into 96-frame blocks, so each patch spans 0.96 s of hop time.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const FFT_BINS: usize = FFT_SIZE / 2 + 1;
pub const NUM_BANDS: usize = 64;
pub const PATCH_FRAMES: usize = 96;
pub const PATCH_SECONDS: f64 = 0.96;
pub const DEFAULT_LOG_OFFSET: f64 = 0.01;
pub const DEFAULT_LOWER_EDGE_HZ: f64 = 125.0;
pub const DEFAULT_UPPER_EDGE_HZ: f64 = 7500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Mono 16 kHz clip with clip-level (weak) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformClip {
    clip_id: String,
    samples: Vec<f32>,
    labels: BTreeSet<LabelId>,
}

impl WaveformClip {
    pub fn new(
        clip_id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate_hz: u32,
        labels: BTreeSet<LabelId>,
    ) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedAudio(format!(
                "sample rate {sample_rate_hz} Hz, only {SAMPLE_RATE_HZ} Hz is accepted"
            )));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::UnsupportedAudio(format!(
                "sample {pos} is {} (must be finite and within [-1, 1])",
                samples[pos]
            )));
        }
        Ok(Self { clip_id: clip_id.into(), samples, labels })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn labels(&self) -> &BTreeSet<LabelId> {
        &self.labels
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE_HZ as f64
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    num_bands: usize,
    fft_bins: usize,
    /// Row-major `[num_bands x fft_bins]`.
    weights: Vec<f64>,
    /// `num_bands + 2` ascending edges; band `b` spans `edges[b]..edges[b + 2]`.
    band_edges_hz: Vec<f64>,
    sample_rate_hz: u32,
}

impl MelFilterbank {
    pub fn new(fft_bins: usize, sample_rate_hz: u32, lower_edge_hz: f64, upper_edge_hz: f64) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedAudio(format!("sample rate {sample_rate_hz} Hz")));
        }
        if fft_bins < 2 {
            return Err(Error::InvalidBandEdges(format!("{fft_bins} FFT bins")));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(lower_edge_hz > 0.0 && lower_edge_hz < upper_edge_hz && upper_edge_hz <= nyquist) {
            return Err(Error::InvalidBandEdges(format!(
                "need 0 < lower ({lower_edge_hz}) < upper ({upper_edge_hz}) <= Nyquist ({nyquist})"
            )));
        }
        let (lo_mel, hi_mel) = (hz_to_mel(lower_edge_hz), hz_to_mel(upper_edge_hz));
        let step = (hi_mel - lo_mel) / (NUM_BANDS + 1) as f64;
        let edges_mel: Vec<f64> = (0..NUM_BANDS + 2).map(|i| lo_mel + step * i as f64).collect();
        let bin_mel: Vec<f64> =
            (0..fft_bins).map(|i| hz_to_mel(i as f64 * nyquist / (fft_bins - 1) as f64)).collect();
        let mut weights = vec![0.0; NUM_BANDS * fft_bins];
        for b in 0..NUM_BANDS {
            let (lo, center, hi) = (edges_mel[b], edges_mel[b + 1], edges_mel[b + 2]);
            let row = &mut weights[b * fft_bins..(b + 1) * fft_bins];
            for (w, &m) in row.iter_mut().zip(&bin_mel) {
                let rising = (m - lo) / (center - lo);
                let falling = (hi - m) / (hi - center);
                *w = rising.min(falling).max(0.0);
            }
            if row.iter().all(|&w| w == 0.0) {
                return Err(Error::InvalidBandEdges(format!("band {b} covers no FFT bin")));
            }
        }
        Ok(Self {
            num_bands: NUM_BANDS,
            fft_bins,
            weights,
            band_edges_hz: edges_mel.into_iter().map(mel_to_hz).collect(),
            sample_rate_hz,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn fft_bins(&self) -> usize {
        self.fft_bins
    }

    pub fn band_edges_hz(&self) -> &[f64] {
        &self.band_edges_hz
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.band_edges_hz[band + 1]
    }

    pub fn weights(&self, band: usize) -> &[f64] {
        &self.weights[band * self.fft_bins..(band + 1) * self.fft_bins]
    }

    /// Triangle response of `band` at an arbitrary frequency.
    pub fn response(&self, band: usize, hz: f64) -> f64 {
        let m = hz_to_mel(hz);
        let (lo, c, hi) = (
            hz_to_mel(self.band_edges_hz[band]),
            hz_to_mel(self.band_edges_hz[band + 1]),
            hz_to_mel(self.band_edges_hz[band + 2]),
        );
        ((m - lo) / (c - lo)).min((hi - m) / (hi - c)).max(0.0)
    }

    /// Linear (pre-log) band amplitudes of one spectrum frame.
    pub fn apply(&self, spectrum: &[f32]) -> Vec<f64> {
        (0..self.num_bands)
            .map(|b| self.weights(b).iter().zip(spectrum).map(|(&w, &s)| w * s as f64).sum())
            .collect()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
}

/// Filterbank with the default 125 Hz - 7.5 kHz band edges.
pub fn build_mel_filterbank(fft_bins: usize, sample_rate_hz: u32) -> Result<MelFilterbank> {
    MelFilterbank::new(fft_bins, sample_rate_hz, DEFAULT_LOWER_EDGE_HZ, DEFAULT_UPPER_EDGE_HZ)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub lower_edge_hz: f64,
    pub upper_edge_hz: f64,
    pub log_offset: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            lower_edge_hz: DEFAULT_LOWER_EDGE_HZ,
            upper_edge_hz: DEFAULT_UPPER_EDGE_HZ,
            log_offset: DEFAULT_LOG_OFFSET,
        }
    }
}

/// One 96 x 64 classifier input cut from a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelPatch {
    pub clip_id: String,
    pub patch_index: usize,
    pub start_time_s: f64,
    /// Row-major `[96 frames x 64 bands]`.
    pub values: Vec<f32>,
    pub labels: BTreeSet<LabelId>,
}

/// Reusable frontend: filterbank, window and FFT plan. Immutable and `Sync`.
#[derive(Clone)]
pub struct Frontend {
    config: FrontendConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Frontend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frontend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        if !(config.log_offset > 0.0) {
            return Err(Error::NonPositiveOffset(config.log_offset));
        }
        let filterbank = MelFilterbank::new(FFT_BINS, SAMPLE_RATE_HZ, config.lower_edge_hz, config.upper_edge_hz)?;
        // periodic Hann
        let window = (0..WINDOW_SAMPLES)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SAMPLES as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Ok(Self { config, filterbank, window, fft })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Magnitude spectra `[frames x 257]` of raw 16 kHz samples.
    pub fn stft_samples(&self, samples: &[f32]) -> Result<Matrix> {
        if samples.len() < WINDOW_SAMPLES {
            return Err(Error::ClipTooShort { samples: samples.len(), needed: WINDOW_SAMPLES });
        }
        let frames = (samples.len() - WINDOW_SAMPLES) / HOP_SAMPLES + 1;
        let mut out = Vec::with_capacity(frames * FFT_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let frame = &samples[t * HOP_SAMPLES..t * HOP_SAMPLES + WINDOW_SAMPLES];
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = match frame.get(i) {
                    Some(&s) => Complex::new(s as f64 * self.window[i], 0.0),
                    None => Complex::new(0.0, 0.0),
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend(buf[..FFT_BINS].iter().map(|c| c.norm() as f32));
        }
        Ok(Matrix::from_vec(frames, FFT_BINS, out))
    }

    pub fn stft_magnitude(&self, clip: &WaveformClip) -> Result<Matrix> {
        self.stft_samples(clip.samples())
    }

    pub fn log_mel(&self, spectrogram: &Matrix) -> Result<Matrix> {
        log_mel(spectrogram, &self.filterbank, self.config.log_offset)
    }

    /// Whole-clip log-mel matrix `[frames x 64]`, or `None` when the clip is
    /// shorter than one analysis window.
    pub fn clip_log_mel(&self, clip: &WaveformClip) -> Result<Option<Matrix>> {
        match self.stft_magnitude(clip) {
            Ok(spec) => self.log_mel(&spec).map(Some),
            Err(Error::ClipTooShort { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn extract_patches(&self, clip: &WaveformClip) -> Result<Vec<LogMelPatch>> {
        let Some(mel) = self.clip_log_mel(clip)? else {
            return Ok(Vec::new());
        };
        let count = mel.rows() / PATCH_FRAMES;
        let patches = (0..count)
            .map(|p| {
                let values = mel.slice_rows(p * PATCH_FRAMES, PATCH_FRAMES).into_data();
                assert_eq!(values.len(), PATCH_FRAMES * NUM_BANDS);
                LogMelPatch {
                    clip_id: clip.clip_id().to_string(),
                    patch_index: p,
                    start_time_s: p as f64 * PATCH_SECONDS,
                    values,
                    labels: clip.labels().clone(),
                }
            })
            .collect();
        Ok(patches)
    }
}

/// Number of STFT frames for a clip of `num_samples` samples.
pub fn frame_count(num_samples: usize) -> usize {
    if num_samples < WINDOW_SAMPLES {
        0
    } else {
        (num_samples - WINDOW_SAMPLES) / HOP_SAMPLES + 1
    }
}

pub fn stft_magnitude(clip: &WaveformClip) -> Result<Matrix> {
    Frontend::new(FrontendConfig::default())?.stft_magnitude(clip)
}

/// `out[t][b] = ln(offset + sum_f weights[b][f] * spectrogram[t][f])`.
pub fn log_mel(spectrogram: &Matrix, filterbank: &MelFilterbank, offset: f64) -> Result<Matrix> {
    if !(offset > 0.0) {
        return Err(Error::NonPositiveOffset(offset));
    }
    if spectrogram.cols() != filterbank.fft_bins() {
        return Err(Error::Data(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spectrogram.cols(),
            filterbank.fft_bins()
        )));
    }
    let mut out = Vec::with_capacity(spectrogram.rows() * filterbank.num_bands());
    for t in 0..spectrogram.rows() {
        out.extend(filterbank.apply(spectrogram.row(t)).into_iter().map(|e| (offset + e).ln() as f32));
    }
    Ok(Matrix::from_vec(spectrogram.rows(), filterbank.num_bands(), out))
}

pub fn extract_patches(clip: &WaveformClip, offset: f64) -> Result<Vec<LogMelPatch>> {
    Frontend::new(FrontendConfig { log_offset: offset, ..FrontendConfig::default() })?.extract_patches(clip)
}
