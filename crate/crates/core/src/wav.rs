//! PCM16 mono 16 kHz WAV reading and writing.

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::frontend::SAMPLE_RATE_HZ;

pub const WAV_SPEC: WavSpec =
    WavSpec { channels: 1, sample_rate: SAMPLE_RATE_HZ, bits_per_sample: 16, sample_format: SampleFormat::Int };

fn check_spec(spec: WavSpec, origin: &str) -> Result<()> {
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!("{origin}: {} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedAudio(format!(
            "{origin}: sample rate {} Hz, expected {SAMPLE_RATE_HZ} Hz",
            spec.sample_rate
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{origin}: {}-bit {:?} samples, expected 16-bit PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    Ok(())
}

/// Decodes samples scaled to `[-1, 1)`.
pub fn read_wav_from<R: Read>(reader: R, origin: &str) -> Result<Vec<f32>> {
    let wav = WavReader::new(reader).map_err(|e| Error::UnsupportedAudio(format!("{origin}: {e}")))?;
    check_spec(wav.spec(), origin)?;
    wav.into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0).map_err(|e| Error::UnsupportedAudio(format!("{origin}: {e}"))))
        .collect()
}

pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let file = std::fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(file), &path.display().to_string())
}

/// Quantizes to 16-bit with rounding; values are clamped to `[-1, 1]`.
pub fn quantize(sample: f32) -> i16 {
    (sample.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn write_wav_to<W: Write + Seek>(writer: W, samples: &[f32]) -> Result<()> {
    let mut w = WavWriter::new(writer, WAV_SPEC)?;
    for &s in samples {
        w.write_sample(quantize(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_wav_to(std::io::BufWriter::new(file), samples)
}
