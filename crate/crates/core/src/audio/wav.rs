use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Reads a WAV file, averaging all channels down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| CoreError::Wav { path: path.to_path_buf(), source };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        HoundFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>().map_err(wav_err)?,
        HoundFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| CoreError::Wav { path: path.to_path_buf(), source };
    let spec = match format {
        SampleFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: wave.sample_rate,
            bits_per_sample: 16,
            sample_format: HoundFormat::Int,
        },
        SampleFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate: wave.sample_rate,
            bits_per_sample: 32,
            sample_format: HoundFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        match format {
            SampleFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(wav_err)?;
            }
            SampleFormat::Float32 => writer.write_sample(s).map_err(wav_err)?,
        }
    }
    writer.finalize().map_err(wav_err)
}
