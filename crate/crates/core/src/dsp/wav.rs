use std::path::Path;

use crate::dsp::frame::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono 16 kHz WAV file into samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE || spec.bits_per_sample != 16 {
        return Err(Error::Data(format!(
            "{}: expected 16-bit mono {SAMPLE_RATE} Hz, found {}-bit {} ch {} Hz",
            path.display(),
            spec.bits_per_sample,
            spec.channels,
            spec.sample_rate
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(wav))
        .collect()
}

/// Writes samples as 16-bit PCM mono 16 kHz, clipping to the PCM range.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav)?;
    }
    writer.finalize().map_err(wav)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let sig: Vec<f64> = (0..1000).map(|n| (n as f64 * 0.01).sin() * 0.9).collect();
        write_wav(&path, &sig).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), sig.len());
        for (a, b) in back.iter().zip(&sig) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn clipping_stays_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        write_wav(&path, &[2.0, -2.0]).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, vec![32767.0 / 32768.0, -1.0]);
    }
}
