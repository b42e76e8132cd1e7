use std::path::Path;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

fn map_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit PCM WAV file. Samples are scaled by 1/32768 and stereo
/// (or wider) frames are averaged to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only 16-bit PCM is supported, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let raw = reader
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_err(path, e))?;
    if raw.len() % channels != 0 {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "partial sample frame"),
        ));
    }
    let samples = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / PCM16_SCALE).sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV file; samples are clipped to the PCM range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_err(path, e))?;
    for &s in &clip.samples {
        writer.write_sample(quantize(s)).map_err(|e| map_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_err(path, e))
}

pub fn quantize(sample: f64) -> i16 {
    (sample * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, bits: u16, format: hound::SampleFormat, frames: &[&[i32]]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: format,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for f in frames {
            for &s in *f {
                match (format, bits) {
                    (hound::SampleFormat::Float, _) => w.write_sample(s as f32).unwrap(),
                    (_, 16) => w.write_sample(s as i16).unwrap(),
                    _ => w.write_sample(s).unwrap(),
                }
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn scaling_and_stereo_mix() {
        let dir = tempfile::tempdir().unwrap();
        let mono = dir.path().join("m.wav");
        write_raw(&mono, 1, 16, hound::SampleFormat::Int, &[&[16384], &[-32768]]);
        let clip = read_wav(&mono).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0]);
        assert_eq!(clip.sample_rate, 16_000);

        let stereo = dir.path().join("s.wav");
        let l = (0.2 * 32768.0) as i32;
        let r = (0.4 * 32768.0) as i32;
        write_raw(&stereo, 2, 16, hound::SampleFormat::Int, &[&[l, r]]);
        let clip = read_wav(&stereo).unwrap();
        assert!((clip.samples[0] - 0.3).abs() < 1.0 / 32768.0);
    }

    #[test]
    fn rejects_non_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        write_raw(&p, 1, 32, hound::SampleFormat::Float, &[&[0]]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let clip = AudioClip::new(vec![0.1; 1000], 8000).unwrap();
        write_wav(&p, &clip).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Io { .. })), "{:?}", read_wav(&p));
        assert!(matches!(read_wav(&dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let samples: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 0.9).collect();
        write_wav(&p, &AudioClip::new(samples.clone(), 8000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
