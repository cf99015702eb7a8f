//! WAV loading and sound pressure level analysis.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const P_REF: f64 = 2e-5;

/// Interleaved samples scaled to `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub channels: u16,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Channels averaged per frame.
    pub fn to_mono(&self) -> Vec<f64> {
        let c = self.channels as usize;
        self.samples.chunks_exact(c).map(|f| f.iter().sum::<f64>() / c as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub pa_per_unit: f64,
    pub p_ref: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { pa_per_unit: 1.0, p_ref: P_REF }
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported wav format".into()),
        hound::Error::IoError(e) => Error::MalformedHeader(format!("truncated or unreadable: {e}")),
        other => Error::MalformedHeader(other.to_string()),
    }
}

/// Decodes a 16-bit PCM RIFF/WAVE file.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedEncoding("only integer PCM is supported".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!("{} bits per sample, expected 16", spec.bits_per_sample)));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedEncoding(format!("{} channels, expected 1 or 2", spec.channels)));
    }
    if spec.sample_rate == 0 {
        return Err(Error::MalformedHeader("sample rate 0".into()));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(map_hound))
        .collect::<Result<Vec<f64>>>()?;
    if samples.len() != declared {
        return Err(Error::MalformedHeader(format!("data chunk holds {} of {declared} samples", samples.len())));
    }
    if samples.is_empty() {
        return Err(Error::MalformedHeader("no samples".into()));
    }
    if samples.len() % spec.channels as usize != 0 {
        return Err(Error::MalformedHeader("partial frame at end of data".into()));
    }
    Ok(AudioClip { sample_rate: spec.sample_rate, channels: spec.channels, samples })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    parse_wav(&std::fs::read(path)?)
}

/// Encodes as 16-bit PCM. Samples are scaled by 32768 and saturated.
pub fn write_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: clip.channels,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(map_hound)?;
        for &s in &clip.samples {
            let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            w.write_sample(v).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

/// RMS of the channel-averaged signal over `[start_s, end_s)`.
pub fn rms(clip: &AudioClip, segment: (f64, f64)) -> Result<f64> {
    let (start, end) = segment;
    let duration = clip.duration();
    if !(start >= 0.0 && end <= duration + 1e-12 && start.is_finite() && end.is_finite()) {
        return Err(Error::OutOfRange { start, end, duration });
    }
    let sr = clip.sample_rate as f64;
    let i0 = (start * sr).round() as usize;
    let i1 = ((end * sr).round() as usize).min(clip.frames());
    if i1 <= i0 {
        return Err(Error::EmptySegment);
    }
    let mono = clip.to_mono();
    Ok(rms_of(&mono[i0..i1]))
}

pub fn rms_of(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// `20 log10(rms · pa_per_unit / p_ref)`.
pub fn spl_db(rms_amplitude: f64, cal: Calibration) -> Result<f64> {
    if !(rms_amplitude > 0.0) || !rms_amplitude.is_finite() {
        return Err(Error::UndefinedLevel(rms_amplitude));
    }
    if !(cal.pa_per_unit > 0.0 && cal.p_ref > 0.0) {
        return Err(Error::InvalidParams("calibration scalars must be > 0".into()));
    }
    Ok(20.0 * (rms_amplitude * cal.pa_per_unit / cal.p_ref).log10())
}

/// Removes ambient power: `sqrt(max(0, total² - env²))`.
pub fn subtract_noise(rms_total: f64, rms_env: f64) -> f64 {
    (rms_total * rms_total - rms_env * rms_env).max(0.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: f64,
    pub end: f64,
    pub rms: f64,
    /// `None` when the level is undefined (zero RMS).
    pub db: Option<f64>,
}

pub fn segment_report(clip: &AudioClip, segment: (f64, f64), cal: Calibration) -> Result<SegmentReport> {
    let r = rms(clip, segment)?;
    let db = match spl_db(r, cal) {
        Ok(db) => Some(db),
        Err(Error::UndefinedLevel(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SegmentReport { start: segment.0, end: segment.1, rms: r, db })
}

/// SPL of a locomotion segment after subtracting the ambient segment's power.
pub fn locomotion_spl(clip: &AudioClip, loco: (f64, f64), env: (f64, f64), cal: Calibration) -> Result<f64> {
    let total = rms(clip, loco)?;
    let ambient = rms(clip, env)?;
    spl_db(subtract_noise(total, ambient), cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Hand-built canonical 44-byte header followed by `data`.
    fn wav_bytes(channels: u16, bits: u16, format: u16, data: &[u8], declared_len: u32) -> Vec<u8> {
        let sr: u32 = 44100;
        let block = channels * bits / 8;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + declared_len).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&sr.to_le_bytes());
        b.extend_from_slice(&(sr * block as u32).to_le_bytes());
        b.extend_from_slice(&block.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&declared_len.to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    fn sine(amp: f64, freq: f64, sr: u32, secs: f64) -> Vec<f64> {
        let n = (secs * sr as f64) as usize;
        (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn single_sample_value() {
        let clip = parse_wav(&wav_bytes(1, 16, 1, &16384i16.to_le_bytes(), 2)).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
        assert_eq!(clip.sample_rate, 44100);
    }

    #[test]
    fn zero_payload() {
        let clip = parse_wav(&wav_bytes(1, 16, 1, &[0u8; 20], 20)).unwrap();
        assert!(clip.samples.iter().all(|s| *s == 0.0));
        assert_eq!(clip.samples.len(), 10);
    }

    #[test]
    fn malformed_fixtures() {
        let truncated = wav_bytes(1, 16, 1, &[0u8; 6], 20);
        assert!(matches!(parse_wav(&truncated), Err(Error::MalformedHeader(_))));
        assert!(matches!(parse_wav(b"RIFX1234"), Err(Error::MalformedHeader(_))));
        assert!(matches!(parse_wav(&[]), Err(Error::MalformedHeader(_))));
        let eight_bit = wav_bytes(1, 8, 1, &[0u8; 4], 4);
        assert!(matches!(parse_wav(&eight_bit), Err(Error::UnsupportedEncoding(_))));
        let float = wav_bytes(1, 32, 3, &[0u8; 8], 8);
        assert!(matches!(parse_wav(&float), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn stereo_is_averaged() {
        let mut data = Vec::new();
        for v in [16384i16, 0, -16384, 16384] {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let clip = parse_wav(&wav_bytes(2, 16, 1, &data, 8)).unwrap();
        assert_eq!(clip.frames(), 2);
        assert_eq!(clip.to_mono(), vec![0.25, 0.0]);
    }

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for channels in [1u16, 2] {
            let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(i16::MIN..=i16::MAX) as f64 / 32768.0).collect();
            let clip = AudioClip { sample_rate: 44100, channels, samples };
            let once = parse_wav(&write_wav(&clip).unwrap()).unwrap();
            assert_eq!(once, clip);
            let twice = parse_wav(&write_wav(&once).unwrap()).unwrap();
            assert!(once.samples.iter().zip(&twice.samples).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rms_cases() {
        let clip = AudioClip { sample_rate: 100, channels: 1, samples: vec![0.3; 200] };
        assert_relative_eq!(rms(&clip, (0.0, 2.0)).unwrap(), 0.3, max_relative = 1e-12);
        let silence = AudioClip { sample_rate: 100, channels: 1, samples: vec![0.0; 100] };
        assert_eq!(rms(&silence, (0.0, 1.0)).unwrap(), 0.0);
        // 441 Hz at 44.1 kHz: exactly 100 samples per period
        let s = AudioClip { sample_rate: 44100, channels: 1, samples: sine(0.7, 441.0, 44100, 1.0) };
        assert!((rms(&s, (0.0, 1.0)).unwrap() - 0.7 / 2f64.sqrt()).abs() < 1e-6);
        assert!(matches!(rms(&clip, (0.5, 0.5)), Err(Error::EmptySegment)));
        assert!(matches!(rms(&clip, (1.0, 3.0)), Err(Error::OutOfRange { .. })));
        assert!(matches!(rms(&clip, (-0.1, 1.0)), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn spl_cases() {
        let cal = Calibration::default();
        assert_eq!(spl_db(2e-5, cal).unwrap(), 0.0);
        assert_relative_eq!(spl_db(2e-4, cal).unwrap(), 20.0, max_relative = 1e-12);
        assert_relative_eq!(spl_db(1.0, cal).unwrap(), 20.0 * 5e4f64.log10(), max_relative = 1e-12);
        assert!((spl_db(1.0, cal).unwrap() - 93.98).abs() < 0.01);
        assert!(matches!(spl_db(0.0, cal), Err(Error::UndefinedLevel(_))));
        let loud = Calibration { pa_per_unit: 10.0, ..cal };
        assert_relative_eq!(spl_db(0.01, loud).unwrap() - spl_db(0.01, cal).unwrap(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn subtraction_cases() {
        assert_eq!(subtract_noise(0.5, 0.0), 0.5);
        assert_eq!(subtract_noise(0.5, 0.5), 0.0);
        assert_relative_eq!(subtract_noise(0.5, 0.3), 0.4, max_relative = 1e-12);
        assert_eq!(subtract_noise(0.2, 0.5), 0.0);
    }

    #[test]
    fn locomotion_pipeline() {
        let sr = 44100;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // first second ambient only, second second sine plus ambient
        let noise: Vec<f64> = (0..2 * sr).map(|_| rng.random_range(-0.02..0.02) * 3f64.sqrt()).collect();
        let tone = sine(0.1, 441.0, sr as u32, 1.0);
        let samples: Vec<f64> = (0..2 * sr).map(|i| noise[i] + if i >= sr { tone[i - sr] } else { 0.0 }).collect();
        let clip = AudioClip { sample_rate: sr as u32, channels: 1, samples };
        let cal = Calibration::default();
        let got = locomotion_spl(&clip, (1.0, 2.0), (0.0, 1.0), cal).unwrap();
        let expected = spl_db(0.1 / 2f64.sqrt(), cal).unwrap();
        assert!((got - expected).abs() < 0.5, "{got} vs {expected}");

        let quiet = AudioClip { sample_rate: sr as u32, channels: 1, samples: [tone.clone(), vec![0.0; sr]].concat() };
        assert_relative_eq!(
            locomotion_spl(&quiet, (0.0, 1.0), (1.0, 2.0), cal).unwrap(),
            spl_db(rms(&quiet, (0.0, 1.0)).unwrap(), cal).unwrap(),
            max_relative = 1e-12
        );
        let flat = AudioClip { sample_rate: 100, channels: 1, samples: vec![0.1; 200] };
        assert!(matches!(locomotion_spl(&flat, (0.0, 1.0), (1.0, 2.0), cal), Err(Error::UndefinedLevel(_))));
    }

    proptest! {
        #[test]
        fn spl_strictly_increasing(a in 1e-6..10.0f64, k in 1.0001..100.0f64) {
            let cal = Calibration::default();
            prop_assert!(spl_db(a * k, cal).unwrap() > spl_db(a, cal).unwrap());
        }

        #[test]
        fn subtraction_never_exceeds_total(t in 0.0..2.0f64, e in 0.0..2.0f64) {
            prop_assert!(subtract_noise(t, e) <= t);
        }
    }
}
