//! Minimal RIFF/WAVE reader and writer for mono PCM queries.

use super::CorpusError;

/// Decoded mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAudio {
    pub sample_rate: u32,
    /// Amplitudes normalized to `[-1.0, 1.0]`.
    pub samples: Vec<f32>,
}

impl SampledAudio {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, CorpusError> {
    if body.len() < 16 {
        return Err(CorpusError::MalformedContainer(format!(
            "fmt chunk is {} bytes, expected at least 16",
            body.len()
        )));
    }
    let mut format_tag = le_u16(body, 0);
    // WAVE_FORMAT_EXTENSIBLE carries the real codec in the first two bytes of
    // the sub-format GUID.
    if format_tag == WAVE_FORMAT_EXTENSIBLE && body.len() >= 26 {
        format_tag = le_u16(body, 24);
    }
    Ok(FmtChunk {
        format_tag,
        channels: le_u16(body, 2),
        sample_rate: le_u32(body, 4),
        bits_per_sample: le_u16(body, 14),
    })
}

/// Decode a RIFF/WAVE byte buffer holding mono 8- or 16-bit PCM.
///
/// 16-bit samples are scaled by 1/32768; 8-bit samples are unsigned and
/// centred on 128, scaled by 1/128.
pub fn decode_wav(bytes: &[u8]) -> Result<SampledAudio, CorpusError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(CorpusError::MalformedContainer(
            "missing RIFF magic".into(),
        ));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(CorpusError::MalformedContainer(
            "RIFF form type is not WAVE".into(),
        ));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let declared = le_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start.checked_add(declared).ok_or_else(|| {
            CorpusError::MalformedContainer("chunk length overflows".into())
        })?;
        match id {
            b"fmt " => {
                if end > bytes.len() {
                    return Err(CorpusError::MalformedContainer(
                        "fmt chunk runs past end of file".into(),
                    ));
                }
                fmt = Some(parse_fmt(&bytes[start..end])?);
            }
            b"data" => {
                // Streaming writers sometimes leave a bogus length; clamp to
                // what is actually present.
                data = Some(&bytes[start..end.min(bytes.len())]);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (declared & 1);
        if data.is_some() && fmt.is_some() {
            break;
        }
    }

    let fmt = fmt.ok_or_else(|| CorpusError::MalformedContainer("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| CorpusError::MalformedContainer("no data chunk".into()))?;

    if fmt.format_tag != WAVE_FORMAT_PCM {
        return Err(CorpusError::UnsupportedFormat(format!(
            "codec tag {:#06x} is not PCM",
            fmt.format_tag
        )));
    }
    if fmt.channels != 1 {
        return Err(CorpusError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(CorpusError::MalformedContainer("sample rate is zero".into()));
    }

    let samples = match fmt.bits_per_sample {
        8 => data.iter().map(|&b| (b as f32 - 128.0) / 128.0).collect(),
        16 => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        bits => {
            return Err(CorpusError::UnsupportedFormat(format!(
                "{bits}-bit samples, expected 8 or 16"
            )))
        }
    };

    Ok(SampledAudio {
        sample_rate: fmt.sample_rate,
        samples,
    })
}

/// Encode mono audio as a 16-bit PCM WAV file.
///
/// Samples are scaled by 32768, rounded and clamped to the i16 range, so any
/// signal made of multiples of 1/32768 survives a decode round trip exactly.
pub fn encode_wav(audio: &SampledAudio) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(channels: u16, rate: u32, bits: u16, tag: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        let align = channels * bits / 8;
        out.extend_from_slice(&(rate * align as u32).to_le_bytes());
        out.extend_from_slice(&align.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn empty_data_chunk() {
        let a = decode_wav(&header(1, 8000, 16, 1, &[])).unwrap();
        assert_eq!(a, SampledAudio::new(8000, vec![]));
    }

    #[test]
    fn half_scale_sample() {
        let a = decode_wav(&header(1, 8000, 16, 1, &16384i16.to_le_bytes())).unwrap();
        assert_eq!(a.samples, vec![0.5]);
    }

    #[test]
    fn eight_bit_is_unsigned() {
        let a = decode_wav(&header(1, 8000, 8, 1, &[0, 128, 192])).unwrap();
        assert_eq!(a.samples, vec![-1.0, 0.0, 0.5]);
    }

    #[test]
    fn rejects_missing_magic() {
        let mut b = header(1, 8000, 16, 1, &[0, 0]);
        b[0] = b'X';
        assert!(matches!(decode_wav(&b), Err(CorpusError::MalformedContainer(_))));
        assert!(matches!(decode_wav(b"RI"), Err(CorpusError::MalformedContainer(_))));
    }

    #[test]
    fn rejects_missing_data() {
        let b = header(1, 8000, 16, 1, &[]);
        // Drop the data chunk header entirely.
        let truncated = &b[..36];
        assert!(matches!(
            decode_wav(truncated),
            Err(CorpusError::MalformedContainer(_))
        ));
    }

    #[test]
    fn rejects_stereo_and_codecs() {
        assert!(matches!(
            decode_wav(&header(2, 8000, 16, 1, &[0, 0, 0, 0])),
            Err(CorpusError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&header(1, 8000, 8, 6, &[0])),
            Err(CorpusError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&header(1, 8000, 24, 1, &[0, 0, 0])),
            Err(CorpusError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut b = header(1, 8000, 16, 1, &1000i16.to_le_bytes());
        // Insert an odd-length LIST chunk (with pad byte) before fmt.
        let list = [b'L', b'I', b'S', b'T', 3, 0, 0, 0, 1, 2, 3, 0];
        b.splice(12..12, list);
        let a = decode_wav(&b).unwrap();
        assert_eq!(a.samples, vec![1000.0 / 32768.0]);
    }

    proptest! {
        #[test]
        fn sixteen_bit_round_trip(raw in proptest::collection::vec(any::<i16>(), 0..256), rate in 1u32..96_000) {
            let audio = SampledAudio::new(rate, raw.iter().map(|&v| v as f32 / 32768.0).collect());
            let back = decode_wav(&encode_wav(&audio)).unwrap();
            prop_assert_eq!(back, audio);
        }
    }
}
