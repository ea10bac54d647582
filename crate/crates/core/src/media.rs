//! 16-bit PCM WAV parsing and canonical writing.
//!
//! The canonical layout is `RIFF` header, `fmt ` (16-byte PCM body), `data`,
//! then any extra chunks in their stored order, each padded to even length.
//! Extra chunks survive a parse/write round trip untouched, which is how the
//! `txts` transcript chunk travels with the audio.

use std::f64::consts::PI;
use std::fmt;

use crate::crypto::{sha256, Hash32};
use crate::error::MediaError;

pub const BITS_PER_SAMPLE: u16 = 16;
pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const MAX_SAMPLE_RATE: u32 = 48_000;

/// Chunk id carrying the UTF-8 ground-truth transcript.
pub const TRANSCRIPT_CHUNK: ChunkId = ChunkId(*b"txts");

const FMT: [u8; 4] = *b"fmt ";
const DATA: [u8; 4] = *b"data";
const PCM_FORMAT_TAG: u16 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkId(pub [u8; 4]);

impl fmt::Debug for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavLimits {
    pub max_bytes: usize,
    pub max_duration_ms: u64,
}

impl Default for WavLimits {
    fn default() -> Self {
        Self { max_bytes: 10 * 1024 * 1024, max_duration_ms: 120_000 }
    }
}

/// Interleaved 16-bit PCM audio plus any non-audio chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WavAudio {
    sample_rate: u32,
    channels: u16,
    samples: Vec<i16>,
    extra_chunks: Vec<(ChunkId, Vec<u8>)>,
}

impl WavAudio {
    pub fn new(sample_rate: u32, channels: u16, samples: Vec<i16>) -> Result<Self, MediaError> {
        if !(MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&sample_rate) {
            return Err(MediaError::Invalid(format!("sample rate {sample_rate} Hz out of range")));
        }
        if channels != 1 && channels != 2 {
            return Err(MediaError::Invalid(format!("{channels} channels")));
        }
        if samples.len() % channels as usize != 0 {
            return Err(MediaError::Invalid("partial frame".into()));
        }
        if samples.len() * 2 > u32::MAX as usize / 2 {
            return Err(MediaError::Invalid("audio too large for RIFF".into()));
        }
        Ok(Self { sample_rate, channels, samples, extra_chunks: Vec::new() })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn frame_count(&self) -> u64 {
        (self.samples.len() / self.channels as usize) as u64
    }

    pub fn duration_ms(&self) -> u64 {
        self.frame_count() * 1000 / self.sample_rate as u64
    }

    pub fn extra_chunks(&self) -> &[(ChunkId, Vec<u8>)] {
        &self.extra_chunks
    }

    /// Appends an extra chunk after any existing ones.
    pub fn push_chunk(&mut self, id: ChunkId, body: Vec<u8>) -> Result<(), MediaError> {
        if id.0 == FMT || id.0 == DATA {
            return Err(MediaError::Invalid(format!("{id:?} cannot be an extra chunk")));
        }
        if body.len() > u32::MAX as usize / 2 {
            return Err(MediaError::Invalid("chunk too large".into()));
        }
        self.extra_chunks.push((id, body));
        Ok(())
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&[u8]> {
        self.extra_chunks.iter().find(|(cid, _)| *cid == id).map(|(_, b)| b.as_slice())
    }

    /// The embedded transcript, if a `txts` chunk is present.
    pub fn transcript(&self) -> Option<Result<&str, MediaError>> {
        self.chunk(TRANSCRIPT_CHUNK).map(|body| {
            std::str::from_utf8(body)
                .map_err(|_| MediaError::Invalid("txts chunk is not UTF-8".into()))
        })
    }

    /// Sets the `txts` chunk, replacing an existing one in place.
    pub fn set_transcript(&mut self, text: &str) {
        match self.extra_chunks.iter_mut().find(|(id, _)| *id == TRANSCRIPT_CHUNK) {
            Some((_, body)) => *body = text.as_bytes().to_vec(),
            None => self.extra_chunks.push((TRANSCRIPT_CHUNK, text.as_bytes().to_vec())),
        }
    }

    /// Serializes to the canonical byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let data_len = self.samples.len() * 2;
        let extras_len: usize =
            self.extra_chunks.iter().map(|(_, b)| 8 + b.len() + (b.len() & 1)).sum();
        let riff_size = 4 + (8 + 16) + (8 + data_len) + extras_len;

        let mut out = Vec::with_capacity(8 + riff_size);
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(riff_size as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");

        let block_align = self.channels * 2;
        out.extend_from_slice(&FMT);
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&PCM_FORMAT_TAG.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.sample_rate * block_align as u32).to_le_bytes());
        out.extend_from_slice(&block_align.to_le_bytes());
        out.extend_from_slice(&BITS_PER_SAMPLE.to_le_bytes());

        out.extend_from_slice(&DATA);
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }

        for (id, body) in &self.extra_chunks {
            out.extend_from_slice(&id.0);
            out.extend_from_slice(&(body.len() as u32).to_le_bytes());
            out.extend_from_slice(body);
            if body.len() & 1 == 1 {
                out.push(0);
            }
        }
        debug_assert_eq!(out.len(), 8 + riff_size);
        out
    }
}

pub fn write_wav(audio: &WavAudio) -> Vec<u8> {
    audio.to_bytes()
}

struct Fmt {
    channels: u16,
    sample_rate: u32,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Fmt, MediaError> {
    if body.len() < 16 {
        return Err(MediaError::TruncatedChunk("fmt ".into()));
    }
    let format_tag = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let byte_rate = le_u32(body, 8);
    let block_align = le_u16(body, 12);
    let bits = le_u16(body, 14);

    if format_tag != PCM_FORMAT_TAG {
        return Err(MediaError::UnsupportedEncoding(format!("format tag {format_tag:#06x}")));
    }
    if bits != BITS_PER_SAMPLE {
        return Err(MediaError::UnsupportedEncoding(format!("{bits}-bit samples")));
    }
    if channels != 1 && channels != 2 {
        return Err(MediaError::UnsupportedEncoding(format!("{channels} channels")));
    }
    if !(MIN_SAMPLE_RATE..=MAX_SAMPLE_RATE).contains(&sample_rate) {
        return Err(MediaError::UnsupportedEncoding(format!("sample rate {sample_rate} Hz")));
    }
    if block_align != channels * 2 || byte_rate != sample_rate * block_align as u32 {
        return Err(MediaError::UnsupportedEncoding("inconsistent fmt block alignment".into()));
    }
    Ok(Fmt { channels, sample_rate })
}

/// Parses a RIFF/WAVE file holding 16-bit PCM audio.
pub fn parse_wav(bytes: &[u8], limits: &WavLimits) -> Result<WavAudio, MediaError> {
    if bytes.len() > limits.max_bytes {
        return Err(MediaError::TooLarge { len: bytes.len(), max: limits.max_bytes });
    }
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(MediaError::NotRiff);
    }
    let end = 8usize
        .checked_add(le_u32(bytes, 4) as usize)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| MediaError::TruncatedChunk("RIFF".into()))?;

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut extra_chunks = Vec::new();
    let mut pos = 12;
    while pos < end {
        if end - pos < 8 {
            return Err(MediaError::TruncatedChunk(
                String::from_utf8_lossy(&bytes[pos..end]).into_owned(),
            ));
        }
        let id: [u8; 4] = bytes[pos..pos + 4].try_into().expect("4-byte slice");
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if size > end - body_start {
            return Err(MediaError::TruncatedChunk(String::from_utf8_lossy(&id).into_owned()));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            FMT => {
                if fmt.is_some() {
                    return Err(MediaError::DuplicateChunk("fmt "));
                }
                fmt = Some(parse_fmt(body)?);
            }
            DATA => {
                if data.is_some() {
                    return Err(MediaError::DuplicateChunk("data"));
                }
                data = Some(body);
            }
            _ => extra_chunks.push((ChunkId(id), body.to_vec())),
        }
        // A missing pad byte on the final chunk is tolerated.
        pos = (body_start + size + (size & 1)).min(end);
    }

    let fmt = fmt.ok_or(MediaError::MissingChunk("fmt "))?;
    let data = data.ok_or(MediaError::MissingChunk("data"))?;
    let block_align = fmt.channels as usize * 2;
    if data.len() % block_align != 0 {
        return Err(MediaError::TruncatedChunk("data".into()));
    }
    let frames = (data.len() / block_align) as u64;
    let duration_ms = frames * 1000 / fmt.sample_rate as u64;
    if frames as u128 * 1000 > limits.max_duration_ms as u128 * fmt.sample_rate as u128 {
        return Err(MediaError::TooLong { duration_ms, max_ms: limits.max_duration_ms });
    }

    let samples = data.chunks_exact(2).map(|s| i16::from_le_bytes([s[0], s[1]])).collect();
    Ok(WavAudio { sample_rate: fmt.sample_rate, channels: fmt.channels, samples, extra_chunks })
}

/// Parameters of the deterministic tone used as mock synthesized speech.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneParams {
    pub sample_rate: u32,
    pub amplitude: f64,
    pub base_hz: f64,
    pub step_hz: f64,
    pub ms_per_word: u64,
    pub min_ms: u64,
}

impl Default for ToneParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            amplitude: 0.3,
            base_hz: 220.0,
            step_hz: 55.0,
            ms_per_word: 50,
            min_ms: 250,
        }
    }
}

impl ToneParams {
    pub fn duration_ms(&self, text: &str) -> u64 {
        let words = text.split_whitespace().count() as u64;
        (words * self.ms_per_word).max(self.min_ms)
    }

    /// Tone frequency selected by the first byte of SHA-256(text).
    pub fn frequency_hz(&self, text: &str) -> f64 {
        self.base_hz + (sha256(text.as_bytes())[0] % 16) as f64 * self.step_hz
    }
}

/// Mono sine tone whose pitch and length are a pure function of `text`,
/// with `text` attached as the `txts` chunk.
pub fn synth_tone(text: &str, params: &ToneParams) -> WavAudio {
    let freq = params.frequency_hz(text);
    let frames = params.duration_ms(text) * params.sample_rate as u64 / 1000;
    let rate = params.sample_rate as f64;
    let scale = params.amplitude * i16::MAX as f64;
    let samples = (0..frames)
        .map(|n| (scale * (2.0 * PI * freq * n as f64 / rate).sin()).round() as i16)
        .collect();
    let mut audio = WavAudio::new(params.sample_rate, 1, samples).expect("tone params in range");
    audio.set_transcript(text);
    audio
}

/// SHA-256 of the exact stored file bytes.
pub fn audio_hash(bytes: &[u8]) -> Hash32 {
    sha256(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> WavLimits {
        WavLimits::default()
    }

    #[test]
    fn one_second_duration() {
        let audio = WavAudio::new(16_000, 1, vec![0; 16_000]).unwrap();
        let parsed = parse_wav(&audio.to_bytes(), &limits()).unwrap();
        assert_eq!(parsed.duration_ms(), 1000);
        assert_eq!(parsed.frame_count(), 16_000);
    }

    #[test]
    fn empty_audio_is_44_bytes() {
        let audio = WavAudio::new(16_000, 1, vec![]).unwrap();
        assert_eq!(audio.to_bytes().len(), 44);
    }

    #[test]
    fn odd_chunk_is_padded() {
        let mut audio = WavAudio::new(16_000, 1, vec![]).unwrap();
        let base = audio.to_bytes().len();
        audio.push_chunk(TRANSCRIPT_CHUNK, b"hello".to_vec()).unwrap();
        assert_eq!(audio.to_bytes().len(), base + 8 + 5 + 1);
    }

    #[test]
    fn golden_four_frames_with_transcript() {
        // Built by hand from the canonical layout.
        let expected = hex::decode(concat!(
            "52494646", "36000000", "57415645",
            "666d7420", "10000000", "0100", "0100", "803e0000", "007d0000", "0200", "1000",
            "64617461", "08000000", "0000000000000000",
            "74787473", "02000000", "6869",
        ))
        .unwrap();
        let mut audio = WavAudio::new(16_000, 1, vec![0; 4]).unwrap();
        audio.set_transcript("hi");
        assert_eq!(audio.to_bytes(), expected);
        assert_eq!(parse_wav(&expected, &limits()).unwrap(), audio);
    }

    #[test]
    fn rejects_8_bit_pcm() {
        let mut bytes = WavAudio::new(16_000, 1, vec![0; 4]).unwrap().to_bytes();
        bytes[34] = 8; // bits per sample
        assert!(matches!(
            parse_wav(&bytes, &limits()),
            Err(MediaError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn error_paths() {
        let good = WavAudio::new(16_000, 1, vec![1; 16]).unwrap().to_bytes();

        assert_eq!(parse_wav(b"hello world!", &limits()), Err(MediaError::NotRiff));
        assert_eq!(parse_wav(b"RIFF", &limits()), Err(MediaError::NotRiff));

        let mut float = good.clone();
        float[20] = 3;
        assert!(matches!(parse_wav(&float, &limits()), Err(MediaError::UnsupportedEncoding(_))));

        let mut rate = good.clone();
        rate[24..28].copy_from_slice(&96_000u32.to_le_bytes());
        assert!(matches!(parse_wav(&rate, &limits()), Err(MediaError::UnsupportedEncoding(_))));

        let small = WavLimits { max_bytes: 40, ..limits() };
        assert!(matches!(parse_wav(&good, &small), Err(MediaError::TooLarge { .. })));

        let long = WavAudio::new(8_000, 1, vec![0; 8_001]).unwrap().to_bytes();
        let one_second = WavLimits { max_duration_ms: 1000, ..limits() };
        assert!(matches!(parse_wav(&long, &one_second), Err(MediaError::TooLong { .. })));

        let truncated = &good[..good.len() - 2];
        assert!(matches!(parse_wav(truncated, &limits()), Err(MediaError::TruncatedChunk(_))));

        let mut oversize = good.clone();
        oversize[40..44].copy_from_slice(&1000u32.to_le_bytes());
        assert_eq!(
            parse_wav(&oversize, &limits()),
            Err(MediaError::TruncatedChunk("data".into()))
        );

        let mut odd_data = WavAudio::new(16_000, 1, vec![1; 2]).unwrap().to_bytes();
        odd_data[40] = 3;
        odd_data.truncate(44 + 3);
        let riff_size = (odd_data.len() - 8) as u32;
        odd_data[4..8].copy_from_slice(&riff_size.to_le_bytes());
        assert!(matches!(parse_wav(&odd_data, &limits()), Err(MediaError::TruncatedChunk(_))));

        let no_data = {
            let mut b = good[..36].to_vec();
            b[4..8].copy_from_slice(&28u32.to_le_bytes());
            b
        };
        assert_eq!(parse_wav(&no_data, &limits()), Err(MediaError::MissingChunk("data")));

        let no_fmt = {
            let mut b = b"RIFF\0\0\0\0WAVE".to_vec();
            b.extend_from_slice(&good[36..]);
            let n = (b.len() - 8) as u32;
            b[4..8].copy_from_slice(&n.to_le_bytes());
            b
        };
        assert_eq!(parse_wav(&no_fmt, &limits()), Err(MediaError::MissingChunk("fmt ")));

        let dup_data = {
            let mut b = good.clone();
            b.extend_from_slice(&good[36..]);
            let n = (b.len() - 8) as u32;
            b[4..8].copy_from_slice(&n.to_le_bytes());
            b
        };
        assert_eq!(parse_wav(&dup_data, &limits()), Err(MediaError::DuplicateChunk("data")));
    }

    #[test]
    fn extra_chunks_keep_order_and_unknown_ids() {
        let mut audio = WavAudio::new(44_100, 2, vec![1, -1, 2, -2]).unwrap();
        audio.push_chunk(ChunkId(*b"LIST"), b"abc".to_vec()).unwrap();
        audio.set_transcript("need water at school");
        audio.push_chunk(ChunkId(*b"zzzz"), vec![]).unwrap();
        let parsed = parse_wav(&audio.to_bytes(), &limits()).unwrap();
        assert_eq!(parsed, audio);
        assert_eq!(parsed.transcript().unwrap().unwrap(), "need water at school");
        assert!(audio.push_chunk(ChunkId(*b"data"), vec![]).is_err());
    }

    #[test]
    fn tone_durations() {
        let p = ToneParams::default();
        let empty = synth_tone("", &p);
        assert_eq!(empty.duration_ms(), 250);
        assert_eq!(empty.transcript().unwrap().unwrap(), "");
        assert_eq!(synth_tone("a b c", &p).duration_ms(), 250);
        let twenty = vec!["w"; 20].join(" ");
        assert_eq!(synth_tone(&twenty, &p).duration_ms(), 1000);
    }

    #[test]
    fn tone_golden_samples() {
        // SHA-256("[fra] help")[0] = 0xb0 -> 176 mod 16 = 0 -> 220 Hz. Sample
        // values computed independently with round-half-away-from-zero.
        let p = ToneParams::default();
        assert_eq!(p.frequency_hz("[fra] help"), 220.0);
        let tone = synth_tone("[fra] help", &p);
        assert_eq!(tone.frame_count(), 4000);
        let s = tone.samples();
        assert_eq!(
            [s[0], s[1], s[2], s[10], s[40], s[100], s[3999]],
            [0, 848, 1690, 7475, -3038, 6951, -848]
        );
    }

    #[test]
    fn hash_vectors() {
        assert_eq!(
            hex::encode(audio_hash(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let a = synth_tone("x", &ToneParams::default()).to_bytes();
        let mut b = a.clone();
        assert_eq!(audio_hash(&a), audio_hash(&b));
        b[50] ^= 1;
        assert_ne!(audio_hash(&a), audio_hash(&b));
    }
}
