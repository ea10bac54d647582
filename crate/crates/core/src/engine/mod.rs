//! Speech engines: transcription (ASR), text translation and
//! speech-to-speech translation behind one trait.

mod external;
mod mock;
pub mod wire;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use external::{ExternalEngine, DEFAULT_TIMEOUT};
pub use mock::MockEngine;

use crate::error::EngineError;
use crate::lang::LanguageCode;
use crate::media::WavAudio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Asr,
    T2tt,
    S2st,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDescriptor {
    pub engine_id: String,
    pub capabilities: BTreeSet<Capability>,
    pub languages: BTreeSet<LanguageCode>,
}

impl EngineDescriptor {
    pub fn supports(&self, lang: LanguageCode) -> bool {
        self.languages.contains(&lang)
    }

    fn require(&self, cap: Capability, langs: &[LanguageCode]) -> Result<(), EngineError> {
        if !self.capabilities.contains(&cap) {
            return Err(EngineError::Unavailable(format!(
                "engine {} lacks {cap:?} capability",
                self.engine_id
            )));
        }
        match langs.iter().find(|l| !self.supports(**l)) {
            Some(l) => Err(EngineError::UnsupportedLanguage(l.code().to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptionResult {
    pub text: String,
    pub lang: LanguageCode,
    pub confidence: f64,
    pub audio_duration_ms: u64,
}

pub trait SpeechEngine: Send + Sync {
    fn descriptor(&self) -> EngineDescriptor;

    fn asr(&self, audio: &WavAudio, lang: LanguageCode) -> Result<TranscriptionResult, EngineError>;

    fn t2tt(&self, text: &str, src: LanguageCode, dst: LanguageCode) -> Result<String, EngineError>;

    fn s2st(
        &self,
        audio: &WavAudio,
        src: LanguageCode,
        dst: LanguageCode,
    ) -> Result<WavAudio, EngineError>;
}

/// Number of whitespace-separated words, as used by the mock tone duration.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
