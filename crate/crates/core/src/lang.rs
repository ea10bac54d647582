//! Registry of the languages the node can transcribe and translate.
//!
//! Codes follow the three-letter ISO 639-3 style used by common speech
//! translation models (`arb`, `cmn`, `pes`, `swh`, `uzn`), so an external
//! engine adapter can pass them through without remapping.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::LangError;

/// A supported language. Instances only ever come from the registry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguageCode {
    code: &'static str,
    display_name: &'static str,
}

impl LanguageCode {
    pub fn code(&self) -> &'static str {
        self.code
    }

    pub fn display_name(&self) -> &'static str {
        self.display_name
    }
}

impl fmt::Debug for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code)
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code)
    }
}

impl Serialize for LanguageCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code)
    }
}

impl<'de> Deserialize<'de> for LanguageCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        resolve(&tag).map_err(serde::de::Error::custom)
    }
}

macro_rules! registry {
    ($($code:literal => $name:literal),* $(,)?) => {
        const REGISTRY: &[LanguageCode] = &[
            $(LanguageCode { code: $code, display_name: $name }),*
        ];
    };
}

registry! {
    "arb" => "Modern Standard Arabic",
    "ben" => "Bengali",
    "cat" => "Catalan",
    "ces" => "Czech",
    "cmn" => "Mandarin Chinese",
    "cym" => "Welsh",
    "dan" => "Danish",
    "deu" => "German",
    "eng" => "English",
    "est" => "Estonian",
    "fin" => "Finnish",
    "fra" => "French",
    "hin" => "Hindi",
    "ind" => "Indonesian",
    "ita" => "Italian",
    "jpn" => "Japanese",
    "kor" => "Korean",
    "mlt" => "Maltese",
    "nld" => "Dutch",
    "pes" => "Persian",
    "pol" => "Polish",
    "por" => "Portuguese",
    "ron" => "Romanian",
    "rus" => "Russian",
    "slk" => "Slovak",
    "spa" => "Spanish",
    "swe" => "Swedish",
    "swh" => "Swahili",
    "tel" => "Telugu",
    "tgl" => "Tagalog",
    "tha" => "Thai",
    "tur" => "Turkish",
    "ukr" => "Ukrainian",
    "urd" => "Urdu",
    "uzn" => "Northern Uzbek",
    "vie" => "Vietnamese",
}

/// All supported languages in registry order.
pub fn supported_languages() -> &'static [LanguageCode] {
    REGISTRY
}

/// Resolves a user-supplied tag, matching either the code or the English
/// name, case-insensitively.
pub fn resolve(tag: &str) -> Result<LanguageCode, LangError> {
    let tag = tag.trim();
    if tag.is_empty() {
        return Err(LangError::Empty);
    }
    REGISTRY
        .iter()
        .find(|l| l.code.eq_ignore_ascii_case(tag) || l.display_name.eq_ignore_ascii_case(tag))
        .copied()
        .ok_or_else(|| LangError::Unsupported(tag.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_enumerated_list() {
        let langs = supported_languages();
        assert_eq!(langs.len(), 36);
        assert_eq!(langs.first().unwrap().code(), "arb");
        assert_eq!(langs.last().unwrap().code(), "vie");
        assert!(langs.iter().any(|l| l.code() == "eng"));
        assert!(langs.iter().any(|l| l.code() == "fra"));
        assert_eq!(supported_languages(), supported_languages());
    }

    #[test]
    fn codes_are_three_lowercase_letters_and_unique() {
        let mut seen = std::collections::HashSet::new();
        for l in supported_languages() {
            assert_eq!(l.code().len(), 3);
            assert!(l.code().bytes().all(|b| b.is_ascii_lowercase()));
            assert!(seen.insert(l.code()));
        }
    }

    #[test]
    fn resolve_examples() {
        assert_eq!(resolve("ENG").unwrap().code(), "eng");
        assert_eq!(resolve("French").unwrap().code(), "fra");
        assert!(matches!(resolve("klingon"), Err(LangError::Unsupported(_))));
        assert!(matches!(resolve(""), Err(LangError::Empty)));
    }

    #[test]
    fn resolve_round_trips_every_member() {
        for l in supported_languages() {
            assert_eq!(resolve(l.code()).unwrap(), *l);
            assert_eq!(resolve(l.display_name()).unwrap(), *l);
            assert_eq!(resolve(&l.display_name().to_uppercase()).unwrap(), *l);
        }
    }

    #[test]
    fn serde_uses_code() {
        let fra = resolve("fra").unwrap();
        assert_eq!(serde_json::to_string(&fra).unwrap(), "\"fra\"");
        let back: LanguageCode = serde_json::from_str("\"fra\"").unwrap();
        assert_eq!(back, fra);
        assert!(serde_json::from_str::<LanguageCode>("\"xxx\"").is_err());
    }
}
