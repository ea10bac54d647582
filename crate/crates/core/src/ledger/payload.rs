//! Payload schemas for each transaction kind.

use serde::Serialize;

use crate::lang::{self, LanguageCode};

use super::tx::TxKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PostPayload {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_id: [u8; 16],
    pub lang: LanguageCode,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub audio_hash: [u8; 32],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranslationPayload {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_id: [u8; 16],
    pub lang: LanguageCode,
    pub engine_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrationPayload {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub user_id: [u8; 16],
    pub username: String,
    pub default_lang: LanguageCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Post(PostPayload),
    Translation(TranslationPayload),
    Registration(RegistrationPayload),
}

impl Payload {
    pub fn decode(kind: TxKind, bytes: &[u8]) -> Result<Self, String> {
        Ok(match kind {
            TxKind::Post => Payload::Post(PostPayload::decode(bytes)?),
            TxKind::Translation => Payload::Translation(TranslationPayload::decode(bytes)?),
            TxKind::Registration => Payload::Registration(RegistrationPayload::decode(bytes)?),
        })
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Payload::Post(p) => Some(&p.text),
            Payload::Translation(t) => Some(&t.text),
            Payload::Registration(_) => None,
        }
    }
}

fn put_short(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    assert!(bytes.len() <= u8::MAX as usize, "short field longer than 255 bytes");
    out.push(bytes.len() as u8);
    out.extend_from_slice(bytes);
}

fn put_long(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err("payload truncated".into());
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn string(&mut self, n: usize) -> Result<String, String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "payload text is not UTF-8".into())
    }

    fn short(&mut self) -> Result<String, String> {
        let n = self.array::<1>()?[0] as usize;
        self.string(n)
    }

    fn long(&mut self) -> Result<String, String> {
        let n = u32::from_be_bytes(self.array::<4>()?) as usize;
        self.string(n)
    }

    fn lang(&mut self) -> Result<LanguageCode, String> {
        let tag = self.short()?;
        lang::resolve(&tag).map_err(|e| e.to_string())
    }

    fn finish(self) -> Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing payload bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

impl PostPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 + 32 + 4 + self.text.len());
        out.extend_from_slice(&self.post_id);
        put_short(&mut out, self.lang.code());
        out.extend_from_slice(&self.audio_hash);
        put_long(&mut out, &self.text);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        let p = PostPayload {
            post_id: r.array()?,
            lang: r.lang()?,
            audio_hash: r.array()?,
            text: r.long()?,
        };
        r.finish()?;
        Ok(p)
    }
}

impl TranslationPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.post_id);
        put_short(&mut out, self.lang.code());
        put_short(&mut out, &self.engine_id);
        put_long(&mut out, &self.text);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        let p = TranslationPayload {
            post_id: r.array()?,
            lang: r.lang()?,
            engine_id: r.short()?,
            text: r.long()?,
        };
        r.finish()?;
        Ok(p)
    }
}

impl RegistrationPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.user_id);
        put_short(&mut out, &self.username);
        put_short(&mut out, self.default_lang.code());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        let p = RegistrationPayload {
            user_id: r.array()?,
            username: r.short()?,
            default_lang: r.lang()?,
        };
        r.finish()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lang_strategy() -> impl Strategy<Value = LanguageCode> {
        proptest::sample::select(lang::supported_languages().to_vec())
    }

    #[test]
    fn post_layout() {
        let p = PostPayload {
            post_id: [1; 16],
            lang: lang::resolve("eng").unwrap(),
            audio_hash: [2; 32],
            text: "bridge is out".into(),
        };
        let bytes = p.encode();
        assert_eq!(&bytes[..16], &[1; 16]);
        assert_eq!(bytes[16], 3);
        assert_eq!(&bytes[17..20], b"eng");
        assert_eq!(&bytes[20..52], &[2; 32]);
        assert_eq!(&bytes[52..56], &13u32.to_be_bytes());
        assert_eq!(&bytes[56..], b"bridge is out");
        assert_eq!(PostPayload::decode(&bytes).unwrap(), p);
        assert!(PostPayload::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn translation_layout() {
        let t = TranslationPayload {
            post_id: [3; 16],
            lang: lang::resolve("fra").unwrap(),
            engine_id: "mock-1".into(),
            text: "[fra] help".into(),
        };
        let bytes = t.encode();
        assert_eq!(bytes[16], 3);
        assert_eq!(&bytes[17..20], b"fra");
        assert_eq!(bytes[20], 6);
        assert_eq!(&bytes[21..27], b"mock-1");
        assert_eq!(TranslationPayload::decode(&bytes).unwrap(), t);
    }

    proptest! {
        #[test]
        fn payloads_round_trip(
            id in any::<[u8; 16]>(),
            hash in any::<[u8; 32]>(),
            lang in lang_strategy(),
            text in ".*",
            engine in "[a-z0-9-]{1,20}",
            user in "[a-zA-Z0-9_]{3,32}",
        ) {
            let p = PostPayload { post_id: id, lang, audio_hash: hash, text: text.clone() };
            prop_assert_eq!(PostPayload::decode(&p.encode()).unwrap(), p);
            let t = TranslationPayload { post_id: id, lang, engine_id: engine, text };
            prop_assert_eq!(TranslationPayload::decode(&t.encode()).unwrap(), t);
            let r = RegistrationPayload { user_id: id, username: user, default_lang: lang };
            prop_assert_eq!(RegistrationPayload::decode(&r.encode()).unwrap(), r);
        }
    }
}
