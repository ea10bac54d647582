use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{sha256, Hash32, Keypair};

pub const TX_VERSION: u8 = 0x01;
/// version ‖ kind ‖ sender ‖ nonce ‖ timestamp ‖ payload_len
pub const CANONICAL_PREFIX_LEN: usize = 1 + 1 + 20 + 8 + 8 + 4;
pub const MAX_PAYLOAD_LEN: usize = 64 * 1024;

/// 20-byte ledger address; `0x`-prefixed lowercase hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").ok_or("address must start with 0x")?;
        if digits.len() != 40 {
            return Err(format!("address must have 40 hex digits, got {}", digits.len()));
        }
        let mut out = [0u8; 20];
        hex::decode_to_slice(digits, &mut out).map_err(|e| e.to_string())?;
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Post = 0x01,
    Translation = 0x02,
    Registration = 0x03,
}

impl TxKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(TxKind::Post),
            0x02 => Some(TxKind::Translation),
            0x03 => Some(TxKind::Registration),
            _ => None,
        }
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub version: u8,
    pub kind: TxKind,
    pub sender: Address,
    pub nonce: u64,
    pub timestamp_ms: u64,
    pub payload: Vec<u8>,
    pub public_key: [u8; 32],
    pub signature: [u8; 64],
}

impl Transaction {
    /// Builds and signs a transaction; the sender is derived from the key.
    pub fn signed(
        kind: TxKind,
        nonce: u64,
        timestamp_ms: u64,
        payload: Vec<u8>,
        signer: &Keypair,
    ) -> Self {
        let public_key = signer.public_key();
        let mut tx = Transaction {
            version: TX_VERSION,
            kind,
            sender: crate::identity::address_of(&public_key),
            nonce,
            timestamp_ms,
            payload,
            public_key,
            signature: [0; 64],
        };
        tx.signature = signer.sign(&tx.hash());
        tx
    }

    /// The signed (hashed) portion; public key and signature are excluded.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CANONICAL_PREFIX_LEN + self.payload.len());
        out.push(self.version);
        out.push(self.kind.as_byte());
        out.extend_from_slice(&self.sender.0);
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.timestamp_ms.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn hash(&self) -> Hash32 {
        sha256(&self.canonical_bytes())
    }

    pub fn encoded_len(&self) -> usize {
        CANONICAL_PREFIX_LEN + self.payload.len() + 32 + 64
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.canonical_bytes());
        out.extend_from_slice(&self.public_key);
        out.extend_from_slice(&self.signature);
    }

    /// Decodes one transaction from the front of `bytes`, returning it and
    /// the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), String> {
        if bytes.len() < CANONICAL_PREFIX_LEN {
            return Err("truncated transaction header".into());
        }
        let version = bytes[0];
        let kind = TxKind::from_byte(bytes[1])
            .ok_or_else(|| format!("unknown transaction kind {:#04x}", bytes[1]))?;
        let sender = Address(bytes[2..22].try_into().expect("20 bytes"));
        let nonce = u64::from_be_bytes(bytes[22..30].try_into().expect("8 bytes"));
        let timestamp_ms = u64::from_be_bytes(bytes[30..38].try_into().expect("8 bytes"));
        let payload_len = u32::from_be_bytes(bytes[38..42].try_into().expect("4 bytes")) as usize;
        if payload_len > MAX_PAYLOAD_LEN {
            return Err(format!("payload length {payload_len} exceeds limit"));
        }
        let total = CANONICAL_PREFIX_LEN + payload_len + 96;
        if bytes.len() < total {
            return Err("truncated transaction body".into());
        }
        let payload = bytes[42..42 + payload_len].to_vec();
        let rest = &bytes[42 + payload_len..total];
        let tx = Transaction {
            version,
            kind,
            sender,
            nonce,
            timestamp_ms,
            payload,
            public_key: rest[..32].try_into().expect("32 bytes"),
            signature: rest[32..].try_into().expect("64 bytes"),
        };
        Ok((tx, total))
    }
}

/// Free-function form of [`Transaction::hash`].
pub fn tx_hash(tx: &Transaction) -> Hash32 {
    tx.hash()
}
