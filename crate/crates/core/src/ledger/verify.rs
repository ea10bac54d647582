//! Full re-verification of a persisted chain file.

use std::collections::HashMap;

use serde::Serialize;

use crate::crypto::{verify_signature, Hash32};
use crate::error::LedgerError;
use crate::identity::address_of;

use super::block::{tx_root, Block, BLOCK_VERSION};
use super::tx::{Address, TX_VERSION};

pub const MAGIC: &[u8; 4] = b"VDL1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyFailure {
    pub height: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub blocks_checked: u64,
    pub first_error: Option<VerifyFailure>,
}

impl VerificationReport {
    pub fn summary(&self) -> String {
        let blocks = if self.blocks_checked == 1 { "block" } else { "blocks" };
        match &self.first_error {
            None => format!("ok, {} {blocks} checked", self.blocks_checked),
            Some(e) => format!(
                "FAILED at height {}: {} ({} {blocks} checked)",
                e.height, e.reason, self.blocks_checked
            ),
        }
    }
}

/// Outcome of reading one frame from a chain file.
pub(crate) enum Frame<'a> {
    Block(&'a [u8]),
    /// Bytes remain but do not form a whole frame.
    Torn,
}

/// Iterates the length-prefixed frames following the magic.
pub(crate) fn frames(bytes: &[u8]) -> impl Iterator<Item = (usize, Frame<'_>)> {
    let mut pos = MAGIC.len().min(bytes.len());
    let mut done = false;
    std::iter::from_fn(move || {
        if done || pos >= bytes.len() {
            return None;
        }
        let start = pos;
        if bytes.len() - pos < 4 {
            done = true;
            return Some((start, Frame::Torn));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if bytes.len() - pos - 4 < len {
            done = true;
            return Some((start, Frame::Torn));
        }
        pos += 4 + len;
        Some((start, Frame::Block(&bytes[start + 4..start + 4 + len])))
    })
}

/// Per-sender transaction counts seen so far.
#[derive(Default)]
pub(crate) struct NonceTracker(HashMap<Address, u64>);

impl NonceTracker {
    pub(crate) fn observe(&mut self, block: &Block) {
        for tx in &block.transactions {
            *self.0.entry(tx.sender).or_default() += 1;
        }
    }

    pub(crate) fn next(&self, sender: &Address) -> u64 {
        self.0.get(sender).copied().unwrap_or(0)
    }

    pub(crate) fn into_inner(self) -> HashMap<Address, u64> {
        self.0
    }
}

/// Every structural and cryptographic rule a sealed block must satisfy,
/// given the hash of its predecessor and the nonces before it.
pub(crate) fn check_block(
    block: &Block,
    height: u64,
    prev_hash: &Hash32,
    nonces: &NonceTracker,
) -> Result<(), String> {
    let h = &block.header;
    if h.version != BLOCK_VERSION {
        return Err(format!("unsupported block version {:#04x}", h.version));
    }
    if h.height != height {
        return Err(format!("header height {} at position {height}", h.height));
    }
    if &h.prev_hash != prev_hash {
        return Err("prev_hash does not match previous block hash".into());
    }
    if h.tx_count as usize != block.transactions.len() {
        return Err("tx_count does not match transactions".into());
    }
    let hashes: Vec<Hash32> = block.transactions.iter().map(|t| t.hash()).collect();
    if tx_root(&hashes) != h.tx_root {
        return Err("tx_root mismatch (transaction hash mismatch)".into());
    }
    if height == 0 {
        if h.tx_count != 0 || h.timestamp_ms != 0 {
            return Err("genesis block must be empty with timestamp 0".into());
        }
        return Ok(());
    }
    if block.transactions.is_empty() {
        return Err("non-genesis block without transactions".into());
    }
    let latest = block.transactions.iter().map(|t| t.timestamp_ms).max().unwrap_or(0);
    if h.timestamp_ms != latest {
        return Err("block timestamp differs from latest transaction timestamp".into());
    }

    let mut pending: HashMap<Address, u64> = HashMap::new();
    for (i, (tx, hash)) in block.transactions.iter().zip(&hashes).enumerate() {
        if tx.version != TX_VERSION {
            return Err(format!("transaction {i}: unsupported version {:#04x}", tx.version));
        }
        if address_of(&tx.public_key) != tx.sender {
            return Err(format!("transaction {i}: sender address does not match public key"));
        }
        if !verify_signature(&tx.public_key, hash, &tx.signature) {
            return Err(format!("transaction {i}: signature invalid"));
        }
        let seen = pending.entry(tx.sender).or_insert_with(|| nonces.next(&tx.sender));
        if tx.nonce != *seen {
            return Err(format!("transaction {i}: nonce {} but expected {}", tx.nonce, seen));
        }
        *seen += 1;
    }
    Ok(())
}

/// Decodes the block at `height` from a serialized chain without verifying
/// it, for read-only inspection of a chain file.
pub fn read_block(bytes: &[u8], height: u64) -> Result<Block, LedgerError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(LedgerError::Corrupt { height: 0, reason: "bad chain file magic".into() });
    }
    match frames(bytes).nth(usize::try_from(height).map_err(|_| LedgerError::NotFound)?) {
        Some((_, Frame::Block(body))) => {
            Block::decode(body).map_err(|reason| LedgerError::Corrupt { height, reason })
        }
        Some((_, Frame::Torn)) => Err(LedgerError::Corrupt { height, reason: "truncated frame".into() }),
        None => Err(LedgerError::NotFound),
    }
}

/// Number of length-prefixed frames (whole or torn) in a serialized chain.
pub fn frame_count(bytes: &[u8]) -> u64 {
    frames(bytes).count() as u64
}

/// Verifies heights `from..=to` of a serialized chain (defaults to the whole
/// chain). Blocks below `from` are decoded and hash-linked but their
/// signatures are not re-checked.
pub fn verify_chain_bytes(
    bytes: &[u8],
    range: Option<(u64, u64)>,
) -> Result<VerificationReport, LedgerError> {
    let fail = |height: u64, from: u64, reason: String| VerificationReport {
        ok: false,
        blocks_checked: (height + 1).saturating_sub(from),
        first_error: Some(VerifyFailure { height, reason }),
    };
    if let Some((from, to)) = range {
        if from > to {
            return Err(LedgerError::RangeOutOfBounds { from, to, len: 0 });
        }
    }
    let from = range.map_or(0, |r| r.0);
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Ok(fail(0, from, "bad chain file magic".into()));
    }

    let mut prev_hash = [0u8; 32];
    let mut nonces = NonceTracker::default();
    let mut height = 0u64;
    let mut reached_end_of_range = false;
    for (_, frame) in frames(bytes) {
        let body = match frame {
            Frame::Block(body) => body,
            Frame::Torn => return Ok(fail(height, from, "truncated frame".into())),
        };
        let block = match Block::decode(body) {
            Ok(b) => b,
            Err(e) => return Ok(fail(height, from, format!("malformed block: {e}"))),
        };
        let result = if height >= from {
            check_block(&block, height, &prev_hash, &nonces)
        } else if block.header.prev_hash != prev_hash {
            Err("prev_hash does not match previous block hash".into())
        } else {
            Ok(())
        };
        if let Err(reason) = result {
            return Ok(fail(height, from, reason));
        }
        nonces.observe(&block);
        prev_hash = block.hash();
        if range.is_some_and(|(_, to)| height == to) {
            reached_end_of_range = true;
            break;
        }
        height += 1;
    }

    match range {
        Some((from, to)) if !reached_end_of_range => {
            Err(LedgerError::RangeOutOfBounds { from, to, len: height })
        }
        Some((from, to)) => Ok(VerificationReport {
            ok: true,
            blocks_checked: to - from + 1,
            first_error: None,
        }),
        None if height == 0 => Ok(fail(0, 0, "missing genesis block".into())),
        None => Ok(VerificationReport { ok: true, blocks_checked: height, first_error: None }),
    }
}
