use crate::crypto::{sha256, sha256_parts, Hash32};

use super::tx::Transaction;

pub const BLOCK_VERSION: u8 = 0x01;
/// version ‖ height ‖ prev_hash ‖ timestamp ‖ tx_count ‖ tx_root
pub const HEADER_LEN: usize = 1 + 8 + 32 + 8 + 4 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub version: u8,
    pub height: u64,
    pub prev_hash: Hash32,
    pub timestamp_ms: u64,
    pub tx_count: u32,
    pub tx_root: Hash32,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0] = self.version;
        out[1..9].copy_from_slice(&self.height.to_be_bytes());
        out[9..41].copy_from_slice(&self.prev_hash);
        out[41..49].copy_from_slice(&self.timestamp_ms.to_be_bytes());
        out[49..53].copy_from_slice(&self.tx_count.to_be_bytes());
        out[53..85].copy_from_slice(&self.tx_root);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, String> {
        if b.len() < HEADER_LEN {
            return Err("truncated block header".into());
        }
        Ok(BlockHeader {
            version: b[0],
            height: u64::from_be_bytes(b[1..9].try_into().expect("8 bytes")),
            prev_hash: b[9..41].try_into().expect("32 bytes"),
            timestamp_ms: u64::from_be_bytes(b[41..49].try_into().expect("8 bytes")),
            tx_count: u32::from_be_bytes(b[49..53].try_into().expect("4 bytes")),
            tx_root: b[53..85].try_into().expect("32 bytes"),
        })
    }

    pub fn hash(&self) -> Hash32 {
        sha256(&self.to_bytes())
    }
}

pub fn block_hash(header: &BlockHeader) -> Hash32 {
    header.hash()
}

/// SHA-256 over the concatenated transaction hashes, in block order.
pub fn tx_root(hashes: &[Hash32]) -> Hash32 {
    sha256_parts(hashes.iter().map(|h| h.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            header: BlockHeader {
                version: BLOCK_VERSION,
                height: 0,
                prev_hash: [0; 32],
                timestamp_ms: 0,
                tx_count: 0,
                tx_root: tx_root(&[]),
            },
            transactions: Vec::new(),
        }
    }

    /// Seals `transactions` on top of the block with `prev_hash`. The block
    /// timestamp is the latest transaction timestamp.
    pub fn seal(height: u64, prev_hash: Hash32, transactions: Vec<Transaction>) -> Self {
        let hashes: Vec<Hash32> = transactions.iter().map(Transaction::hash).collect();
        Block {
            header: BlockHeader {
                version: BLOCK_VERSION,
                height,
                prev_hash,
                timestamp_ms: transactions.iter().map(|t| t.timestamp_ms).max().unwrap_or(0),
                tx_count: transactions.len() as u32,
                tx_root: tx_root(&hashes),
            },
            transactions,
        }
    }

    pub fn hash(&self) -> Hash32 {
        self.header.hash()
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = HEADER_LEN + self.transactions.iter().map(Transaction::encoded_len).sum::<usize>();
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&self.header.to_bytes());
        for tx in &self.transactions {
            tx.encode_into(&mut out);
        }
        out
    }

    /// Decodes a block that must occupy exactly `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let header = BlockHeader::from_bytes(bytes)?;
        let mut pos = HEADER_LEN;
        let mut transactions = Vec::with_capacity((header.tx_count as usize).min(1024));
        for i in 0..header.tx_count {
            let (tx, used) = Transaction::decode(&bytes[pos..])
                .map_err(|e| format!("transaction {i}: {e}"))?;
            pos += used;
            transactions.push(tx);
        }
        if pos != bytes.len() {
            return Err(format!("{} trailing bytes after {} transactions", bytes.len() - pos, header.tx_count));
        }
        Ok(Block { header, transactions })
    }
}
