//! Embedded append-only ledger: signed transactions in hash-chained blocks,
//! with gas-based cost accounting and full re-verification.

mod block;
mod chain;
mod gas;
pub mod payload;
mod tx;
mod verify;

use serde::Serialize;

pub use block::{block_hash, tx_root, Block, BlockHeader, BLOCK_VERSION, HEADER_LEN};
pub use chain::{BlockPolicy, Ledger, Receipt, TxLookup};
pub use gas::{format_eth, GasSchedule, WEI_PER_ETH};
pub use payload::Payload;
pub use tx::{tx_hash, Address, Transaction, TxKind, CANONICAL_PREFIX_LEN, MAX_PAYLOAD_LEN, TX_VERSION};
pub use verify::{frame_count, read_block, verify_chain_bytes, VerificationReport, VerifyFailure, MAGIC};

/// JSON rendering of a transaction, shared by the HTTP API and the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct TransactionView {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub hash: [u8; 32],
    pub version: u8,
    pub kind: TxKind,
    pub sender: Address,
    pub nonce: u64,
    pub timestamp_ms: u64,
    pub payload_hex: String,
    pub payload: Option<Payload>,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub public_key: [u8; 32],
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub signature: [u8; 64],
}

impl From<&Transaction> for TransactionView {
    fn from(tx: &Transaction) -> Self {
        TransactionView {
            hash: tx.hash(),
            version: tx.version,
            kind: tx.kind,
            sender: tx.sender,
            nonce: tx.nonce,
            timestamp_ms: tx.timestamp_ms,
            payload_hex: hex::encode(&tx.payload),
            payload: Payload::decode(tx.kind, &tx.payload).ok(),
            public_key: tx.public_key,
            signature: tx.signature,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockView {
    pub version: u8,
    pub height: u64,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub hash: [u8; 32],
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub prev_hash: [u8; 32],
    pub timestamp_ms: u64,
    pub tx_count: u32,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub tx_root: [u8; 32],
    pub transactions: Vec<TransactionView>,
}

impl From<&Block> for BlockView {
    fn from(b: &Block) -> Self {
        BlockView {
            version: b.header.version,
            height: b.header.height,
            hash: b.hash(),
            prev_hash: b.header.prev_hash,
            timestamp_ms: b.header.timestamp_ms,
            tx_count: b.header.tx_count,
            tx_root: b.header.tx_root,
            transactions: b.transactions.iter().map(TransactionView::from).collect(),
        }
    }
}

/// Canonical JSON body for a block (what `GET /ledger/blocks/{h}` returns).
pub fn block_json(block: &Block) -> String {
    serde_json::to_string(&BlockView::from(block)).expect("block view serializes")
}
