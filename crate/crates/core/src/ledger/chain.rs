//! The persistent chain: `VDL1` magic followed by `len(u32 BE) ‖ block` frames.
//!
//! All submissions go through one writer lock, so nonce assignment, sealing
//! and the file append happen as a unit. Readers only ever see blocks whose
//! frame has been written and synced.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex, RwLock, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::crypto::{Hash32, Keypair};
use crate::error::LedgerError;
use crate::identity::address_of;
use crate::now_ms;

use super::block::Block;
use super::gas::GasSchedule;
use super::tx::{Address, Transaction, TxKind, MAX_PAYLOAD_LEN};
use super::verify::{check_block, frames, verify_chain_bytes, Frame, NonceTracker, VerificationReport, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockPolicy {
    /// One block per transaction, sealed before `submit_tx` returns.
    Immediate,
    /// Pending transactions are sealed together every `interval`.
    Batch { interval: Duration },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    #[serde(with = "crate::hexfmt")]
    pub tx_hash: Hash32,
    pub block_height: u64,
    #[serde(with = "crate::hexfmt")]
    pub block_hash: Hash32,
    pub gas_used: u64,
    pub cost_wei: u128,
}

#[derive(Debug, Clone)]
pub struct TxLookup {
    pub transaction: Transaction,
    pub block_height: u64,
    pub block_hash: Hash32,
    pub gas_used: u64,
    pub cost_wei: u128,
}

impl TxLookup {
    pub fn receipt(&self) -> Receipt {
        Receipt {
            tx_hash: self.transaction.hash(),
            block_height: self.block_height,
            block_hash: self.block_hash,
            gas_used: self.gas_used,
            cost_wei: self.cost_wei,
        }
    }
}

#[derive(Default)]
struct ChainState {
    blocks: Vec<Arc<Block>>,
    hashes: Vec<Hash32>,
    tx_index: HashMap<Hash32, (u64, u32)>,
    nonces: HashMap<Address, u64>,
    file_len: u64,
}

impl ChainState {
    fn push(&mut self, block: Block, frame_len: u64) {
        let height = self.blocks.len() as u64;
        for (i, tx) in block.transactions.iter().enumerate() {
            self.tx_index.insert(tx.hash(), (height, i as u32));
            *self.nonces.entry(tx.sender).or_default() += 1;
        }
        self.hashes.push(block.hash());
        self.blocks.push(Arc::new(block));
        self.file_len += frame_len;
    }
}

struct Pending {
    tx: Transaction,
    reply: mpsc::Sender<Result<Receipt, LedgerError>>,
}

struct Writer {
    file: File,
    next_nonce: HashMap<Address, u64>,
    pending: Vec<Pending>,
}

struct Shared {
    path: PathBuf,
    schedule: GasSchedule,
    state: RwLock<ChainState>,
    writer: Mutex<Writer>,
    stop: AtomicBool,
    wake: Condvar,
    injected_failures: AtomicU32,
}

pub struct Ledger {
    shared: Arc<Shared>,
    sealer: Option<JoinHandle<()>>,
}

fn frame_bytes(block: &Block) -> Vec<u8> {
    let body = block.encode();
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

fn sync_dir(path: &Path) {
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
}

/// Writes a chain file holding only the genesis block, atomically.
fn create_chain_file(path: &Path) -> io::Result<()> {
    let tmp = path.with_extension("vdl.tmp");
    let mut bytes = MAGIC.to_vec();
    bytes.extend_from_slice(&frame_bytes(&Block::genesis()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    sync_dir(path);
    Ok(())
}

impl Ledger {
    /// Creates a genesis-only chain file at `path` if none exists.
    pub fn create_if_absent(path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let path = path.as_ref();
        if !path.exists() {
            create_chain_file(path)?;
        }
        Ok(())
    }

    /// Opens (creating with a genesis block if absent) the chain at `path`,
    /// re-verifying every stored block. A torn trailing frame left by an
    /// interrupted append is moved aside to `<path>.torn` and dropped.
    pub fn open(
        path: impl AsRef<Path>,
        schedule: GasSchedule,
        policy: BlockPolicy,
    ) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        Self::create_if_absent(&path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(LedgerError::Corrupt { height: 0, reason: "bad chain file magic".into() });
        }

        let mut state = ChainState { file_len: MAGIC.len() as u64, ..Default::default() };
        let mut nonces = NonceTracker::default();
        let mut torn_at = None;
        for (offset, frame) in frames(&bytes) {
            let height = state.blocks.len() as u64;
            let body = match frame {
                Frame::Block(body) => body,
                Frame::Torn => {
                    torn_at = Some(offset);
                    break;
                }
            };
            let block = Block::decode(body)
                .map_err(|reason| LedgerError::Corrupt { height, reason })?;
            let prev = state.hashes.last().copied().unwrap_or([0; 32]);
            check_block(&block, height, &prev, &nonces)
                .map_err(|reason| LedgerError::Corrupt { height, reason })?;
            nonces.observe(&block);
            state.push(block, 4 + body.len() as u64);
        }
        if state.blocks.is_empty() {
            return Err(LedgerError::Corrupt { height: 0, reason: "missing genesis block".into() });
        }
        if let Some(offset) = torn_at {
            log::warn!(
                "chain file {} has {} bytes of torn frame after height {}; moving aside",
                path.display(),
                bytes.len() - offset,
                state.blocks.len() - 1
            );
            fs::write(path.with_extension("vdl.torn"), &bytes[offset..])?;
            file.set_len(offset as u64)?;
            file.sync_all()?;
        }
        state.nonces = nonces.into_inner();

        let shared = Arc::new(Shared {
            path,
            schedule,
            writer: Mutex::new(Writer {
                file,
                next_nonce: state.nonces.clone(),
                pending: Vec::new(),
            }),
            state: RwLock::new(state),
            stop: AtomicBool::new(false),
            wake: Condvar::new(),
            injected_failures: AtomicU32::new(0),
        });
        let sealer = match policy {
            BlockPolicy::Immediate => None,
            BlockPolicy::Batch { interval } => {
                let weak = Arc::downgrade(&shared);
                Some(std::thread::spawn(move || sealer_loop(weak, interval)))
            }
        };
        Ok(Ledger { shared, sealer })
    }

    pub fn path(&self) -> &Path {
        &self.shared.path
    }

    pub fn schedule(&self) -> GasSchedule {
        self.shared.schedule
    }

    /// Signs `payload` as the next transaction from `signer` and commits it.
    pub fn submit_tx(
        &self,
        kind: TxKind,
        payload: Vec<u8>,
        signer: &Keypair,
    ) -> Result<Receipt, LedgerError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(LedgerError::PayloadTooLarge { len: payload.len(), max: MAX_PAYLOAD_LEN });
        }
        let mut writer = self.shared.writer.lock().expect("ledger writer poisoned");
        let sender = address_of(&signer.public_key());
        let nonce = writer.next_nonce.get(&sender).copied().unwrap_or(0);
        let tx = Transaction::signed(kind, nonce, now_ms(), payload, signer);
        writer.next_nonce.insert(sender, nonce + 1);

        if self.sealer.is_none() {
            return self
                .shared
                .seal(&mut writer, vec![tx])
                .map(|mut receipts| receipts.remove(0));
        }
        if self.shared.stop.load(Ordering::SeqCst) {
            writer.next_nonce.insert(sender, nonce);
            return Err(LedgerError::Closed);
        }
        let (reply, rx) = mpsc::channel();
        writer.pending.push(Pending { tx, reply });
        drop(writer);
        rx.recv().unwrap_or(Err(LedgerError::Closed))
    }

    /// Number of sealed blocks, genesis included.
    pub fn block_count(&self) -> u64 {
        self.shared.state.read().expect("ledger state poisoned").blocks.len() as u64
    }

    pub fn tip_hash(&self) -> Hash32 {
        *self.shared.state.read().expect("ledger state poisoned").hashes.last().expect("genesis")
    }

    pub fn block(&self, height: u64) -> Option<Arc<Block>> {
        let state = self.shared.state.read().expect("ledger state poisoned");
        state.blocks.get(usize::try_from(height).ok()?).cloned()
    }

    pub fn next_nonce(&self, sender: &Address) -> u64 {
        let state = self.shared.state.read().expect("ledger state poisoned");
        state.nonces.get(sender).copied().unwrap_or(0)
    }

    pub fn get_transaction(&self, tx_hash: &Hash32) -> Result<TxLookup, LedgerError> {
        let state = self.shared.state.read().expect("ledger state poisoned");
        let &(height, idx) = state.tx_index.get(tx_hash).ok_or(LedgerError::NotFound)?;
        let transaction = state.blocks[height as usize].transactions[idx as usize].clone();
        let gas_used = self.shared.schedule.gas_used(&transaction.payload);
        Ok(TxLookup {
            block_height: height,
            block_hash: state.hashes[height as usize],
            gas_used,
            cost_wei: self.shared.schedule.cost_wei(gas_used),
            transaction,
        })
    }

    /// All committed transactions of `kind`, in chain order.
    pub fn transactions_of_kind(&self, kind: TxKind) -> Vec<TxLookup> {
        let state = self.shared.state.read().expect("ledger state poisoned");
        let mut out = Vec::new();
        for (height, block) in state.blocks.iter().enumerate() {
            for tx in block.transactions.iter().filter(|t| t.kind == kind) {
                let gas_used = self.shared.schedule.gas_used(&tx.payload);
                out.push(TxLookup {
                    transaction: tx.clone(),
                    block_height: height as u64,
                    block_hash: state.hashes[height],
                    gas_used,
                    cost_wei: self.shared.schedule.cost_wei(gas_used),
                });
            }
        }
        out
    }

    /// Re-verifies heights `from..=to` from the bytes on disk.
    pub fn verify_chain(&self, from: u64, to: u64) -> Result<VerificationReport, LedgerError> {
        let (len, file_len) = {
            let state = self.shared.state.read().expect("ledger state poisoned");
            (state.blocks.len() as u64, state.file_len)
        };
        if from > to || to >= len {
            return Err(LedgerError::RangeOutOfBounds { from, to, len });
        }
        let mut bytes = vec![0u8; file_len as usize];
        File::open(&self.shared.path)?.read_exact(&mut bytes)?;
        verify_chain_bytes(&bytes, Some((from, to)))
    }

    pub fn verify_all(&self) -> Result<VerificationReport, LedgerError> {
        self.verify_chain(0, self.block_count() - 1)
    }

    /// Makes the next `n` appends fail after writing a partial frame.
    #[doc(hidden)]
    pub fn inject_append_failures(&self, n: u32) {
        self.shared.injected_failures.store(n, Ordering::SeqCst);
    }
}

impl Shared {
    fn seal(&self, writer: &mut Writer, txs: Vec<Transaction>) -> Result<Vec<Receipt>, LedgerError> {
        let (height, prev_hash, file_len) = {
            let state = self.state.read().expect("ledger state poisoned");
            (state.blocks.len() as u64, *state.hashes.last().expect("genesis"), state.file_len)
        };
        let block = Block::seal(height, prev_hash, txs);
        let frame = frame_bytes(&block);

        if let Err(e) = self.append(&mut writer.file, file_len, &frame) {
            // Roll back to the last committed frame boundary.
            let _ = writer.file.set_len(file_len);
            let _ = writer.file.sync_all();
            writer.next_nonce = self.state.read().expect("ledger state poisoned").nonces.clone();
            return Err(LedgerError::Storage(e));
        }

        let block_hash = block.hash();
        let receipts = block
            .transactions
            .iter()
            .map(|tx| {
                let gas_used = self.schedule.gas_used(&tx.payload);
                Receipt {
                    tx_hash: tx.hash(),
                    block_height: height,
                    block_hash,
                    gas_used,
                    cost_wei: self.schedule.cost_wei(gas_used),
                }
            })
            .collect();
        self.state.write().expect("ledger state poisoned").push(block, frame.len() as u64);
        Ok(receipts)
    }

    fn append(&self, file: &mut File, at: u64, frame: &[u8]) -> io::Result<()> {
        file.seek(SeekFrom::Start(at))?;
        let injected = self
            .injected_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if injected {
            file.write_all(&frame[..frame.len() / 2])?;
            return Err(io::Error::other("injected append failure"));
        }
        file.write_all(frame)?;
        file.sync_data()
    }

    fn flush_pending(&self, writer: &mut Writer) {
        if writer.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut writer.pending);
        let (txs, replies): (Vec<_>, Vec<_>) = pending.into_iter().map(|p| (p.tx, p.reply)).unzip();
        match self.seal(writer, txs) {
            Ok(receipts) => {
                for (reply, receipt) in replies.into_iter().zip(receipts) {
                    let _ = reply.send(Ok(receipt));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for reply in replies {
                    let _ = reply.send(Err(LedgerError::Storage(io::Error::other(msg.clone()))));
                }
            }
        }
    }
}

fn sealer_loop(shared: Weak<Shared>, interval: Duration) {
    loop {
        let Some(shared) = shared.upgrade() else { return };
        let mut writer = shared.writer.lock().expect("ledger writer poisoned");
        if !shared.stop.load(Ordering::SeqCst) {
            writer = shared.wake.wait_timeout(writer, interval).expect("ledger writer poisoned").0;
        }
        shared.flush_pending(&mut writer);
        if shared.stop.load(Ordering::SeqCst) {
            return;
        }
    }
}

impl Drop for Ledger {
    fn drop(&mut self) {
        if let Some(handle) = self.sealer.take() {
            self.shared.stop.store(true, Ordering::SeqCst);
            self.shared.wake.notify_all();
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::block::tx_root;

    fn open(dir: &Path) -> Ledger {
        Ledger::open(dir.join("chain.vdl"), GasSchedule::default(), BlockPolicy::Immediate).unwrap()
    }

    #[test]
    fn fresh_chain_is_genesis_only() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = open(dir.path());
        assert_eq!(ledger.block_count(), 1);
        let bytes = fs::read(dir.path().join("chain.vdl")).unwrap();
        assert_eq!(&bytes[..4], b"VDL1");
        assert_eq!(bytes.len(), 4 + 4 + 85);
        assert_eq!(ledger.block(0).unwrap().header.tx_root, tx_root(&[]));
        let genesis = ledger.tip_hash();
        drop(ledger);
        assert_eq!(open(dir.path()).tip_hash(), genesis);
    }

    #[test]
    fn submissions_chain_and_count_nonces() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = open(dir.path());
        let kp = Keypair::generate();
        let r0 = ledger.submit_tx(TxKind::Post, vec![1; 10], &kp).unwrap();
        let r1 = ledger.submit_tx(TxKind::Post, vec![], &kp).unwrap();
        assert_eq!((r0.block_height, r1.block_height), (1, 2));
        assert_eq!(ledger.block(2).unwrap().header.prev_hash, r0.block_hash);
        assert_eq!(r1.gas_used, 21_000);
        let t0 = ledger.get_transaction(&r0.tx_hash).unwrap();
        let t1 = ledger.get_transaction(&r1.tx_hash).unwrap();
        assert_eq!((t0.transaction.nonce, t1.transaction.nonce), (0, 1));
        assert_eq!(t0.receipt(), r0);
        assert!(matches!(ledger.get_transaction(&[9; 32]), Err(LedgerError::NotFound)));
        assert!(ledger.verify_all().unwrap().ok);
    }

    #[test]
    fn payload_limit() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = open(dir.path());
        let err = ledger
            .submit_tx(TxKind::Post, vec![1; MAX_PAYLOAD_LEN + 1], &Keypair::generate())
            .unwrap_err();
        assert!(matches!(err, LedgerError::PayloadTooLarge { .. }));
        assert!(ledger.submit_tx(TxKind::Post, vec![1; MAX_PAYLOAD_LEN], &Keypair::generate()).is_ok());
    }

    #[test]
    fn failed_append_leaves_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = open(dir.path());
        let kp = Keypair::generate();
        ledger.submit_tx(TxKind::Post, vec![1], &kp).unwrap();
        let before = fs::read(ledger.path()).unwrap();
        ledger.inject_append_failures(1);
        assert!(matches!(
            ledger.submit_tx(TxKind::Post, vec![2], &kp),
            Err(LedgerError::Storage(_))
        ));
        assert_eq!(fs::read(ledger.path()).unwrap(), before);
        assert_eq!(ledger.block_count(), 2);
        let r = ledger.submit_tx(TxKind::Post, vec![3], &kp).unwrap();
        assert_eq!(ledger.get_transaction(&r.tx_hash).unwrap().transaction.nonce, 1);
        assert!(ledger.verify_all().unwrap().ok);
    }

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.vdl");
        let kp = Keypair::generate();
        {
            let ledger = open(dir.path());
            ledger.submit_tx(TxKind::Post, vec![1; 20], &kp).unwrap();
        }
        let good = fs::read(&path).unwrap();
        let mut torn = good.clone();
        torn.extend_from_slice(&[0, 0, 1, 0, 7, 7]);
        fs::write(&path, &torn).unwrap();
        let ledger = open(dir.path());
        assert_eq!(ledger.block_count(), 2);
        assert_eq!(fs::read(&path).unwrap(), good);
        assert!(dir.path().join("chain.vdl.torn").exists());
        assert_eq!(ledger.next_nonce(&address_of(&kp.public_key())), 1);
    }

    #[test]
    fn corrupt_block_refuses_to_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.vdl");
        {
            let ledger = open(dir.path());
            ledger.submit_tx(TxKind::Post, vec![1; 20], &Keypair::generate()).unwrap();
        }
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let err = Ledger::open(&path, GasSchedule::default(), BlockPolicy::Immediate).err().unwrap();
        assert!(matches!(err, LedgerError::Corrupt { height: 1, .. }));
    }

    #[test]
    fn batch_policy_groups_concurrent_submissions() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(
            Ledger::open(
                dir.path().join("chain.vdl"),
                GasSchedule::default(),
                BlockPolicy::Batch { interval: Duration::from_millis(100) },
            )
            .unwrap(),
        );
        let kp = Keypair::generate();
        let handles: Vec<_> = (0..5)
            .map(|i| {
                let ledger = ledger.clone();
                let kp = kp.clone();
                std::thread::spawn(move || ledger.submit_tx(TxKind::Post, vec![i + 1], &kp).unwrap())
            })
            .collect();
        let receipts: Vec<Receipt> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(receipts.iter().all(|r| r.block_height >= 1));
        assert!(ledger.block_count() < 6, "expected batching, got {} blocks", ledger.block_count());
        let mut nonces: Vec<u64> = receipts
            .iter()
            .map(|r| ledger.get_transaction(&r.tx_hash).unwrap().transaction.nonce)
            .collect();
        nonces.sort();
        assert_eq!(nonces, vec![0, 1, 2, 3, 4]);
        assert!(ledger.verify_all().unwrap().ok);
    }

    #[test]
    fn verify_range_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = open(dir.path());
        assert!(matches!(ledger.verify_chain(0, 1), Err(LedgerError::RangeOutOfBounds { .. })));
        assert!(matches!(ledger.verify_chain(1, 0), Err(LedgerError::RangeOutOfBounds { .. })));
        let report = ledger.verify_chain(0, 0).unwrap();
        assert_eq!(report.summary(), "ok, 1 block checked");
    }
}
