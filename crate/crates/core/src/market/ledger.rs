//! Append-only hash chain recording every post, price update and
//! settlement of a market run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Digest32 = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerBlock {
    pub index: u64,
    /// Logical clock: the market iteration that produced the block.
    pub timestamp: u64,
    /// Canonical JSON of the recorded event.
    pub payload: String,
    #[serde(with = "hex_digest")]
    pub prev_hash: Digest32,
    #[serde(with = "hex_digest")]
    pub hash: Digest32,
}

impl LedgerBlock {
    pub fn compute_hash(
        index: u64,
        timestamp: u64,
        payload: &str,
        prev_hash: &Digest32,
    ) -> Digest32 {
        let mut hasher = Sha256::new();
        hasher.update(index.to_le_bytes());
        hasher.update(timestamp.to_le_bytes());
        hasher.update((payload.len() as u64).to_le_bytes());
        hasher.update(payload.as_bytes());
        hasher.update(prev_hash);
        hasher.finalize().into()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head(&self) -> Digest32 {
        self.blocks.last().map_or([0; 32], |b| b.hash)
    }

    /// Appends `payload`, serialized to canonical JSON, and returns the new
    /// block's hash.
    pub fn append<P: Serialize>(&mut self, timestamp: u64, payload: &P) -> Digest32 {
        let payload = serde_json::to_string(payload).expect("ledger payloads serialize");
        self.append_raw(timestamp, payload)
    }

    pub fn append_raw(&mut self, timestamp: u64, payload: String) -> Digest32 {
        let index = self.blocks.len() as u64;
        let prev_hash = self.head();
        let hash = LedgerBlock::compute_hash(index, timestamp, &payload, &prev_hash);
        self.blocks.push(LedgerBlock {
            index,
            timestamp,
            payload,
            prev_hash,
            hash,
        });
        hash
    }

    /// Recomputes every hash and checks the linkage and indices.
    pub fn verify(&self) -> bool {
        let mut prev = [0u8; 32];
        for (k, block) in self.blocks.iter().enumerate() {
            if block.index != k as u64 || block.prev_hash != prev {
                return false;
            }
            if LedgerBlock::compute_hash(
                block.index,
                block.timestamp,
                &block.payload,
                &block.prev_hash,
            ) != block.hash
            {
                return false;
            }
            prev = block.hash;
        }
        true
    }

    /// Mutable access for tamper experiments.
    pub fn blocks_mut(&mut self) -> &mut [LedgerBlock] {
        &mut self.blocks
    }

    /// One block per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for block in &self.blocks {
            serde_json::to_writer(&mut out, block)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, LedgerError> {
        let mut blocks = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let block = serde_json::from_str(&line).map_err(|source| LedgerError::Parse {
                line: k + 1,
                source,
            })?;
            blocks.push(block);
        }
        Ok(Self { blocks })
    }
}

mod hex_digest {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(digest: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(digest))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("digest must be 32 bytes"))
    }
}
