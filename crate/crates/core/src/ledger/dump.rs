//! JSON chain dumps for offline audit.
//!
//! Each block is exported twice: as readable fields (hex keys and digests,
//! reals rounded to 12 significant digits) and as `encoded`, the hex of its
//! canonical bytes. Loading trusts only `encoded`; the readable fields are
//! cross-checked against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::Canonical;
use crate::crypto::Digest;
use crate::decimal::round_significant;

use super::block::{Block, BlockHeader, ReputationBlock};
use super::chain::ChainPair;

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("malformed dump: {0}")]
    Json(#[from] serde_json::Error),
    #[error("block {index}: bad hex in `encoded`")]
    Hex { index: usize },
    #[error("block {index}: {source}")]
    Decode { index: usize, source: crate::codec::DecodeError },
    #[error("block {index}: readable field `{field}` disagrees with encoded bytes")]
    Inconsistent { index: usize, field: &'static str },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChainDump {
    pub blocks: Vec<BlockEntry>,
    pub reputation_blocks: Vec<ReputationBlockEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HeaderEntry {
    pub round: u64,
    pub previous_hash: Digest,
    pub timestamp: u64,
    pub transactions_hash: Digest,
}

impl From<&BlockHeader> for HeaderEntry {
    fn from(h: &BlockHeader) -> Self {
        Self {
            round: h.round,
            previous_hash: h.previous_hash,
            timestamp: h.timestamp,
            transactions_hash: h.transactions_hash,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransactionEntry {
    pub origin: String,
    pub recipient: String,
    pub rating: f64,
    pub round: u64,
    pub signature: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockEntry {
    pub digest: Digest,
    pub header: HeaderEntry,
    pub transactions: Vec<TransactionEntry>,
    pub encoded: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReputationBlockEntry {
    pub digest: Digest,
    pub header: HeaderEntry,
    pub reputation_list: BTreeMap<String, f64>,
    pub encoded: String,
}

impl ChainDump {
    pub fn from_chains(chains: &ChainPair) -> Self {
        let blocks = chains
            .blocks()
            .iter()
            .map(|b| BlockEntry {
                digest: b.digest(),
                header: (&b.header).into(),
                transactions: b
                    .transactions
                    .iter()
                    .map(|tx| TransactionEntry {
                        origin: tx.origin.to_hex(),
                        recipient: tx.recipient.to_hex(),
                        rating: round_significant(tx.rating, 12),
                        round: tx.round,
                        signature: tx.signature.to_hex(),
                    })
                    .collect(),
                encoded: hex::encode(b.to_canonical_bytes()),
            })
            .collect();
        let reputation_blocks = chains
            .reputation_blocks()
            .iter()
            .map(|r| ReputationBlockEntry {
                digest: r.digest(),
                header: (&r.header).into(),
                reputation_list: r
                    .reputation_list
                    .iter()
                    .map(|(pk, v)| (pk.to_hex(), round_significant(*v, 12)))
                    .collect(),
                encoded: hex::encode(r.to_canonical_bytes()),
            })
            .collect();
        Self { blocks, reputation_blocks }
    }

    /// Rebuilds the chains from the `encoded` fields. The result is not
    /// validated; run [`super::validate_chain`] on it.
    pub fn to_chains(&self) -> Result<ChainPair, DumpError> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (index, entry) in self.blocks.iter().enumerate() {
            let block: Block = decode_entry(index, &entry.encoded)?;
            if HeaderEntry::from(&block.header) != entry.header {
                return Err(DumpError::Inconsistent { index, field: "header" });
            }
            if block.transactions.len() != entry.transactions.len() {
                return Err(DumpError::Inconsistent { index, field: "transactions" });
            }
            blocks.push(block);
        }
        let mut reps = Vec::with_capacity(self.reputation_blocks.len());
        for (index, entry) in self.reputation_blocks.iter().enumerate() {
            let rep: ReputationBlock = decode_entry(index, &entry.encoded)?;
            if HeaderEntry::from(&rep.header) != entry.header {
                return Err(DumpError::Inconsistent { index, field: "header" });
            }
            if rep.reputation_list.len() != entry.reputation_list.len() {
                return Err(DumpError::Inconsistent { index, field: "reputation_list" });
            }
            reps.push(rep);
        }
        Ok(ChainPair::from_parts(blocks, reps))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DumpError> {
        Ok(serde_json::from_str(s)?)
    }
}

fn decode_entry<T: Canonical>(index: usize, encoded: &str) -> Result<T, DumpError> {
    let bytes = hex::decode(encoded).map_err(|_| DumpError::Hex { index })?;
    T::from_canonical_bytes(&bytes).map_err(|source| DumpError::Decode { index, source })
}
