//! The dual-chain data model.
//!
//! Every committed round `k` appends one [`Block`] of rating transactions to
//! the transaction chain and one [`ReputationBlock`] holding the full
//! reputation list to the side chain. Both chains start from a genesis round
//! 0 and are hash-linked independently; [`ChainPair`] keeps them in lockstep.

mod block;
mod chain;
mod dump;
mod transaction;

pub use block::{
    package_block, package_block_with, transactions_hash, Block, BlockFault, BlockHeader, BodyFault, PackagedBlock,
    ReputationBlock,
};
pub use chain::{validate_chain, validate_chain_with, ChainFault, ChainPair, FaultKind};
pub use dump::{BlockEntry, ChainDump, DumpError, ReputationBlockEntry, TransactionEntry};
pub use transaction::{
    create_transaction, validate_transaction, validate_transaction_with, RatingTransaction, TransactionPool,
    TxRejection, TX_SIGNING_TAG,
};

use crate::crypto::PublicKey;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction rejected: {0}")]
    Rejected(TxRejection),
    #[error("duplicate pending rating from {origin:?} to {recipient:?} in round {round}")]
    DuplicatePending { origin: PublicKey, recipient: PublicKey, round: u64 },
}
