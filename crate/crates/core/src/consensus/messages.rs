use std::sync::Arc;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{hash, Digest, KeyPair, PublicKey, Signature, SignatureVerifier};
use crate::ledger::{Block, RatingTransaction, ReputationBlock};
use crate::netsim::MessageKind;

pub const LEADER_SIGNING_TAG: u8 = 0x02;
pub const VOTE_SIGNING_TAG: u8 = 0x03;
pub const ANNOUNCE_SIGNING_TAG: u8 = 0x04;

/// A leader's proposal: the new block, the new reputation block and the
/// leader's signature over the block digest.
#[derive(Clone, Debug, PartialEq)]
pub struct CommitMessage {
    pub block: Arc<Block>,
    pub rep_block: Arc<ReputationBlock>,
    pub leader: PublicKey,
    pub block_hash_sig: Signature,
}

impl CommitMessage {
    pub fn round(&self) -> u64 {
        self.block.round()
    }

    pub fn block_digest(&self) -> Digest {
        self.block.digest()
    }

    pub fn rep_list_digest(&self) -> Digest {
        self.rep_block.list_digest()
    }

    /// `0x02 | block digest`.
    pub fn signing_payload(block_digest: &Digest) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(33);
        enc.u8(LEADER_SIGNING_TAG).digest(block_digest);
        enc.finish()
    }

    pub fn leader_signature_valid(&self, verifier: &dyn SignatureVerifier) -> bool {
        verifier.verify(&self.leader, &Self::signing_payload(&self.block_digest()), &self.block_hash_sig)
    }
}

impl Canonical for CommitMessage {
    /// `block | reputation block | leader | signature`.
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.block).value(&self.rep_block).public_key(&self.leader).signature(&self.block_hash_sig);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            block: dec.value()?,
            rep_block: dec.value()?,
            leader: dec.public_key()?,
            block_hash_sig: dec.signature()?,
        })
    }
}

/// A member's approval of one exact proposal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyMessage {
    pub voter: PublicKey,
    pub round: u64,
    pub block_digest: Digest,
    pub rep_list_digest: Digest,
    pub sig: Signature,
}

impl VerifyMessage {
    /// `0x03 | round: u64 | block digest | reputation list digest`.
    pub fn signing_payload(round: u64, block_digest: &Digest, rep_list_digest: &Digest) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(73);
        enc.u8(VOTE_SIGNING_TAG).u64(round).digest(block_digest).digest(rep_list_digest);
        enc.finish()
    }

    pub fn sign(keys: &KeyPair, round: u64, block_digest: Digest, rep_list_digest: Digest) -> Self {
        let sig = keys
            .sign(&Self::signing_payload(round, &block_digest, &rep_list_digest))
            .expect("vote payload is non-empty");
        Self { voter: keys.public, round, block_digest, rep_list_digest, sig }
    }

    pub fn for_commit(keys: &KeyPair, msg: &CommitMessage) -> Self {
        Self::sign(keys, msg.round(), msg.block_digest(), msg.rep_list_digest())
    }

    pub fn signature_valid(&self, verifier: &dyn SignatureVerifier) -> bool {
        verifier.verify(
            &self.voter,
            &Self::signing_payload(self.round, &self.block_digest, &self.rep_list_digest),
            &self.sig,
        )
    }
}

impl Canonical for VerifyMessage {
    /// `voter | round: u64 | block digest | list digest | signature`.
    fn encode(&self, enc: &mut Encoder) {
        enc.public_key(&self.voter)
            .u64(self.round)
            .digest(&self.block_digest)
            .digest(&self.rep_list_digest)
            .signature(&self.sig);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            voter: dec.public_key()?,
            round: dec.u64()?,
            block_digest: dec.digest()?,
            rep_list_digest: dec.digest()?,
            sig: dec.signature()?,
        })
    }
}

/// The elected leader naming itself before the proposal phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeaderAnnounce {
    pub round: u64,
    pub attempt: u64,
    pub leader: PublicKey,
    pub sig: Signature,
}

impl LeaderAnnounce {
    /// `0x04 | round: u64 | attempt: u64 | leader`.
    pub fn signing_payload(round: u64, attempt: u64, leader: &PublicKey) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(49);
        enc.u8(ANNOUNCE_SIGNING_TAG).u64(round).u64(attempt).public_key(leader);
        enc.finish()
    }

    pub fn sign(keys: &KeyPair, round: u64, attempt: u64) -> Self {
        let sig =
            keys.sign(&Self::signing_payload(round, attempt, &keys.public)).expect("announce payload is non-empty");
        Self { round, attempt, leader: keys.public, sig }
    }

    pub fn signature_valid(&self, verifier: &dyn SignatureVerifier) -> bool {
        verifier.verify(&self.leader, &Self::signing_payload(self.round, self.attempt, &self.leader), &self.sig)
    }
}

impl Canonical for LeaderAnnounce {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.round).u64(self.attempt).public_key(&self.leader).signature(&self.sig);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { round: dec.u64()?, attempt: dec.u64()?, leader: dec.public_key()?, sig: dec.signature()? })
    }
}

/// The committed proposal together with the votes that carried it.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFinal {
    pub commit: CommitMessage,
    /// Sorted by voter key.
    pub certificate: Vec<VerifyMessage>,
}

impl Canonical for BlockFinal {
    /// `commit | count: u32 | vote*`.
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.commit).seq(&self.certificate);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { commit: dec.value()?, certificate: dec.seq()? })
    }
}

/// Everything that travels over the simulated network.
#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Transaction(RatingTransaction),
    LeaderAnnounce(LeaderAnnounce),
    Commit(Arc<CommitMessage>),
    Verify(VerifyMessage),
    BlockFinal(Arc<BlockFinal>),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Transaction(_) => MessageKind::Transaction,
            WireMessage::LeaderAnnounce(_) => MessageKind::LeaderAnnounce,
            WireMessage::Commit(_) => MessageKind::Commit,
            WireMessage::Verify(_) => MessageKind::Verify,
            WireMessage::BlockFinal(_) => MessageKind::BlockFinal,
        }
    }

    /// The payload bytes; the kind travels beside them in the envelope.
    pub fn to_payload(&self) -> Arc<[u8]> {
        let bytes = match self {
            WireMessage::Transaction(m) => m.to_canonical_bytes(),
            WireMessage::LeaderAnnounce(m) => m.to_canonical_bytes(),
            WireMessage::Commit(m) => m.to_canonical_bytes(),
            WireMessage::Verify(m) => m.to_canonical_bytes(),
            WireMessage::BlockFinal(m) => m.to_canonical_bytes(),
        };
        Arc::from(bytes)
    }

    pub fn from_payload(kind: MessageKind, payload: &[u8]) -> Result<Self, DecodeError> {
        Ok(match kind {
            MessageKind::Transaction => WireMessage::Transaction(Canonical::from_canonical_bytes(payload)?),
            MessageKind::LeaderAnnounce => WireMessage::LeaderAnnounce(Canonical::from_canonical_bytes(payload)?),
            MessageKind::Commit => WireMessage::Commit(Canonical::from_canonical_bytes(payload)?),
            MessageKind::Verify => WireMessage::Verify(Canonical::from_canonical_bytes(payload)?),
            MessageKind::BlockFinal => WireMessage::BlockFinal(Canonical::from_canonical_bytes(payload)?),
        })
    }

    pub fn payload_digest(&self) -> Digest {
        hash(&self.to_payload())
    }
}
