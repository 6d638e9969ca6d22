//! Proof-of-Reputation consensus.

pub mod adversary;
pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod decimal;
pub mod harness;
pub mod ledger;
pub mod netsim;
pub mod reputation;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/reputation.md")]
    mod reputation {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/adversaries.md")]
    mod adversaries {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
