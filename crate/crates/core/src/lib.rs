//! Desk-scale simulator for blockchain-coordinated federated learning.
//!
//! Collaborators train locally, seal their weights for the manager, publish
//! them to a content-addressed store and commit the digest to a gas-metered
//! smart-contract state machine. The manager verifies, aggregates (FedAvg or
//! FedProx) and publishes the next global model the same way.

pub mod cas;
pub mod fl_core;
pub mod flsc;
pub mod harness;
pub mod ledger;
pub mod protocol;
pub mod sealbox;
pub mod seed;

pub use cas::{Cid, ContentStore, OpKind, StoreTiming};
pub use flsc::{Address, ContractState, Event, EventKind, Phase};
pub use ledger::{GasSchedule, Ledger, Receipt, Transaction, TxStatus};
