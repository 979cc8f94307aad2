//! Manager and collaborator actors driving the federated loop through the
//! ledger, the content store and sealed envelopes.
//!
//! Round `r`:
//! 1. each live collaborator trains, seals its weights to the manager, adds
//!    the sealed payload to the store and commits its digest;
//! 2. the manager reads the commits, fetches and checks every payload,
//!    aggregates the valid ones, publishes a bundle holding the new global
//!    weights sealed once per collaborator, and commits the bundle digest;
//! 3. each live collaborator picks up the `GlobalPublished` event, fetches
//!    the bundle, checks it against the on-ledger digest and opens its entry.

mod bundle;
mod collaborator;
mod manager;

pub use bundle::{decode_bundle, encode_bundle};
pub use collaborator::{Collaborator, Incident, IncidentKind};
pub use manager::Manager;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::{Cid, ContentStore, StoreTiming};
use crate::fl_core::{
    self, centralized_baseline, init_weights, make_synthetic_dataset, partition, FlError,
    MetricsReport, WeightVector,
};
use crate::flsc::{Address, Call, Event};
use crate::harness::config::{ConfigError, ExperimentConfig, FaultKind, Scheduler};
use crate::ledger::{Ledger, LedgerError, Receipt};
use crate::sealbox::{self, KeyPair, PublicKey};
use crate::seed;

pub const MANAGER: &str = "manager";

pub fn collaborator_address(index: usize) -> Address {
    Address::new(format!("collab-{index:02}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Tamper,
    DigestMismatch,
    DecryptFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub node: Address,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    /// Collaborators with a weight commit on the ledger this round.
    pub submitters: Vec<Address>,
    pub rejected: Vec<Rejection>,
    /// Number of contributions that entered the mean.
    pub aggregated: usize,
    pub global_commit: Cid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub metrics: MetricsReport,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Model(#[from] FlError),
    #[error("content store: {0}")]
    Store(#[from] crate::cas::CasError),
    #[error("transaction {function} by {sender} reverted: {reason}")]
    Reverted {
        function: String,
        sender: Address,
        reason: String,
    },
    #[error("{0}")]
    Bootstrap(String),
}

/// Everything a run produces; the harness turns this into report files.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub outcomes: Vec<RoundOutcome>,
    pub round_metrics: Vec<RoundMetrics>,
    pub centralized: Option<MetricsReport>,
    pub receipts: Vec<Receipt>,
    pub events: Vec<Event>,
    pub timings: Vec<StoreTiming>,
    pub incidents: Vec<Incident>,
    pub final_weights: WeightVector,
}

impl RunArtifacts {
    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.round_metrics.last().map(|r| &r.metrics)
    }
}

/// Shared infrastructure every actor talks to.
#[derive(Clone, Copy)]
pub struct Network<'a> {
    pub ledger: &'a Ledger,
    pub store: &'a ContentStore,
}

pub(crate) fn ensure_accepted(r: Receipt) -> Result<Receipt, ProtocolError> {
    match &r.status {
        crate::ledger::TxStatus::Accepted => Ok(r),
        crate::ledger::TxStatus::Reverted(e) => Err(ProtocolError::Reverted {
            function: r.function.clone(),
            sender: r.sender.clone(),
            reason: e.to_string(),
        }),
    }
}

fn has_fault(cfg: &ExperimentConfig, kind: FaultKind, node: usize, round: u32) -> bool {
    cfg.faults
        .iter()
        .any(|f| f.kind == kind && f.round == round && (kind == FaultKind::CorruptGlobal || f.node == node))
}

/// Execute a whole experiment: bootstrap, `rounds` rounds, close.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts, ProtocolError> {
    cfg.validate()?;
    let mut store = ContentStore::new();
    if cfg.cas.latency_us > 0 {
        store = store.with_latency(Duration::from_micros(cfg.cas.latency_us));
    }
    if cfg.cas.persist {
        if let Some(out) = &cfg.output_dir {
            store = store.with_persistence(out.join("cas"));
        }
    }
    let ledger = Ledger::new();
    run_on(cfg, Network { ledger: &ledger, store: &store })
}

/// Same as [`run_experiment`] against caller-provided infrastructure, which
/// lets tests inspect or tamper with the store and ledger afterwards.
pub fn run_on(cfg: &ExperimentConfig, net: Network<'_>) -> Result<RunArtifacts, ProtocolError> {
    cfg.validate()?;
    let shapes = cfg.shapes();
    let data = make_synthetic_dataset(seed::derive(cfg.seed, "dataset", 0), &cfg.dataset)?;
    let shards = partition(
        &data.train,
        cfg.n_collaborators,
        cfg.partition,
        seed::derive(cfg.seed, "partition", 0),
    )?;
    let initial = init_weights(&shapes, seed::derive(cfg.seed, "init", 0))?;

    let manager_keys = sealbox::keygen(seed::derive(cfg.seed, "keys", u64::MAX), MANAGER);
    let collab_keys: Vec<KeyPair> = (0..cfg.n_collaborators)
        .map(|i| {
            sealbox::keygen(
                seed::derive(cfg.seed, "keys", i as u64),
                collaborator_address(i).as_str(),
            )
        })
        .collect();
    let directory: BTreeMap<Address, PublicKey> = collab_keys
        .iter()
        .map(|k| (Address::new(k.owner.clone()), k.public))
        .collect();
    let shard_sizes: BTreeMap<Address, usize> = shards
        .iter()
        .enumerate()
        .map(|(i, s)| (collaborator_address(i), s.len()))
        .collect();

    let mut manager = Manager::new(
        manager_keys,
        directory,
        shard_sizes,
        initial.clone(),
        cfg.sample_weighted,
        seed::derive(cfg.seed, "seal", u64::MAX),
    );
    let manager_pk = manager.public_key();
    let mut collaborators: Vec<Collaborator> = collab_keys
        .into_iter()
        .zip(shards)
        .enumerate()
        .map(|(i, (keys, shard))| {
            Collaborator::new(
                i,
                keys,
                manager_pk,
                shard,
                cfg.fail_round(i),
                seed::derive(cfg.seed, "seal", i as u64),
            )
        })
        .collect();

    // steps 1-3: deploy, register, publish the model, collaborators fetch it
    manager.bootstrap(net, cfg.gas_schedule())?;
    for c in &mut collaborators {
        c.fetch_model(net)?;
    }
    ensure_accepted(net.ledger.call(manager.address(), Call::StartLearning)?)?;

    let mut outcomes = Vec::with_capacity(cfg.rounds as usize);
    let mut round_metrics = Vec::with_capacity(cfg.rounds as usize);
    for round in 1..=cfg.rounds {
        let train_cfg = |i: usize| cfg.train_config(seed::derive(cfg.seed, &format!("train/{i}"), round as u64));
        let commit_step = |c: &mut Collaborator| -> Result<(), ProtocolError> {
            if !c.is_live(round) {
                return Ok(());
            }
            let faults = collaborator::StepFaults {
                corrupt_upload: has_fault(cfg, FaultKind::CorruptUpload, c.index(), round),
                substitute_commit: has_fault(cfg, FaultKind::SubstituteCommit, c.index(), round),
                wrong_recipient: has_fault(cfg, FaultKind::WrongRecipient, c.index(), round),
                forge_sender: has_fault(cfg, FaultKind::ForgeSender, c.index(), round),
            };
            c.train_and_commit(net, round, &train_cfg(c.index()), faults)
        };
        match cfg.scheduler {
            Scheduler::Sequential => {
                for c in &mut collaborators {
                    commit_step(c)?;
                }
            }
            Scheduler::Threaded => {
                std::thread::scope(|s| {
                    let handles: Vec<_> = collaborators
                        .iter_mut()
                        .map(|c| {
                            let step = &commit_step;
                            s.spawn(move || step(c))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .try_for_each(|h| h.join().expect("collaborator thread panicked"))
                })?;
            }
        }

        let outcome = manager.run_round(net, round)?;
        if has_fault(cfg, FaultKind::CorruptGlobal, 0, round) {
            net.store.corrupt_with(&outcome.global_commit, |b| {
                let mid = b.len() / 2;
                b[mid] ^= 0x40;
            });
        }
        round_metrics.push(RoundMetrics {
            round,
            metrics: fl_core::evaluate(manager.global(), &data.test)?,
        });
        outcomes.push(outcome);

        match cfg.scheduler {
            Scheduler::Sequential => {
                for c in &mut collaborators {
                    c.sync_global(net, round)?;
                }
            }
            Scheduler::Threaded => {
                std::thread::scope(|s| {
                    let handles: Vec<_> = collaborators
                        .iter_mut()
                        .map(|c| s.spawn(move || c.sync_global(net, round)))
                        .collect();
                    handles
                        .into_iter()
                        .try_for_each(|h| h.join().expect("collaborator thread panicked"))
                })?;
            }
        }
    }
    ensure_accepted(net.ledger.call(manager.address(), Call::Close)?)?;

    let centralized = if cfg.centralized_baseline {
        let epochs = cfg.local_epochs * cfg.rounds as usize;
        let base_cfg = cfg.train_config(seed::derive(cfg.seed, "centralized", 0));
        Some(centralized_baseline(&data, &initial, &base_cfg, epochs)?.1)
    } else {
        None
    };

    let incidents = collaborators
        .iter()
        .flat_map(|c| c.incidents().iter().cloned())
        .collect();
    Ok(RunArtifacts {
        outcomes,
        round_metrics,
        centralized,
        receipts: net.ledger.receipts(),
        events: net.ledger.events_since(0)?.0,
        timings: net.store.timings(),
        incidents,
        final_weights: manager.global().clone(),
    })
}
