//! Serialized transaction executor wrapping the contract, with affine gas
//! metering and a pull-based event log.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::Cid;
use crate::flsc::{Address, Call, ContractState, Event, FlscError, Phase};

pub const DEPLOY_GAS: u64 = 2_151_147;
pub const SEND_WEIGHTS_HASH_GAS: u64 = 1_390_385;
pub const MANAGER_INTERCEPT: u64 = 100_000;
pub const MANAGER_SLOPE: u64 = 25_000;

/// Names of every metered contract function.
pub const FUNCTIONS: [&str; 6] = [
    "add_collaborator",
    "send_model",
    "start_learning",
    "send_weights_hash",
    "send_global_hash",
    "close",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineGas {
    pub intercept: u64,
    pub slope_per_collaborator: u64,
}

impl AffineGas {
    pub const fn new(intercept: u64, slope_per_collaborator: u64) -> Self {
        AffineGas {
            intercept,
            slope_per_collaborator,
        }
    }

    pub fn eval(&self, n_collaborators: u64) -> u64 {
        self.intercept + self.slope_per_collaborator * n_collaborators
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub deploy_cost: u64,
    pub functions: BTreeMap<String, AffineGas>,
}

impl Default for GasSchedule {
    fn default() -> Self {
        let manager = AffineGas::new(MANAGER_INTERCEPT, MANAGER_SLOPE);
        let functions = FUNCTIONS
            .iter()
            .map(|&f| {
                let g = match f {
                    "send_weights_hash" => AffineGas::new(SEND_WEIGHTS_HASH_GAS, 0),
                    "send_model" => AffineGas::new(MANAGER_INTERCEPT, 0),
                    _ => manager,
                };
                (f.to_string(), g)
            })
            .collect();
        GasSchedule {
            deploy_cost: DEPLOY_GAS,
            functions,
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), LedgerError> {
        for f in FUNCTIONS {
            if !self.functions.contains_key(f) {
                return Err(LedgerError::InvalidSchedule(format!("missing function {f}")));
            }
        }
        if let Some(extra) = self.functions.keys().find(|k| !FUNCTIONS.contains(&k.as_str())) {
            return Err(LedgerError::UnknownFunction(extra.clone()));
        }
        if self.functions["send_weights_hash"].slope_per_collaborator != 0 {
            return Err(LedgerError::InvalidSchedule(
                "send_weights_hash slope must be 0".into(),
            ));
        }
        Ok(())
    }

    pub fn gas_for(&self, function: &str, n_collaborators: u64) -> Result<u64, LedgerError> {
        self.functions
            .get(function)
            .map(|g| g.eval(n_collaborators))
            .ok_or_else(|| LedgerError::UnknownFunction(function.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub from: Address,
    pub call: Call,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TxStatus {
    Accepted,
    Reverted(FlscError),
}

impl TxStatus {
    pub fn is_accepted(&self) -> bool {
        matches!(self, TxStatus::Accepted)
    }

    pub fn label(&self) -> String {
        match self {
            TxStatus::Accepted => "accepted".into(),
            TxStatus::Reverted(e) => format!("reverted:{}", e.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Receipt {
    pub tx_index: u64,
    pub sender: Address,
    pub function: String,
    pub status: TxStatus,
    pub gas_used: u64,
    pub events: Vec<Event>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("contract already deployed")]
    AlreadyDeployed,
    #[error("no contract deployed")]
    NotDeployed,
    #[error("stale nonce {got} from {from} (next is {expected})")]
    StaleNonce { from: Address, got: u64, expected: u64 },
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("invalid gas schedule: {0}")]
    InvalidSchedule(String),
    #[error("event cursor {cursor} beyond log length {len}")]
    CursorOutOfRange { cursor: usize, len: usize },
    #[error(transparent)]
    View(#[from] FlscError),
}

struct Chain {
    contract: ContractState,
    schedule: GasSchedule,
    receipts: Vec<Receipt>,
    events: Vec<Event>,
    next_nonce: HashMap<Address, u64>,
}

#[derive(Default)]
pub struct Ledger {
    chain: Mutex<Option<Chain>>,
    new_events: Condvar,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Option<Chain>> {
        self.chain.lock().expect("ledger lock poisoned")
    }

    fn with_chain<T>(&self, f: impl FnOnce(&Chain) -> T) -> Result<T, LedgerError> {
        self.lock().as_ref().map(f).ok_or(LedgerError::NotDeployed)
    }

    pub fn deploy(&self, owner: Address, schedule: GasSchedule) -> Result<Receipt, LedgerError> {
        schedule.validate()?;
        let mut guard = self.lock();
        if guard.is_some() {
            return Err(LedgerError::AlreadyDeployed);
        }
        let receipt = Receipt {
            tx_index: 0,
            sender: owner.clone(),
            function: "deploy".into(),
            status: TxStatus::Accepted,
            gas_used: schedule.deploy_cost,
            events: Vec::new(),
        };
        *guard = Some(Chain {
            contract: ContractState::init(owner),
            schedule,
            receipts: vec![receipt.clone()],
            events: Vec::new(),
            next_nonce: HashMap::new(),
        });
        Ok(receipt)
    }

    /// Next nonce the ledger will accept from `who`.
    pub fn next_nonce(&self, who: &Address) -> u64 {
        self.lock()
            .as_ref()
            .and_then(|c| c.next_nonce.get(who).copied())
            .unwrap_or(0)
    }

    /// Execute `tx` atomically. Contract-level rejections come back as
    /// `Reverted` receipts with gas charged; nonce problems are errors and
    /// never reach the chain.
    pub fn submit(&self, tx: Transaction) -> Result<Receipt, LedgerError> {
        let mut guard = self.lock();
        let chain = guard.as_mut().ok_or(LedgerError::NotDeployed)?;
        let expected = chain.next_nonce.get(&tx.from).copied().unwrap_or(0);
        if tx.nonce < expected {
            return Err(LedgerError::StaleNonce {
                from: tx.from,
                got: tx.nonce,
                expected,
            });
        }
        let function = tx.call.name();
        let n = chain.contract.collaborators().len() as u64;
        let gas_used = chain.schedule.gas_for(function, n)?;
        chain.next_nonce.insert(tx.from.clone(), tx.nonce + 1);

        let (status, events) = match chain.contract.apply(&tx.from, &tx.call) {
            Ok(ev) => (TxStatus::Accepted, vec![ev]),
            Err(e) => (TxStatus::Reverted(e), Vec::new()),
        };
        let receipt = Receipt {
            tx_index: chain.receipts.len() as u64,
            sender: tx.from,
            function: function.to_string(),
            status,
            gas_used,
            events,
        };
        chain.events.extend(receipt.events.iter().cloned());
        chain.receipts.push(receipt.clone());
        drop(guard);
        self.new_events.notify_all();
        Ok(receipt)
    }

    /// Build and submit a transaction using the sender's next nonce.
    pub fn call(&self, from: &Address, call: Call) -> Result<Receipt, LedgerError> {
        let nonce = self.next_nonce(from);
        self.submit(Transaction {
            from: from.clone(),
            call,
            nonce,
        })
    }

    pub fn gas_for(&self, function: &str, n_collaborators: u64) -> Result<u64, LedgerError> {
        self.with_chain(|c| c.schedule.gas_for(function, n_collaborators))?
    }

    pub fn events_since(&self, cursor: usize) -> Result<(Vec<Event>, usize), LedgerError> {
        self.with_chain(|c| {
            let len = c.events.len();
            if cursor > len {
                return Err(LedgerError::CursorOutOfRange { cursor, len });
            }
            Ok((c.events[cursor..].to_vec(), len))
        })?
    }

    /// Block until the event log grows past `cursor` or `timeout` elapses.
    pub fn wait_events(
        &self,
        cursor: usize,
        timeout: Duration,
    ) -> Result<(Vec<Event>, usize), LedgerError> {
        let guard = self.lock();
        let (guard, _) = self
            .new_events
            .wait_timeout_while(guard, timeout, |c| {
                c.as_ref().is_some_and(|c| c.events.len() <= cursor)
            })
            .expect("ledger lock poisoned");
        drop(guard);
        self.events_since(cursor)
    }

    pub fn receipts(&self) -> Vec<Receipt> {
        self.with_chain(|c| c.receipts.clone()).unwrap_or_default()
    }

    pub fn total_gas(&self) -> u64 {
        self.with_chain(|c| c.receipts.iter().map(|r| r.gas_used).sum())
            .unwrap_or(0)
    }

    pub fn state(&self) -> Result<ContractState, LedgerError> {
        self.with_chain(|c| c.contract.clone())
    }

    // Views cost nothing and never touch receipts.

    pub fn get_model(&self) -> Result<Cid, LedgerError> {
        Ok(self.with_chain(|c| c.contract.get_model())??)
    }

    pub fn get_weight_commits(&self, round: u32) -> Result<BTreeMap<Address, Cid>, LedgerError> {
        Ok(self.with_chain(|c| c.contract.get_weight_commits(round))??)
    }

    pub fn get_global_commit(&self, round: u32) -> Result<Cid, LedgerError> {
        Ok(self.with_chain(|c| c.contract.get_global_commit(round))??)
    }

    pub fn get_phase_round(&self) -> Result<(Phase, u32), LedgerError> {
        self.with_chain(|c| c.contract.get_phase_round())
    }

    pub fn collaborators(&self) -> Result<Vec<Address>, LedgerError> {
        self.with_chain(|c| c.contract.collaborators().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flsc::EventKind;

    fn addr(s: &str) -> Address {
        Address::new(s)
    }

    fn deployed(n: usize) -> Ledger {
        let l = Ledger::new();
        l.deploy(addr("m"), GasSchedule::default()).unwrap();
        for i in 0..n {
            l.call(&addr("m"), Call::AddCollaborator { who: addr(&format!("c{i}")) })
                .unwrap();
        }
        l
    }

    #[test]
    fn deploy_costs_fixed_gas_and_emits_nothing() {
        let l = Ledger::new();
        let r = l.deploy(addr("m"), GasSchedule::default()).unwrap();
        assert_eq!(r.gas_used, 2_151_147);
        assert!(r.events.is_empty());
        assert_eq!(
            l.deploy(addr("m"), GasSchedule::default()),
            Err(LedgerError::AlreadyDeployed)
        );
    }

    #[test]
    fn submit_before_deploy_fails() {
        let l = Ledger::new();
        assert_eq!(l.call(&addr("m"), Call::Close), Err(LedgerError::NotDeployed));
    }

    #[test]
    fn weights_hash_gas_is_constant() {
        let s = GasSchedule::default();
        for n in [1, 5, 20, 50] {
            assert_eq!(s.gas_for("send_weights_hash", n).unwrap(), 1_390_385);
            assert_eq!(s.gas_for("send_model", n).unwrap(), s.gas_for("send_model", 1).unwrap());
        }
        // hand-evaluated: 100000 + 25000 * 10
        assert_eq!(s.gas_for("add_collaborator", 10).unwrap(), 350_000);
        assert_eq!(
            s.gas_for("mint", 1),
            Err(LedgerError::UnknownFunction("mint".into()))
        );
    }

    #[test]
    fn accepted_weights_hash_receipt() {
        let l = deployed(2);
        l.call(&addr("m"), Call::SendModel { model_cid: Cid::of(b"m") }).unwrap();
        l.call(&addr("m"), Call::StartLearning).unwrap();
        let r = l
            .call(&addr("c0"), Call::SendWeightsHash { round: 1, commit: Cid::of(b"w") })
            .unwrap();
        assert_eq!(r.status, TxStatus::Accepted);
        assert_eq!(r.gas_used, 1_390_385);
        assert_eq!(r.events.len(), 1);
        assert_eq!(r.events[0].kind, EventKind::WeightsCommitted);
    }

    #[test]
    fn reverted_call_is_charged_without_events() {
        let l = deployed(1);
        let before = l.state().unwrap();
        let r = l
            .call(&addr("c0"), Call::AddCollaborator { who: addr("c9") })
            .unwrap();
        assert_eq!(r.status, TxStatus::Reverted(FlscError::Unauthorized(addr("c0"))));
        assert!(r.gas_used > 0);
        assert!(r.events.is_empty());
        assert_eq!(l.state().unwrap(), before);
    }

    #[test]
    fn stale_nonce_rejected_and_not_recorded() {
        let l = deployed(2);
        assert_eq!(l.next_nonce(&addr("m")), 2);
        let n = l.receipts().len();
        let err = l
            .submit(Transaction {
                from: addr("m"),
                call: Call::AddCollaborator { who: addr("x") },
                nonce: 1,
            })
            .unwrap_err();
        assert!(matches!(err, LedgerError::StaleNonce { got: 1, expected: 2, .. }));
        assert_eq!(l.receipts().len(), n);
        // gaps are allowed, nonces only need to increase
        l.submit(Transaction { from: addr("z"), call: Call::Close, nonce: 5 }).unwrap();
        assert!(matches!(
            l.submit(Transaction { from: addr("z"), call: Call::Close, nonce: 5 }),
            Err(LedgerError::StaleNonce { .. })
        ));
    }

    #[test]
    fn events_since_cursor() {
        let l = deployed(3);
        let (evs, cur) = l.events_since(0).unwrap();
        assert_eq!(evs.len(), 3);
        assert!(evs.iter().all(|e| e.kind == EventKind::CollaboratorAdded));
        assert_eq!(l.events_since(cur).unwrap().0.len(), 0);
        assert!(matches!(
            l.events_since(cur + 1),
            Err(LedgerError::CursorOutOfRange { .. })
        ));
    }

    #[test]
    fn views_are_free() {
        let l = deployed(3);
        let gas = l.total_gas();
        let receipts = l.receipts().len();
        assert_eq!(l.get_phase_round().unwrap(), (Phase::Open, 0));
        let _ = l.get_model();
        let _ = l.get_weight_commits(1);
        let _ = l.get_global_commit(1);
        assert_eq!(l.total_gas(), gas);
        assert_eq!(l.receipts().len(), receipts);
    }

    #[test]
    fn manager_gas_grows_with_collaborators() {
        let l = deployed(4);
        let r = l.receipts();
        // add_collaborator metered on the count before insertion
        let gas: Vec<u64> = r[1..].iter().map(|r| r.gas_used).collect();
        assert_eq!(gas, vec![100_000, 125_000, 150_000, 175_000]);
    }

    #[test]
    fn schedule_validation() {
        let mut s = GasSchedule::default();
        s.functions.get_mut("send_weights_hash").unwrap().slope_per_collaborator = 1;
        assert!(s.validate().is_err());
        let mut s = GasSchedule::default();
        s.functions.remove("close");
        assert!(s.validate().is_err());
    }

    #[test]
    fn concurrent_submissions_serialize() {
        let l = deployed(8);
        l.call(&addr("m"), Call::SendModel { model_cid: Cid::of(b"m") }).unwrap();
        l.call(&addr("m"), Call::StartLearning).unwrap();
        std::thread::scope(|s| {
            for i in 0..8 {
                let l = &l;
                s.spawn(move || {
                    let who = addr(&format!("c{i}"));
                    l.call(&who, Call::SendWeightsHash { round: 1, commit: Cid::of(&[i]) })
                        .unwrap();
                });
            }
        });
        // replay receipts sequentially on a fresh contract
        let receipts = l.receipts();
        let mut replay = ContractState::init(addr("m"));
        for r in &receipts[1..] {
            for e in &r.events {
                let call = match e.kind {
                    EventKind::CollaboratorAdded => Call::AddCollaborator { who: e.actor.clone() },
                    EventKind::ModelPublished => Call::SendModel { model_cid: e.payload.unwrap() },
                    EventKind::LearningStarted => Call::StartLearning,
                    EventKind::WeightsCommitted => Call::SendWeightsHash {
                        round: e.round,
                        commit: e.payload.unwrap(),
                    },
                    _ => unreachable!(),
                };
                replay.apply(&r.sender, &call).unwrap();
            }
        }
        assert_eq!(replay, l.state().unwrap());
        assert_eq!(l.get_weight_commits(1).unwrap().len(), 8);
    }
}
