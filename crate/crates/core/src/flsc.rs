//! Federated learning smart contract as a plain state machine.
//!
//! Every state-changing call either succeeds and emits exactly one [`Event`],
//! or fails and leaves [`ContractState`] untouched. Metering lives in the
//! ledger; this module knows nothing about gas.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::Cid;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Open,
    Start,
    Learning,
    Close,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Open, Phase::Start, Phase::Learning, Phase::Close];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    CollaboratorAdded,
    ModelPublished,
    LearningStarted,
    WeightsCommitted,
    GlobalPublished,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub round: u32,
    pub actor: Address,
    pub payload: Option<Cid>,
}

/// State-changing contract functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Call {
    AddCollaborator { who: Address },
    SendModel { model_cid: Cid },
    StartLearning,
    /// `round` must equal the contract's current round; late commits are refused.
    SendWeightsHash { round: u32, commit: Cid },
    SendGlobalHash { commit: Cid },
    Close,
}

impl Call {
    pub fn name(&self) -> &'static str {
        match self {
            Call::AddCollaborator { .. } => "add_collaborator",
            Call::SendModel { .. } => "send_model",
            Call::StartLearning => "start_learning",
            Call::SendWeightsHash { .. } => "send_weights_hash",
            Call::SendGlobalHash { .. } => "send_global_hash",
            Call::Close => "close",
        }
    }

    /// Functions only the owner may call.
    pub fn owner_only(&self) -> bool {
        !matches!(self, Call::SendWeightsHash { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum FlscError {
    #[error("caller {0} is not authorized")]
    Unauthorized(Address),
    #[error("call not allowed in phase {actual:?} (requires {required:?})")]
    PhaseViolation { required: Phase, actual: Phase },
    #[error("{0} is already a collaborator")]
    DuplicateCollaborator(Address),
    #[error("no collaborators registered")]
    NoCollaborators,
    #[error("{0} already committed in round {1}")]
    AlreadyCommitted(Address, u32),
    #[error("commit targets round {got} but contract is in round {current}")]
    RoundMismatch { current: u32, got: u32 },
    #[error("no {0} recorded")]
    NotFound(&'static str),
}

impl FlscError {
    /// Short stable label for reports.
    pub fn label(&self) -> &'static str {
        match self {
            FlscError::Unauthorized(_) => "unauthorized",
            FlscError::PhaseViolation { .. } => "phase_violation",
            FlscError::DuplicateCollaborator(_) => "duplicate_collaborator",
            FlscError::NoCollaborators => "no_collaborators",
            FlscError::AlreadyCommitted(..) => "already_committed",
            FlscError::RoundMismatch { .. } => "round_mismatch",
            FlscError::NotFound(_) => "not_found",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    owner: Address,
    phase: Phase,
    round: u32,
    collaborators: Vec<Address>,
    model_cid: Option<Cid>,
    weight_commits: BTreeMap<u32, BTreeMap<Address, Cid>>,
    global_commits: BTreeMap<u32, Cid>,
}

impl ContractState {
    pub fn init(owner: Address) -> Self {
        ContractState {
            owner,
            phase: Phase::Open,
            round: 0,
            collaborators: Vec::new(),
            model_cid: None,
            weight_commits: BTreeMap::new(),
            global_commits: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> &Address {
        &self.owner
    }

    pub fn collaborators(&self) -> &[Address] {
        &self.collaborators
    }

    pub fn is_collaborator(&self, who: &Address) -> bool {
        self.collaborators.contains(who)
    }

    /// Apply one call. On error the state is unchanged.
    pub fn apply(&mut self, caller: &Address, call: &Call) -> Result<Event, FlscError> {
        if call.owner_only() && caller != &self.owner {
            return Err(FlscError::Unauthorized(caller.clone()));
        }
        match call {
            Call::AddCollaborator { who } => {
                self.require(Phase::Open)?;
                if self.collaborators.contains(who) {
                    return Err(FlscError::DuplicateCollaborator(who.clone()));
                }
                self.collaborators.push(who.clone());
                Ok(self.event(EventKind::CollaboratorAdded, who.clone(), None))
            }
            Call::SendModel { model_cid } => {
                self.require(Phase::Open)?;
                if self.collaborators.is_empty() {
                    return Err(FlscError::NoCollaborators);
                }
                self.model_cid = Some(*model_cid);
                self.phase = Phase::Start;
                Ok(self.event(EventKind::ModelPublished, caller.clone(), Some(*model_cid)))
            }
            Call::StartLearning => {
                self.require(Phase::Start)?;
                self.phase = Phase::Learning;
                self.round = 1;
                Ok(self.event(EventKind::LearningStarted, caller.clone(), None))
            }
            Call::SendWeightsHash { round, commit } => {
                if !self.collaborators.contains(caller) {
                    return Err(FlscError::Unauthorized(caller.clone()));
                }
                self.require(Phase::Learning)?;
                if *round != self.round {
                    return Err(FlscError::RoundMismatch {
                        current: self.round,
                        got: *round,
                    });
                }
                let commits = self.weight_commits.get(&self.round);
                if commits.is_some_and(|m| m.contains_key(caller)) {
                    return Err(FlscError::AlreadyCommitted(caller.clone(), self.round));
                }
                self.weight_commits
                    .entry(self.round)
                    .or_default()
                    .insert(caller.clone(), *commit);
                Ok(self.event(EventKind::WeightsCommitted, caller.clone(), Some(*commit)))
            }
            Call::SendGlobalHash { commit } => {
                self.require(Phase::Learning)?;
                let ev = self.event(EventKind::GlobalPublished, caller.clone(), Some(*commit));
                self.global_commits.insert(self.round, *commit);
                self.round += 1;
                Ok(ev)
            }
            Call::Close => {
                self.require(Phase::Learning)?;
                self.phase = Phase::Close;
                Ok(self.event(EventKind::Closed, caller.clone(), None))
            }
        }
    }

    fn require(&self, required: Phase) -> Result<(), FlscError> {
        if self.phase == required {
            Ok(())
        } else {
            Err(FlscError::PhaseViolation {
                required,
                actual: self.phase,
            })
        }
    }

    fn event(&self, kind: EventKind, actor: Address, payload: Option<Cid>) -> Event {
        Event {
            kind,
            round: self.round,
            actor,
            payload,
        }
    }

    // view functions

    pub fn get_model(&self) -> Result<Cid, FlscError> {
        self.model_cid.ok_or(FlscError::NotFound("model"))
    }

    /// Commits for `round`; rounds that have not started are not found.
    pub fn get_weight_commits(&self, round: u32) -> Result<BTreeMap<Address, Cid>, FlscError> {
        if round == 0 || round > self.round {
            return Err(FlscError::NotFound("round"));
        }
        Ok(self.weight_commits.get(&round).cloned().unwrap_or_default())
    }

    pub fn get_global_commit(&self, round: u32) -> Result<Cid, FlscError> {
        self.global_commits
            .get(&round)
            .copied()
            .ok_or(FlscError::NotFound("global commit"))
    }

    pub fn get_phase_round(&self) -> (Phase, u32) {
        (self.phase, self.round)
    }
}
