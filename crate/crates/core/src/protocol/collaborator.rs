use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::bundle::decode_bundle;
use super::{collaborator_address, ensure_accepted, Network, ProtocolError};
use crate::cas::{CasError, Cid};
use crate::fl_core::{decode_weights, encode_weights, local_train, Dataset, TrainConfig, WeightVector};
use crate::flsc::{Address, Call, EventKind};
use crate::sealbox::{self, KeyPair, PublicKey, SealError, SealedPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKind {
    /// Published global weights did not match the on-ledger digest.
    DigestMismatch,
    /// No `GlobalPublished` event for the round.
    MissingGlobal,
    /// The bundle had no usable entry for this collaborator.
    Undecodable,
    DecryptFailure,
    Tamper,
}

/// Something a collaborator noticed and survived; it keeps its prior weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub node: Address,
    pub round: u32,
    pub kind: IncidentKind,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepFaults {
    pub corrupt_upload: bool,
    pub substitute_commit: bool,
    pub wrong_recipient: bool,
    pub forge_sender: bool,
}

pub struct Collaborator {
    index: usize,
    address: Address,
    keys: KeyPair,
    manager_pk: PublicKey,
    shard: Dataset,
    fail_round: Option<u32>,
    rng: ChaCha20Rng,
    global: Option<WeightVector>,
    cursor: usize,
    incidents: Vec<Incident>,
}

impl Collaborator {
    pub fn new(
        index: usize,
        keys: KeyPair,
        manager_pk: PublicKey,
        shard: Dataset,
        fail_round: Option<u32>,
        seal_seed: u64,
    ) -> Self {
        Collaborator {
            index,
            address: collaborator_address(index),
            keys,
            manager_pk,
            shard,
            fail_round,
            rng: ChaCha20Rng::seed_from_u64(seal_seed),
            global: None,
            cursor: 0,
            incidents: Vec::new(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn address(&self) -> &Address {
        &self.address
    }

    /// Crash-stop: a node failing at round `f` does nothing from `f` on.
    pub fn is_live(&self, round: u32) -> bool {
        self.fail_round.is_none_or(|f| round < f)
    }

    pub fn global(&self) -> Option<&WeightVector> {
        self.global.as_ref()
    }

    pub fn incidents(&self) -> &[Incident] {
        &self.incidents
    }

    /// Pull the published model through the contract's model pointer.
    pub fn fetch_model(&mut self, net: Network<'_>) -> Result<(), ProtocolError> {
        let model_cid = net.ledger.get_model()?;
        let bytes = net.store.cat(&model_cid, self.address.as_str(), 0)?;
        if sealbox::digest(&bytes) != model_cid {
            return Err(ProtocolError::Bootstrap("model digest mismatch".into()));
        }
        self.global = Some(decode_weights(&bytes)?);
        self.cursor = net.ledger.events_since(0)?.1;
        Ok(())
    }

    pub(crate) fn train_and_commit(
        &mut self,
        net: Network<'_>,
        round: u32,
        cfg: &TrainConfig,
        faults: StepFaults,
    ) -> Result<(), ProtocolError> {
        let start = self
            .global
            .as_ref()
            .ok_or_else(|| ProtocolError::Bootstrap(format!("{} has no model", self.address)))?;
        let local = local_train(start, &self.shard, cfg)?;
        let plaintext = encode_weights(&local);

        let sealed = if faults.forge_sender {
            let forger = sealbox::keygen(u64::MAX - self.index as u64, self.address.as_str());
            sealbox::seal(&plaintext, &forger, &self.manager_pk, &mut self.rng)
        } else if faults.wrong_recipient {
            let stranger = sealbox::keygen(u64::MAX - 1000 - self.index as u64, "stranger");
            sealbox::seal(&plaintext, &self.keys, &stranger.public, &mut self.rng)
        } else {
            sealbox::seal(&plaintext, &self.keys, &self.manager_pk, &mut self.rng)
        };
        let upload = sealed.encode();
        let cid = net.store.add(&upload, self.address.as_str(), round)?;
        let commit = if faults.substitute_commit {
            let mut other = upload.clone();
            other.extend_from_slice(b"substituted");
            Cid::of(&other)
        } else {
            cid
        };
        ensure_accepted(
            net.ledger
                .call(&self.address, Call::SendWeightsHash { round, commit })?,
        )?;
        if faults.corrupt_upload {
            net.store.corrupt_with(&cid, |b| {
                let last = b.len() - 1;
                b[last] ^= 0x01;
            });
        }
        Ok(())
    }

    /// Wait for the round's global publication and adopt it if it checks out.
    pub fn sync_global(&mut self, net: Network<'_>, round: u32) -> Result<(), ProtocolError> {
        if !self.is_live(round) {
            return Ok(());
        }
        let (events, cursor) = net.ledger.events_since(self.cursor)?;
        self.cursor = cursor;
        let published = events
            .iter()
            .find(|e| e.kind == EventKind::GlobalPublished && e.round == round)
            .and_then(|e| e.payload);
        let Some(announced) = published else {
            self.note(round, IncidentKind::MissingGlobal);
            return Ok(());
        };
        // the contract is the source of truth for the digest
        let committed = net.ledger.get_global_commit(round)?;
        if committed != announced {
            self.note(round, IncidentKind::DigestMismatch);
            return Ok(());
        }
        let bytes = match net.store.cat(&committed, self.address.as_str(), round) {
            Ok(b) => b,
            Err(CasError::Corrupted(_)) | Err(CasError::NotFound(_)) => {
                self.note(round, IncidentKind::DigestMismatch);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        if sealbox::digest(&bytes) != committed {
            self.note(round, IncidentKind::DigestMismatch);
            return Ok(());
        }
        let entry = decode_bundle(&bytes)
            .and_then(|mut m| m.remove(&self.address))
            .and_then(|raw| SealedPayload::decode(&raw).ok());
        let Some(payload) = entry else {
            self.note(round, IncidentKind::Undecodable);
            return Ok(());
        };
        let plaintext = match sealbox::open(&payload, &self.keys.secret, &self.manager_pk) {
            Ok(p) => p,
            Err(SealError::Decrypt) => {
                self.note(round, IncidentKind::DecryptFailure);
                return Ok(());
            }
            Err(_) => {
                self.note(round, IncidentKind::Tamper);
                return Ok(());
            }
        };
        match decode_weights(&plaintext) {
            Ok(w) if Some(&w.shapes) == self.global.as_ref().map(|g| &g.shapes) => {
                self.global = Some(w);
            }
            _ => self.note(round, IncidentKind::Tamper),
        }
        Ok(())
    }

    fn note(&mut self, round: u32, kind: IncidentKind) {
        self.incidents.push(Incident {
            node: self.address.clone(),
            round,
            kind,
        });
    }
}
