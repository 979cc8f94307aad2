use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::bundle::encode_bundle;
use super::{ensure_accepted, Network, ProtocolError, RejectReason, Rejection, RoundOutcome, MANAGER};
use crate::cas::Cid;
use crate::fl_core::{
    aggregate_mean, aggregate_weighted, decode_weights, encode_weights, WeightVector,
};
use crate::flsc::{Address, Call};
use crate::ledger::GasSchedule;
use crate::sealbox::{self, KeyPair, PublicKey, SealError, SealedPayload};

pub struct Manager {
    address: Address,
    keys: KeyPair,
    directory: BTreeMap<Address, PublicKey>,
    shard_sizes: BTreeMap<Address, usize>,
    global: WeightVector,
    sample_weighted: bool,
    rng: ChaCha20Rng,
}

impl Manager {
    pub fn new(
        keys: KeyPair,
        directory: BTreeMap<Address, PublicKey>,
        shard_sizes: BTreeMap<Address, usize>,
        initial: WeightVector,
        sample_weighted: bool,
        seal_seed: u64,
    ) -> Self {
        Manager {
            address: Address::new(MANAGER),
            keys,
            directory,
            shard_sizes,
            global: initial,
            sample_weighted,
            rng: ChaCha20Rng::seed_from_u64(seal_seed),
        }
    }

    pub fn address(&self) -> &Address {
        &self.address
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public
    }

    pub fn global(&self) -> &WeightVector {
        &self.global
    }

    /// Deploy the contract, register every known collaborator and publish
    /// the initial model (its encoding carries the layer shapes).
    pub fn bootstrap(&mut self, net: Network<'_>, schedule: GasSchedule) -> Result<(), ProtocolError> {
        net.ledger.deploy(self.address.clone(), schedule)?;
        for who in self.directory.keys() {
            ensure_accepted(
                net.ledger
                    .call(&self.address, Call::AddCollaborator { who: who.clone() })?,
            )?;
        }
        let model_cid = net.store.add(&encode_weights(&self.global), MANAGER, 0)?;
        ensure_accepted(net.ledger.call(&self.address, Call::SendModel { model_cid })?)?;
        Ok(())
    }

    fn check_contribution(
        &self,
        net: Network<'_>,
        round: u32,
        who: &Address,
        commit: &Cid,
    ) -> Result<WeightVector, RejectReason> {
        // missing or damaged content both mean the commit cannot be honoured
        let bytes = net
            .store
            .cat(commit, MANAGER, round)
            .map_err(|_| RejectReason::DigestMismatch)?;
        if sealbox::digest(&bytes) != *commit {
            return Err(RejectReason::DigestMismatch);
        }
        let payload = SealedPayload::decode(&bytes).map_err(|_| RejectReason::Tamper)?;
        if payload.sender != who.as_str() {
            return Err(RejectReason::Tamper);
        }
        let sender_pk = self.directory.get(who).ok_or(RejectReason::Tamper)?;
        let plaintext = sealbox::open(&payload, &self.keys.secret, sender_pk).map_err(|e| match e {
            SealError::Decrypt => RejectReason::DecryptFailure,
            SealError::Authenticity | SealError::Malformed(_) => RejectReason::Tamper,
        })?;
        let w = decode_weights(&plaintext).map_err(|_| RejectReason::Tamper)?;
        if w.shapes != self.global.shapes {
            return Err(RejectReason::Tamper);
        }
        Ok(w)
    }

    /// Verify, aggregate and publish one round.
    pub fn run_round(&mut self, net: Network<'_>, round: u32) -> Result<RoundOutcome, ProtocolError> {
        let commits = net.ledger.get_weight_commits(round)?;
        let mut accepted = Vec::new();
        let mut sizes = Vec::new();
        let mut rejected = Vec::new();
        for (who, commit) in &commits {
            match self.check_contribution(net, round, who, commit) {
                Ok(w) => {
                    sizes.push(self.shard_sizes.get(who).copied().unwrap_or(0) as f64);
                    accepted.push(w);
                }
                Err(reason) => rejected.push(Rejection {
                    node: who.clone(),
                    reason,
                }),
            }
        }
        if !accepted.is_empty() {
            self.global = if self.sample_weighted {
                aggregate_weighted(&accepted, &sizes)?
            } else {
                aggregate_mean(&accepted)?
            };
        }

        let plaintext = encode_weights(&self.global);
        let mut entries = BTreeMap::new();
        for (who, pk) in &self.directory {
            let sealed = sealbox::seal(&plaintext, &self.keys, pk, &mut self.rng);
            entries.insert(who.clone(), sealed.encode());
        }
        let global_commit = net.store.add(&encode_bundle(&entries), MANAGER, round)?;
        ensure_accepted(
            net.ledger
                .call(&self.address, Call::SendGlobalHash { commit: global_commit })?,
        )?;
        Ok(RoundOutcome {
            round,
            submitters: commits.keys().cloned().collect(),
            rejected,
            aggregated: accepted.len(),
            global_commit,
        })
    }
}
