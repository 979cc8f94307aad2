use chainfl::cas::ContentStore;
use chainfl::flsc::{EventKind, Phase};
use chainfl::harness::config::{ExperimentConfig, FailureSpec, FaultKind, FaultSpec, Scheduler};
use chainfl::ledger::Ledger;
use chainfl::protocol::{
    collaborator_address, run_experiment, run_on, IncidentKind, Network, RejectReason,
};

fn small(n: usize, rounds: u32) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.n_collaborators = n;
    cfg.rounds = rounds;
    cfg.centralized_baseline = false;
    cfg
}

#[test]
fn contract_ends_closed_with_one_global_per_round() {
    let cfg = small(3, 3);
    let (ledger, store) = (Ledger::new(), ContentStore::new());
    let run = run_on(&cfg, Network { ledger: &ledger, store: &store }).unwrap();
    // the round counter already points past the last published round
    assert_eq!(ledger.get_phase_round().unwrap(), (Phase::Close, 4));
    let globals: Vec<u32> = run
        .events
        .iter()
        .filter(|e| e.kind == EventKind::GlobalPublished)
        .map(|e| e.round)
        .collect();
    assert_eq!(globals, vec![1, 2, 3]);
    for o in &run.outcomes {
        assert_eq!(ledger.get_global_commit(o.round).unwrap(), o.global_commit);
        assert!(store.contains(&o.global_commit));
    }
    assert!(run.incidents.is_empty());
}

#[test]
fn crash_stop_mid_run() {
    let mut cfg = small(4, 4);
    cfg.failures = vec![FailureSpec { node: 2, round: 3 }];
    let run = run_experiment(&cfg).unwrap();
    let sizes: Vec<usize> = run.outcomes.iter().map(|o| o.submitters.len()).collect();
    assert_eq!(sizes, vec![4, 4, 3, 3]);
    assert!(!run.outcomes[3].submitters.contains(&collaborator_address(2)));
}

#[test]
fn every_node_failed_keeps_the_model() {
    let mut cfg = small(2, 3);
    cfg.failures = (0..2).map(|node| FailureSpec { node, round: 1 }).collect();
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.outcomes.len(), 3);
    assert!(run.outcomes.iter().all(|o| o.submitters.is_empty() && o.aggregated == 0));
    let init = chainfl::fl_core::init_weights(&cfg.shapes(), chainfl::seed::derive(cfg.seed, "init", 0)).unwrap();
    assert_eq!(run.final_weights, init);
}

#[test]
fn misaddressed_and_forged_uploads_are_rejected() {
    let mut cfg = small(3, 1);
    cfg.faults = vec![
        FaultSpec { kind: FaultKind::WrongRecipient, node: 0, round: 1 },
        FaultSpec { kind: FaultKind::ForgeSender, node: 1, round: 1 },
    ];
    let run = run_experiment(&cfg).unwrap();
    let rejected: Vec<_> = run.outcomes[0].rejected.iter().map(|r| (r.node.clone(), r.reason)).collect();
    assert_eq!(
        rejected,
        vec![
            (collaborator_address(0), RejectReason::DecryptFailure),
            (collaborator_address(1), RejectReason::Tamper),
        ]
    );
    assert_eq!(run.outcomes[0].aggregated, 1);
}

#[test]
fn corrupted_global_is_noticed_by_every_collaborator() {
    let mut cfg = small(3, 2);
    cfg.faults = vec![FaultSpec { kind: FaultKind::CorruptGlobal, node: 0, round: 1 }];
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.incidents.len(), 3);
    assert!(run
        .incidents
        .iter()
        .all(|i| i.round == 1 && i.kind == IncidentKind::DigestMismatch));
    // the run still completes and round 2 is clean
    assert_eq!(run.outcomes[1].submitters.len(), 3);
    assert!(run.outcomes[1].rejected.is_empty());
}

#[test]
fn threaded_scheduler_agrees_with_sequential() {
    let seq = small(5, 3);
    let mut thr = seq.clone();
    thr.scheduler = Scheduler::Threaded;
    let (a, b) = (run_experiment(&seq).unwrap(), run_experiment(&thr).unwrap());
    assert_eq!(a.final_weights, b.final_weights);
    assert_eq!(a.round_metrics, b.round_metrics);
    let total = |r: &chainfl::protocol::RunArtifacts| r.receipts.iter().map(|x| x.gas_used).sum::<u64>();
    assert_eq!(total(&a), total(&b));
}

#[test]
fn persisted_store_holds_every_blob() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(2, 2);
    cfg.cas.persist = true;
    cfg.output_dir = Some(tmp.path().to_path_buf());
    let run = run_experiment(&cfg).unwrap();
    for o in &run.outcomes {
        let blob = std::fs::read(tmp.path().join("cas").join(o.global_commit.to_hex())).unwrap();
        assert_eq!(chainfl::cas::Cid::of(&blob), o.global_commit);
    }
}
