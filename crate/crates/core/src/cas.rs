//! In-process content-addressed store with per-operation timing.
//!
//! Content is keyed by its SHA-256 digest. Every successful `add` and `cat`
//! appends a [`StoreTiming`] row; failed operations leave the log untouched.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// 32-byte SHA-256 content identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid([u8; 32]);

impl Cid {
    pub fn of(content: &[u8]) -> Self {
        Cid(Sha256::digest(content).into())
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Cid(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", &self.to_hex()[..12])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CidParseError {
    #[error("digest must be 64 hex characters, got {0}")]
    Length(usize),
    #[error("digest is not valid hex")]
    Hex,
}

impl FromStr for Cid {
    type Err = CidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 {
            return Err(CidParseError::Length(s.len()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| CidParseError::Hex)?;
        Ok(Cid(out))
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Cat,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Cat => "cat",
        }
    }
}

/// One timed store operation. `round` is 0 for bootstrap traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreTiming {
    pub op_kind: OpKind,
    pub duration_us: u64,
    pub payload_len: usize,
    pub actor: String,
    pub round: u32,
}

#[derive(Debug, Error)]
pub enum CasError {
    #[error("refusing to store empty content")]
    Empty,
    #[error("no content stored under {0}")]
    NotFound(Cid),
    #[error("content stored under {0} no longer matches its digest")]
    Corrupted(Cid),
    #[error("digest collision on {0}")]
    Collision(Cid),
    #[error("persisting {cid}: {source}")]
    Io {
        cid: Cid,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Default)]
pub struct ContentStore {
    blobs: RwLock<HashMap<Cid, Vec<u8>>>,
    timings: Mutex<Vec<StoreTiming>>,
    persist_dir: Option<PathBuf>,
    latency: Option<Duration>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mirror every added blob to `<dir>/<hex-digest>`.
    pub fn with_persistence(mut self, dir: impl Into<PathBuf>) -> Self {
        self.persist_dir = Some(dir.into());
        self
    }

    /// Sleep for `latency` inside every operation.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn persist_dir(&self) -> Option<&Path> {
        self.persist_dir.as_deref()
    }

    pub fn add(&self, content: &[u8], actor: &str, round: u32) -> Result<Cid, CasError> {
        if content.is_empty() {
            return Err(CasError::Empty);
        }
        let started = Instant::now();
        self.simulate_latency();
        let cid = Cid::of(content);
        {
            let mut blobs = self.blobs.write().expect("cas lock poisoned");
            match blobs.get(&cid) {
                Some(existing) if existing.as_slice() == content => {}
                // A blob damaged in place is repaired by re-adding the original.
                Some(existing) if Cid::of(existing) == cid => return Err(CasError::Collision(cid)),
                _ => {
                    blobs.insert(cid, content.to_vec());
                }
            }
        }
        if let Some(dir) = &self.persist_dir {
            let path = dir.join(cid.to_hex());
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&path, content))
                .map_err(|source| CasError::Io { cid, source })?;
        }
        self.record(OpKind::Add, started, content.len(), actor, round);
        Ok(cid)
    }

    pub fn cat(&self, cid: &Cid, actor: &str, round: u32) -> Result<Vec<u8>, CasError> {
        let started = Instant::now();
        self.simulate_latency();
        let bytes = {
            let blobs = self.blobs.read().expect("cas lock poisoned");
            blobs.get(cid).cloned().ok_or(CasError::NotFound(*cid))?
        };
        if Cid::of(&bytes) != *cid {
            return Err(CasError::Corrupted(*cid));
        }
        self.record(OpKind::Cat, started, bytes.len(), actor, round);
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.blobs.read().expect("cas lock poisoned").contains_key(cid)
    }

    /// All timings in insertion order.
    pub fn timings(&self) -> Vec<StoreTiming> {
        self.timings.lock().expect("timing lock poisoned").clone()
    }

    /// Fault injection: mutate the bytes held under `cid` without rekeying.
    /// Returns false when nothing is stored there.
    pub fn corrupt_with(&self, cid: &Cid, f: impl FnOnce(&mut Vec<u8>)) -> bool {
        let mut blobs = self.blobs.write().expect("cas lock poisoned");
        match blobs.get_mut(cid) {
            Some(bytes) => {
                f(bytes);
                true
            }
            None => false,
        }
    }

    fn simulate_latency(&self) {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
    }

    fn record(&self, op_kind: OpKind, started: Instant, payload_len: usize, actor: &str, round: u32) {
        let duration_us = started.elapsed().as_micros() as u64;
        self.timings.lock().expect("timing lock poisoned").push(StoreTiming {
            op_kind,
            duration_us,
            payload_len,
            actor: actor.to_string(),
            round,
        });
    }
}

/// Mean and population standard deviation of durations, in microseconds.
pub fn duration_stats<'a>(rows: impl IntoIterator<Item = &'a StoreTiming>) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in rows {
        let d = t.duration_us as f64;
        n += 1;
        sum += d;
        sum_sq += d * d;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn add_is_deterministic() {
        let store = ContentStore::new();
        let a = store.add(b"abc", "m", 0).unwrap();
        let b = store.add(b"abc", "m", 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sha256_reference_vector() {
        // FIPS 180-2 test vector for "abc".
        assert_eq!(
            Cid::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_random_kib() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0u8; 1024];
        rng.fill(&mut x[..]);
        let store = ContentStore::new();
        let cid = store.add(&x, "c0", 1).unwrap();
        assert_eq!(store.cat(&cid, "m", 1).unwrap(), x);
    }

    #[test]
    fn empty_content_rejected() {
        let store = ContentStore::new();
        assert!(matches!(store.add(b"", "m", 0), Err(CasError::Empty)));
        assert!(store.timings().is_empty());
    }

    #[test]
    fn unknown_cid_is_not_found() {
        let store = ContentStore::new();
        let cid = Cid::of(b"never stored");
        assert!(matches!(store.cat(&cid, "m", 0), Err(CasError::NotFound(c)) if c == cid));
    }

    #[test]
    fn corruption_is_distinct_from_not_found() {
        let store = ContentStore::new();
        let cid = store.add(b"payload", "c0", 1).unwrap();
        assert!(store.corrupt_with(&cid, |b| b[0] ^= 1));
        assert!(matches!(store.cat(&cid, "m", 1), Err(CasError::Corrupted(_))));
        // re-adding the original repairs it
        store.add(b"payload", "c0", 1).unwrap();
        assert_eq!(store.cat(&cid, "m", 1).unwrap(), b"payload");
    }

    #[test]
    fn timings_track_successful_ops() {
        let store = ContentStore::new();
        assert!(store.timings().is_empty());
        let cid = store.add(b"x", "c1", 2).unwrap();
        let t = store.timings();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].op_kind, OpKind::Add);
        assert_eq!(t[0].payload_len, 1);
        assert_eq!(t[0].actor, "c1");
        store.cat(&cid, "m", 2).unwrap();
        let _ = store.cat(&Cid::of(b"nope"), "m", 2);
        let t = store.timings();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].op_kind, OpKind::Cat);
    }

    #[test]
    fn duration_stats_match_second_pass() {
        let rows: Vec<StoreTiming> = [3u64, 9, 4, 17, 0, 11]
            .iter()
            .map(|&d| StoreTiming {
                op_kind: OpKind::Add,
                duration_us: d,
                payload_len: 1,
                actor: "a".into(),
                round: 1,
            })
            .collect();
        let (mean, std) = duration_stats(&rows).unwrap();
        // two-pass recount
        let xs: Vec<f64> = rows.iter().map(|r| r.duration_us as f64).collect();
        let m2 = xs.iter().sum::<f64>() / xs.len() as f64;
        let s2 = (xs.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((mean - m2).abs() < 1e-12);
        assert!((std - s2).abs() < 1e-9);
        assert!(duration_stats(&[]).is_none());
    }

    #[test]
    fn persistence_writes_hex_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::new().with_persistence(dir.path().join("cas"));
        let cid = store.add(b"persist me", "m", 0).unwrap();
        let on_disk = std::fs::read(dir.path().join("cas").join(cid.to_hex())).unwrap();
        assert_eq!(on_disk, b"persist me");
    }

    #[test]
    fn cid_hex_parsing() {
        let cid = Cid::of(b"abc");
        assert_eq!(cid.to_hex().parse::<Cid>().unwrap(), cid);
        assert_eq!("abcd".parse::<Cid>(), Err(CidParseError::Length(4)));
        assert_eq!("zz".repeat(32).parse::<Cid>(), Err(CidParseError::Hex));
    }

    #[test]
    fn concurrent_adds_from_many_actors() {
        let store = ContentStore::new();
        std::thread::scope(|s| {
            for i in 0..8u8 {
                let store = &store;
                s.spawn(move || {
                    for j in 0..16u8 {
                        let cid = store.add(&[i, j, 1], &format!("c{i}"), 1).unwrap();
                        assert_eq!(store.cat(&cid, &format!("c{i}"), 1).unwrap(), vec![i, j, 1]);
                    }
                });
            }
        });
        assert_eq!(store.timings().len(), 8 * 16 * 2);
    }

    proptest! {
        #[test]
        fn cat_of_add_is_identity(bytes in proptest::collection::vec(any::<u8>(), 1..512)) {
            let store = ContentStore::new();
            let cid = store.add(&bytes, "a", 1).unwrap();
            prop_assert_eq!(store.cat(&cid, "b", 1).unwrap(), bytes);
        }

        #[test]
        fn equal_cids_iff_equal_bytes(
            a in proptest::collection::vec(any::<u8>(), 1..64),
            b in proptest::collection::vec(any::<u8>(), 1..64),
        ) {
            let store = ContentStore::new();
            let ca = store.add(&a, "x", 1).unwrap();
            let cb = store.add(&b, "x", 1).unwrap();
            prop_assert_eq!(ca == cb, a == b);
            prop_assert_eq!(store.timings().len(), 2);
        }
    }
}
