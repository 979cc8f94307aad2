//! Global-weights bundle: one sealed payload per collaborator, published as
//! a single blob so one digest covers every recipient.
//!
//! `"FLG1" | u32 count | { u32 addr_len | addr | u32 len | sealed }*`,
//! entries sorted by address.

use std::collections::BTreeMap;

use crate::flsc::Address;

const MAGIC: &[u8; 4] = b"FLG1";

pub fn encode_bundle(entries: &BTreeMap<Address, Vec<u8>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (addr, payload) in entries {
        out.extend_from_slice(&(addr.as_str().len() as u32).to_le_bytes());
        out.extend_from_slice(addr.as_str().as_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Option<BTreeMap<Address, Vec<u8>>> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Option<&[u8]> {
        let s = bytes.get(at..at.checked_add(n)?)?;
        at += n;
        Some(s)
    };
    if take(4)? != MAGIC {
        return None;
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let count = u32_of(take(4)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let alen = u32_of(take(4)?);
        let addr = std::str::from_utf8(take(alen)?).ok()?.to_string();
        let plen = u32_of(take(4)?);
        let payload = take(plen)?.to_vec();
        out.insert(Address::new(addr), payload);
    }
    if at != bytes.len() {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut m = BTreeMap::new();
        m.insert(Address::new("collab-01"), vec![1, 2, 3]);
        m.insert(Address::new("collab-00"), vec![9]);
        let enc = encode_bundle(&m);
        assert_eq!(decode_bundle(&enc).unwrap(), m);
        assert!(decode_bundle(&enc[..enc.len() - 1]).is_none());
        let mut extra = enc.clone();
        extra.push(0);
        assert!(decode_bundle(&extra).is_none());
        assert!(decode_bundle(b"nope").is_none());
    }
}
