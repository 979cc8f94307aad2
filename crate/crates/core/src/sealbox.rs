//! Sign-then-encrypt envelope for weight payloads.
//!
//! The sender signs the plaintext with Ed25519, then encrypts
//! `signature || plaintext` to the recipient with an ephemeral X25519
//! exchange, HKDF-SHA256 and ChaCha20-Poly1305. The sender identity is bound
//! as associated data. The Poly1305 tag travels separately as `auth_tag`.
//!
//! Wire layout of an encoded [`SealedPayload`]:
//!
//! ```text
//! "FLS1" | u32 sender_len | sender | u32 ct_len | ciphertext | tag[16]
//! ```
//!
//! `ciphertext` itself is `ephemeral_pk[32] | nonce[12] | aead_body`.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use crate::cas::Cid;

const MAGIC: &[u8; 4] = b"FLS1";
const TAG_LEN: usize = 16;
const NONCE_LEN: usize = 12;
const EPK_LEN: usize = 32;
const SIG_LEN: usize = 64;
const HKDF_INFO: &[u8] = b"chainfl sealbox v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SealError {
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("decryption failed")]
    Decrypt,
    #[error("sender signature does not verify")]
    Authenticity,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PublicKey {
    verify: [u8; 32],
    encrypt: [u8; 32],
}

pub struct SecretKey {
    signing: SigningKey,
    decrypt: StaticSecret,
}

pub struct KeyPair {
    pub owner: String,
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Deterministic keypair for `owner` from `seed`.
pub fn keygen(seed: u64, owner: &str) -> KeyPair {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sign_seed = [0u8; 32];
    let mut dh_seed = [0u8; 32];
    rng.fill_bytes(&mut sign_seed);
    rng.fill_bytes(&mut dh_seed);
    let signing = SigningKey::from_bytes(&sign_seed);
    let decrypt = StaticSecret::from(dh_seed);
    let public = PublicKey {
        verify: signing.verifying_key().to_bytes(),
        encrypt: XPublic::from(&decrypt).to_bytes(),
    };
    KeyPair {
        owner: owner.to_string(),
        public,
        secret: SecretKey { signing, decrypt },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedPayload {
    pub sender: String,
    pub ciphertext: Vec<u8>,
    pub auth_tag: Vec<u8>,
}

impl SealedPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(12 + self.sender.len() + self.ciphertext.len() + self.auth_tag.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sender.len() as u32).to_le_bytes());
        out.extend_from_slice(self.sender.as_bytes());
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SealError> {
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(SealError::Malformed("bad magic"));
        }
        let sender_len = r.u32()? as usize;
        let sender = std::str::from_utf8(r.take(sender_len)?)
            .map_err(|_| SealError::Malformed("sender is not utf-8"))?
            .to_string();
        let ct_len = r.u32()? as usize;
        let ciphertext = r.take(ct_len)?.to_vec();
        let auth_tag = r.0.to_vec();
        Ok(SealedPayload {
            sender,
            ciphertext,
            auth_tag,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SealError> {
        if self.0.len() < n {
            return Err(SealError::Malformed("truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, SealError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn derive_key(shared: &[u8; 32], epk: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(epk);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(HKDF_INFO, &mut okm).expect("32 is a valid hkdf length");
    Key::from(okm)
}

pub fn seal<R: RngCore + CryptoRng>(
    plaintext: &[u8],
    sender: &KeyPair,
    recipient: &PublicKey,
    rng: &mut R,
) -> SealedPayload {
    let signature = sender.secret.signing.sign(plaintext);
    let mut inner = Vec::with_capacity(SIG_LEN + plaintext.len());
    inner.extend_from_slice(&signature.to_bytes());
    inner.extend_from_slice(plaintext);

    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = StaticSecret::from(eph_bytes);
    let epk = XPublic::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&XPublic::from(recipient.encrypt));
    let key = derive_key(shared.as_bytes(), &epk, &recipient.encrypt);

    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut body = ChaCha20Poly1305::new(&key)
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: &inner,
                aad: sender.owner.as_bytes(),
            },
        )
        .expect("chacha20poly1305 encryption is infallible for in-range lengths");
    let auth_tag = body.split_off(body.len() - TAG_LEN);

    let mut ciphertext = Vec::with_capacity(EPK_LEN + NONCE_LEN + body.len());
    ciphertext.extend_from_slice(&epk);
    ciphertext.extend_from_slice(&nonce);
    ciphertext.extend_from_slice(&body);
    SealedPayload {
        sender: sender.owner.clone(),
        ciphertext,
        auth_tag,
    }
}

pub fn open(
    payload: &SealedPayload,
    recipient: &SecretKey,
    sender_pk: &PublicKey,
) -> Result<Vec<u8>, SealError> {
    if payload.auth_tag.len() != TAG_LEN {
        return Err(SealError::Malformed("auth tag length"));
    }
    if payload.ciphertext.len() < EPK_LEN + NONCE_LEN + SIG_LEN {
        return Err(SealError::Malformed("ciphertext too short"));
    }
    let (epk, rest) = payload.ciphertext.split_at(EPK_LEN);
    let (nonce, body) = rest.split_at(NONCE_LEN);
    let epk: [u8; 32] = epk.try_into().expect("32 bytes");
    let shared = recipient.decrypt.diffie_hellman(&XPublic::from(epk));
    let own_pk = XPublic::from(&recipient.decrypt).to_bytes();
    let key = derive_key(shared.as_bytes(), &epk, &own_pk);

    let mut sealed = Vec::with_capacity(body.len() + TAG_LEN);
    sealed.extend_from_slice(body);
    sealed.extend_from_slice(&payload.auth_tag);
    let inner = ChaCha20Poly1305::new(&key)
        .decrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: &sealed,
                aad: payload.sender.as_bytes(),
            },
        )
        .map_err(|_| SealError::Decrypt)?;

    let (sig, plaintext) = inner.split_at(SIG_LEN);
    let signature = Signature::from_bytes(sig.try_into().expect("64 bytes"));
    let vk = VerifyingKey::from_bytes(&sender_pk.verify).map_err(|_| SealError::Authenticity)?;
    vk.verify(plaintext, &signature)
        .map_err(|_| SealError::Authenticity)?;
    Ok(plaintext.to_vec())
}

/// Digest used for on-ledger commitments; identical to the store's addressing.
pub fn digest(content: &[u8]) -> Cid {
    Cid::of(content)
}
