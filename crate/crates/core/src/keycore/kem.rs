//! Attribute KEM: the Gen / Enc / KeyGen / Dec contract for disjunctive policies.
//!
//! Every attribute owns an X25519 key pair. Wrapping a payload under a policy
//! draws a fresh record key, seals that record key once per policy attribute
//! (ephemeral X25519 + HKDF-SHA256 + ChaCha20-Poly1305) and seals the payload
//! under the record key. The payload's associated data commits to every
//! share, so altering any part of a record is caught by anyone who can open
//! it. A holder of any one policy attribute can open the record; nobody else
//! can.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use super::{check_nesting, AccessPolicy, GroupKeyChain, KEY_LEN};
use crate::error::{Error, Result};

const SHARE_INFO: &[u8] = b"pso-shield/attribute-kem/share/v1";
const RECORD_DOMAIN: &[u8] = b"pso-shield/attribute-kem/record/v1";
/// Sealed record key: 32 bytes plus a 16-byte Poly1305 tag.
pub const SEALED_SHARE_LEN: usize = KEY_LEN + 16;

/// Public wrapping key per attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterPublicKey {
    keys: BTreeMap<String, [u8; 32]>,
}

impl MasterPublicKey {
    pub fn from_keys(keys: BTreeMap<String, [u8; 32]>) -> Self {
        Self { keys }
    }

    pub fn keys(&self) -> &BTreeMap<String, [u8; 32]> {
        &self.keys
    }

    pub fn universe(&self) -> BTreeSet<String> {
        self.keys.keys().cloned().collect()
    }
}

/// Secret unwrapping key per attribute. Never leaves the key service.
#[derive(Clone)]
pub struct MasterSecretKey {
    keys: BTreeMap<String, StaticSecret>,
}

impl MasterSecretKey {
    pub fn from_secret_bytes(keys: BTreeMap<String, [u8; 32]>) -> Self {
        Self {
            keys: keys.into_iter().map(|(a, b)| (a, StaticSecret::from(b))).collect(),
        }
    }

    pub fn secret_bytes(&self) -> BTreeMap<String, Zeroizing<[u8; 32]>> {
        self.keys
            .iter()
            .map(|(a, s)| (a.clone(), Zeroizing::new(s.to_bytes())))
            .collect()
    }

    pub fn universe(&self) -> BTreeSet<String> {
        self.keys.keys().cloned().collect()
    }

    pub fn public(&self) -> MasterPublicKey {
        MasterPublicKey {
            keys: self
                .keys
                .iter()
                .map(|(a, s)| (a.clone(), PublicKey::from(s).to_bytes()))
                .collect(),
        }
    }
}

impl fmt::Debug for MasterSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterSecretKey")
            .field("attributes", &self.universe())
            .finish_non_exhaustive()
    }
}

/// A user's decryption key: the master secrets for the user's attributes.
pub struct UserSecretKey {
    user_id: String,
    keys: BTreeMap<String, StaticSecret>,
    unwraps: AtomicUsize,
}

impl UserSecretKey {
    pub fn from_secret_bytes(user_id: impl Into<String>, keys: BTreeMap<String, [u8; 32]>) -> Self {
        Self {
            user_id: user_id.into(),
            keys: keys.into_iter().map(|(a, b)| (a, StaticSecret::from(b))).collect(),
            unwraps: AtomicUsize::new(0),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn attributes(&self) -> BTreeSet<String> {
        self.keys.keys().cloned().collect()
    }

    pub fn secret_bytes(&self) -> BTreeMap<String, Zeroizing<[u8; 32]>> {
        self.keys
            .iter()
            .map(|(a, s)| (a.clone(), Zeroizing::new(s.to_bytes())))
            .collect()
    }

    /// Number of successful policy decryptions performed with this key.
    pub fn unwrap_count(&self) -> usize {
        self.unwraps.load(Ordering::Relaxed)
    }
}

impl Clone for UserSecretKey {
    fn clone(&self) -> Self {
        Self {
            user_id: self.user_id.clone(),
            keys: self.keys.clone(),
            unwraps: AtomicUsize::new(0),
        }
    }
}

impl fmt::Debug for UserSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserSecretKey")
            .field("user_id", &self.user_id)
            .field("attributes", &self.attributes())
            .finish_non_exhaustive()
    }
}

/// Record key sealed to one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeShare {
    pub ephemeral: [u8; 32],
    pub sealed: Vec<u8>,
}

/// A payload (a group key chain) wrapped under one policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedGroupKey {
    pub policy: AccessPolicy,
    pub shares: BTreeMap<String, AttributeShare>,
    pub payload: Vec<u8>,
}

impl WrappedGroupKey {
    pub fn group(&self) -> u16 {
        self.policy.group
    }

    fn binding(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(RECORD_DOMAIN);
        h.update(self.policy.group.to_le_bytes());
        h.update((self.shares.len() as u32).to_le_bytes());
        for (attr, share) in &self.shares {
            h.update((attr.len() as u32).to_le_bytes());
            h.update(attr.as_bytes());
            h.update(share.ephemeral);
            h.update((share.sealed.len() as u32).to_le_bytes());
            h.update(&share.sealed);
        }
        h.finalize().into()
    }
}

/// Outcome of a policy decryption that did not hit an integrity failure.
#[derive(Debug, PartialEq, Eq)]
pub enum Unwrapped {
    Granted(Zeroizing<Vec<u8>>),
    /// The key holds no attribute of the policy.
    Denied,
}

fn share_kek(
    shared: &[u8; 32],
    ephemeral: &[u8; 32],
    recipient: &[u8; 32],
    group: u16,
    attr: &str,
) -> Zeroizing<[u8; 32]> {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut info = Vec::with_capacity(SHARE_INFO.len() + 2 + attr.len());
    info.extend_from_slice(SHARE_INFO);
    info.extend_from_slice(&group.to_le_bytes());
    info.extend_from_slice(attr.as_bytes());
    let mut out = Zeroizing::new([0u8; 32]);
    hk.expand(&info, out.as_mut()).expect("32 bytes is a valid HKDF length");
    out
}

fn share_aad(group: u16, attr: &str) -> Vec<u8> {
    let mut aad = group.to_le_bytes().to_vec();
    aad.extend_from_slice(attr.as_bytes());
    aad
}

// Each AEAD key below is used for exactly one message, so a fixed nonce is sound.
const ZERO_NONCE: [u8; 12] = [0u8; 12];

/// One X25519 key pair per attribute of `universe`.
pub fn abe_gen(universe: &BTreeSet<String>) -> Result<(MasterPublicKey, MasterSecretKey)> {
    abe_gen_with(universe, &mut OsRng)
}

pub fn abe_gen_with<R: RngCore + CryptoRng>(
    universe: &BTreeSet<String>,
    rng: &mut R,
) -> Result<(MasterPublicKey, MasterSecretKey)> {
    if universe.is_empty() {
        return Err(Error::validation("attribute universe is empty"));
    }
    let mut keys = BTreeMap::new();
    for attr in universe {
        if attr.is_empty() {
            return Err(Error::validation("attribute names must be non-empty"));
        }
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.try_fill_bytes(seed.as_mut())
            .map_err(|e| Error::Randomness(e.to_string()))?;
        keys.insert(attr.clone(), StaticSecret::from(*seed));
    }
    let msk = MasterSecretKey { keys };
    Ok((msk.public(), msk))
}

/// Restricts `msk` to `attributes`.
pub fn abe_keygen(msk: &MasterSecretKey, user_id: &str, attributes: &BTreeSet<String>) -> Result<UserSecretKey> {
    let mut keys = BTreeMap::new();
    for attr in attributes {
        let secret = msk
            .keys
            .get(attr)
            .ok_or_else(|| Error::validation(format!("unknown attribute {attr:?}")))?;
        keys.insert(attr.clone(), secret.clone());
    }
    Ok(UserSecretKey {
        user_id: user_id.to_string(),
        keys,
        unwraps: AtomicUsize::new(0),
    })
}

/// Wraps `plaintext` so that any holder of a policy attribute can recover it.
pub fn abe_enc(mpk: &MasterPublicKey, policy: &AccessPolicy, plaintext: &[u8]) -> Result<WrappedGroupKey> {
    abe_enc_with(mpk, policy, plaintext, &mut OsRng)
}

pub fn abe_enc_with<R: RngCore + CryptoRng>(
    mpk: &MasterPublicKey,
    policy: &AccessPolicy,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<WrappedGroupKey> {
    if policy.attributes.is_empty() {
        return Err(Error::validation(format!("policy of group {} is empty", policy.group)));
    }
    let mut record_key = Zeroizing::new([0u8; 32]);
    rng.try_fill_bytes(record_key.as_mut())
        .map_err(|e| Error::Randomness(e.to_string()))?;

    let mut shares = BTreeMap::new();
    for attr in &policy.attributes {
        let recipient = mpk
            .keys
            .get(attr)
            .ok_or_else(|| Error::validation(format!("attribute {attr:?} is outside the universe")))?;
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.try_fill_bytes(seed.as_mut())
            .map_err(|e| Error::Randomness(e.to_string()))?;
        let ephemeral = StaticSecret::from(*seed);
        let ephemeral_pub = PublicKey::from(&ephemeral).to_bytes();
        let shared = ephemeral.diffie_hellman(&PublicKey::from(*recipient));
        if !shared.was_contributory() {
            return Err(Error::validation(format!("public key of {attr:?} is degenerate")));
        }
        let kek = share_kek(shared.as_bytes(), &ephemeral_pub, recipient, policy.group, attr);
        let sealed = ChaCha20Poly1305::new(Key::from_slice(kek.as_ref()))
            .encrypt(
                Nonce::from_slice(&ZERO_NONCE),
                Payload {
                    msg: record_key.as_ref(),
                    aad: &share_aad(policy.group, attr),
                },
            )
            .map_err(|_| Error::integrity("share encryption failed"))?;
        shares.insert(
            attr.clone(),
            AttributeShare {
                ephemeral: ephemeral_pub,
                sealed,
            },
        );
    }

    let mut wrapped = WrappedGroupKey {
        policy: policy.clone(),
        shares,
        payload: Vec::new(),
    };
    let binding = wrapped.binding();
    wrapped.payload = ChaCha20Poly1305::new(Key::from_slice(record_key.as_ref()))
        .encrypt(
            Nonce::from_slice(&ZERO_NONCE),
            Payload {
                msg: plaintext,
                aad: &binding,
            },
        )
        .map_err(|_| Error::integrity("payload encryption failed"))?;
    Ok(wrapped)
}

/// Opens `wrapped` if `sk` holds any policy attribute.
///
/// Returns [`Unwrapped::Denied`] when it holds none. Any authentication
/// failure on the path the key can reach is an integrity error.
pub fn abe_dec(sk: &UserSecretKey, wrapped: &WrappedGroupKey) -> Result<Unwrapped> {
    let group = wrapped.group();
    let share_attrs: BTreeSet<&String> = wrapped.shares.keys().collect();
    let policy_attrs: BTreeSet<&String> = wrapped.policy.attributes.iter().collect();
    if share_attrs != policy_attrs {
        return Err(Error::integrity(format!(
            "wrapped key of group {group}: shares do not match the policy"
        )));
    }

    let held: Vec<&String> = wrapped
        .policy
        .attributes
        .iter()
        .filter(|a| sk.keys.contains_key(*a))
        .collect();
    if held.is_empty() {
        return Ok(Unwrapped::Denied);
    }

    let mut record_key: Option<Zeroizing<Vec<u8>>> = None;
    for attr in held {
        let share = &wrapped.shares[attr];
        let secret = &sk.keys[attr];
        let recipient = PublicKey::from(secret).to_bytes();
        let shared = secret.diffie_hellman(&PublicKey::from(share.ephemeral));
        let kek = share_kek(shared.as_bytes(), &share.ephemeral, &recipient, group, attr);
        let opened = ChaCha20Poly1305::new(Key::from_slice(kek.as_ref()))
            .decrypt(
                Nonce::from_slice(&ZERO_NONCE),
                Payload {
                    msg: &share.sealed,
                    aad: &share_aad(group, attr),
                },
            )
            .map(Zeroizing::new)
            .map_err(|_| {
                Error::integrity(format!(
                    "wrapped key of group {group}: share for {attr:?} failed authentication"
                ))
            })?;
        if opened.len() != KEY_LEN {
            return Err(Error::integrity(format!(
                "wrapped key of group {group}: share for {attr:?} has the wrong length"
            )));
        }
        match &record_key {
            Some(k) if **k != *opened => {
                return Err(Error::integrity(format!(
                    "wrapped key of group {group}: shares disagree"
                )))
            }
            Some(_) => {}
            None => record_key = Some(opened),
        }
    }
    let record_key = record_key.expect("at least one share was opened");

    let plaintext = ChaCha20Poly1305::new(Key::from_slice(&record_key))
        .decrypt(
            Nonce::from_slice(&ZERO_NONCE),
            Payload {
                msg: &wrapped.payload,
                aad: &wrapped.binding(),
            },
        )
        .map_err(|_| Error::integrity(format!("wrapped key of group {group}: payload failed authentication")))?;
    sk.unwraps.fetch_add(1, Ordering::Relaxed);
    Ok(Unwrapped::Granted(Zeroizing::new(plaintext)))
}

/// The `L` wrapped group keys published by the key service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedKeyStore {
    pub group_count: u16,
    pub mpk: MasterPublicKey,
    /// Ordered by group.
    pub records: Vec<WrappedGroupKey>,
}

impl WrappedKeyStore {
    pub fn universe(&self) -> BTreeSet<String> {
        self.mpk.universe()
    }

    pub fn record(&self, group: u16) -> Option<&WrappedGroupKey> {
        self.records.iter().find(|r| r.group() == group)
    }

    /// Exactly one record per group `1..=L`, consistent shares, nested policies.
    pub fn validate(&self) -> Result<()> {
        if self.group_count == 0 {
            return Err(Error::integrity("key store declares zero groups"));
        }
        if self.records.len() != self.group_count as usize {
            return Err(Error::integrity(format!(
                "key store holds {} records for {} groups",
                self.records.len(),
                self.group_count
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            let expected = i as u16 + 1;
            if r.group() != expected {
                return Err(Error::integrity(format!(
                    "key store record {i} is for group {}, expected group {expected}",
                    r.group()
                )));
            }
            if r.policy.attributes.is_empty() {
                return Err(Error::integrity(format!("group {expected} has an empty policy")));
            }
            if !r.policy.attributes.iter().all(|a| self.mpk.keys.contains_key(a)) {
                return Err(Error::integrity(format!(
                    "group {expected} policy names an attribute outside the universe"
                )));
            }
            if !r.shares.keys().eq(r.policy.attributes.iter()) {
                return Err(Error::integrity(format!(
                    "group {expected} shares do not match its policy"
                )));
            }
        }
        let policies: Vec<AccessPolicy> = self.records.iter().map(|r| r.policy.clone()).collect();
        check_nesting(&policies)
    }
}

/// Result of a successful descending scan.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub chain: GroupKeyChain,
    /// Policy decryptions attempted, including denials.
    pub attempts: usize,
}

impl Recovery {
    pub fn group(&self) -> u16 {
        self.chain.group()
    }
}

/// Tries groups `L` down to 1 and stops at the first the key can open.
///
/// `Ok(None)` means the key opens no group at all.
pub fn recover_max_group(sk: &UserSecretKey, store: &WrappedKeyStore) -> Result<Option<Recovery>> {
    for (tried, group) in (1..=store.group_count).rev().enumerate() {
        let record = store
            .record(group)
            .ok_or_else(|| Error::integrity(format!("key store has no record for group {group}")))?;
        match abe_dec(sk, record)? {
            Unwrapped::Denied => continue,
            Unwrapped::Granted(bytes) => {
                let chain = GroupKeyChain::from_bytes(group, bytes.to_vec())
                    .map_err(|e| Error::integrity(format!("group {group} key chain is malformed: {e}")))?;
                return Ok(Some(Recovery {
                    chain,
                    attempts: tried + 1,
                }));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keycore::{build_group_chains_with, build_policies};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn policy(group: u16, attrs: &[&str]) -> AccessPolicy {
        AccessPolicy {
            group,
            attributes: set(attrs),
        }
    }

    fn fixture() -> (MasterPublicKey, MasterSecretKey, WrappedKeyStore, Vec<GroupKeyChain>) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let universe = set(&["a1", "a2", "a3"]);
        let (mpk, msk) = abe_gen_with(&universe, &mut rng).unwrap();
        let roles = [("a1", 1), ("a2", 2), ("a3", 3)]
            .iter()
            .map(|(a, g)| (a.to_string(), *g))
            .collect();
        let policies = build_policies(&roles, 3).unwrap();
        let chains = build_group_chains_with(3, &mut rng).unwrap();
        let records = policies
            .iter()
            .zip(&chains)
            .map(|(p, c)| abe_enc_with(&mpk, p, c.as_bytes(), &mut rng).unwrap())
            .collect();
        let store = WrappedKeyStore {
            group_count: 3,
            mpk: mpk.clone(),
            records,
        };
        (mpk, msk, store, chains)
    }

    #[test]
    fn universe_sizes_align() {
        let (mpk, msk) = abe_gen(&set(&["a1"])).unwrap();
        assert_eq!(mpk.keys().len(), 1);
        let (mpk, msk3) = abe_gen(&set(&["a1", "a2", "a3"])).unwrap();
        assert_eq!(mpk.universe(), msk3.universe());
        assert_eq!(msk.public().keys().len(), 1);
        assert!(abe_gen(&BTreeSet::new()).is_err());
    }

    #[test]
    fn wrap_unwrap_under_each_attribute() {
        let (mpk, msk) = abe_gen(&set(&["a1", "a2", "a3"])).unwrap();
        for a in ["a1", "a2", "a3"] {
            let w = abe_enc(&mpk, &policy(1, &[a]), b"secret chain").unwrap();
            let sk = abe_keygen(&msk, "u", &set(&[a])).unwrap();
            assert_eq!(
                abe_dec(&sk, &w).unwrap(),
                Unwrapped::Granted(Zeroizing::new(b"secret chain".to_vec()))
            );
        }
    }

    #[test]
    fn keygen_rejects_unknown_attribute() {
        let (_, msk) = abe_gen(&set(&["a1"])).unwrap();
        assert!(abe_keygen(&msk, "u", &set(&["zz"])).is_err());
        assert!(abe_keygen(&msk, "u", &BTreeSet::new()).unwrap().attributes().is_empty());
    }

    #[test]
    fn capability_rows() {
        let (_, msk, store, chains) = fixture();
        let a1 = abe_keygen(&msk, "u1", &set(&["a1"])).unwrap();
        let a2 = abe_keygen(&msk, "u2", &set(&["a2"])).unwrap();
        assert_eq!(abe_dec(&a1, &store.records[1]).unwrap(), Unwrapped::Denied);
        match abe_dec(&a2, &store.records[0]).unwrap() {
            Unwrapped::Granted(b) => assert_eq!(b.as_slice(), chains[0].as_bytes()),
            Unwrapped::Denied => panic!("a2 must open group 1"),
        }
        assert_eq!(abe_dec(&a2, &store.records[2]).unwrap(), Unwrapped::Denied);
        let nobody = abe_keygen(&msk, "u0", &BTreeSet::new()).unwrap();
        for r in &store.records {
            assert_eq!(abe_dec(&nobody, r).unwrap(), Unwrapped::Denied);
        }
    }

    #[test]
    fn share_count_follows_policy() {
        let (_, _, store, _) = fixture();
        assert_eq!(store.records[2].shares.len(), 1);
        assert_eq!(store.records[0].shares.len(), 3);
        store.validate().unwrap();
    }

    #[test]
    fn tampering_is_an_integrity_error() {
        let (_, msk, store, _) = fixture();
        let sk = abe_keygen(&msk, "u", &set(&["a2"])).unwrap();

        let mut w = store.records[0].clone();
        w.payload[3] ^= 1;
        assert!(abe_dec(&sk, &w).unwrap_err().is_integrity());

        // a share the user cannot open still breaks the record binding
        let mut w = store.records[0].clone();
        w.shares.get_mut("a1").unwrap().sealed[0] ^= 1;
        assert!(abe_dec(&sk, &w).unwrap_err().is_integrity());

        let mut w = store.records[0].clone();
        w.shares.get_mut("a2").unwrap().ephemeral[5] ^= 1;
        assert!(abe_dec(&sk, &w).unwrap_err().is_integrity());

        let mut w = store.records[0].clone();
        w.policy.attributes.remove("a1");
        assert!(abe_dec(&sk, &w).unwrap_err().is_integrity());
    }

    #[test]
    fn descending_scan_picks_highest() {
        let (_, msk, store, chains) = fixture();
        let cases: [(&[&str], u16); 3] = [(&["a3"], 3), (&["a1"], 1), (&["a1", "a3"], 3)];
        for (attrs, expected) in cases {
            let sk = abe_keygen(&msk, "u", &set(attrs)).unwrap();
            let rec = recover_max_group(&sk, &store).unwrap().unwrap();
            assert_eq!(rec.group(), expected);
            assert_eq!(rec.chain, chains[expected as usize - 1]);
            assert_eq!(rec.attempts, (3 - expected + 1) as usize);
            assert_eq!(sk.unwrap_count(), 1);
        }
        let none = abe_keygen(&msk, "u", &BTreeSet::new()).unwrap();
        assert!(recover_max_group(&none, &store).unwrap().is_none());
    }

    #[test]
    fn missing_record_is_integrity_error() {
        let (_, msk, mut store, _) = fixture();
        store.records.remove(1);
        assert!(store.validate().is_err());
        let sk = abe_keygen(&msk, "u", &set(&["a1"])).unwrap();
        assert!(recover_max_group(&sk, &store).unwrap_err().is_integrity());
    }
}
