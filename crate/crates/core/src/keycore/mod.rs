//! Group keys, key chains, disjunctive policies and the attribute KEM.
//!
//! Each sensitivity group `l` has its own 32-byte base key `K_l`. The chain
//! handed out for group `l` is `K_l || K_{l-1} || ... || K_1`, so whoever can
//! open group `l` can slice out the key of every lower group without another
//! policy decryption.

mod kem;
mod service;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use zeroize::{Zeroize, Zeroizing};

pub use kem::{
    abe_dec, abe_enc, abe_enc_with, abe_gen, abe_gen_with, abe_keygen, recover_max_group, AttributeShare,
    MasterPublicKey, MasterSecretKey, Recovery, Unwrapped, UserSecretKey, WrappedGroupKey, WrappedKeyStore,
    SEALED_SHARE_LEN,
};
pub use service::{capability_matrix, setup, setup_with, Capability, KeyServiceState, Setup};

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;

/// A 256-bit symmetric key, wiped on drop.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl Drop for SymmetricKey {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// Fresh uniformly random key from the operating system.
pub fn ske_gen() -> Result<SymmetricKey> {
    ske_gen_with(&mut OsRng)
}

pub fn ske_gen_with<R: RngCore + CryptoRng>(rng: &mut R) -> Result<SymmetricKey> {
    let mut bytes = [0u8; KEY_LEN];
    rng.try_fill_bytes(&mut bytes)
        .map_err(|e| Error::Randomness(e.to_string()))?;
    Ok(SymmetricKey(bytes))
}

/// `K_l || ... || K_1` for one group `l`.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupKeyChain {
    group: u16,
    bytes: Zeroizing<Vec<u8>>,
}

impl GroupKeyChain {
    pub fn from_bytes(group: u16, bytes: Vec<u8>) -> Result<Self> {
        let bytes = Zeroizing::new(bytes);
        if group == 0 {
            return Err(Error::validation("key chain group must be at least 1"));
        }
        if bytes.len() != group as usize * KEY_LEN {
            return Err(Error::validation(format!(
                "key chain for group {group} must be {} bytes, got {}",
                group as usize * KEY_LEN,
                bytes.len()
            )));
        }
        Ok(Self { group, bytes })
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Base key `K_j` for `1 <= j <= group`.
    pub fn segment(&self, j: u16) -> Result<SymmetricKey> {
        if j == 0 || j > self.group {
            return Err(Error::validation(format!(
                "segment {j} outside 1..={} of this chain",
                self.group
            )));
        }
        let start = (self.group - j) as usize * KEY_LEN;
        let mut key = [0u8; KEY_LEN];
        key.copy_from_slice(&self.bytes[start..start + KEY_LEN]);
        Ok(SymmetricKey(key))
    }

    /// The chain of a lower group, cut from this one's suffix.
    pub fn truncate_to(&self, group: u16) -> Result<GroupKeyChain> {
        if group == 0 || group > self.group {
            return Err(Error::validation(format!(
                "cannot derive group {group} from a group {} chain",
                self.group
            )));
        }
        let start = (self.group - group) as usize * KEY_LEN;
        GroupKeyChain::from_bytes(group, self.bytes[start..].to_vec())
    }
}

impl fmt::Debug for GroupKeyChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupKeyChain {{ group: {}, .. }}", self.group)
    }
}

/// Key chains `chain(1) ..= chain(group_count)` over fresh base keys.
pub fn build_group_chains(group_count: u16) -> Result<Vec<GroupKeyChain>> {
    build_group_chains_with(group_count, &mut OsRng)
}

pub fn build_group_chains_with<R: RngCore + CryptoRng>(group_count: u16, rng: &mut R) -> Result<Vec<GroupKeyChain>> {
    if group_count < 1 {
        return Err(Error::validation("at least one sensitivity group is required"));
    }
    let base = (0..group_count)
        .map(|_| ske_gen_with(rng))
        .collect::<Result<Vec<_>>>()?;
    (1..=group_count)
        .map(|l| {
            let mut bytes = Vec::with_capacity(l as usize * KEY_LEN);
            for k in base[..l as usize].iter().rev() {
                bytes.extend_from_slice(k.as_bytes());
            }
            GroupKeyChain::from_bytes(l, bytes)
        })
        .collect()
}

/// `K_j` out of `chain`.
pub fn chain_segment(chain: &GroupKeyChain, j: u16) -> Result<SymmetricKey> {
    chain.segment(j)
}

/// Disjunction of attributes gating one group key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessPolicy {
    pub group: u16,
    pub attributes: BTreeSet<String>,
}

impl AccessPolicy {
    pub fn is_satisfied_by(&self, attributes: &BTreeSet<String>) -> bool {
        !self.attributes.is_disjoint(attributes)
    }
}

impl fmt::Display for AccessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        f.write_str(&parts.join(" OR "))
    }
}

/// `P_l = { a : role_max_group[a] >= l }` for `l = 1..=group_count`.
pub fn build_policies(role_max_group: &BTreeMap<String, u16>, group_count: u16) -> Result<Vec<AccessPolicy>> {
    if group_count < 1 {
        return Err(Error::validation("at least one sensitivity group is required"));
    }
    if let Some((role, &g)) = role_max_group.iter().find(|(_, &g)| g < 1 || g > group_count) {
        return Err(Error::validation(format!(
            "role {role:?} maps to group {g}, outside 1..={group_count}"
        )));
    }
    if let Some(role) = role_max_group.keys().find(|r| r.is_empty()) {
        return Err(Error::validation(format!("attribute name {role:?} is empty")));
    }
    (1..=group_count)
        .map(|l| {
            let attributes: BTreeSet<String> = role_max_group
                .iter()
                .filter(|(_, &g)| g >= l)
                .map(|(a, _)| a.clone())
                .collect();
            if attributes.is_empty() {
                return Err(Error::Config(format!(
                    "no role reaches sensitivity group {l}; its content would be undecryptable"
                )));
            }
            Ok(AccessPolicy { group: l, attributes })
        })
        .collect()
}

/// Checks `P_l ⊇ P_{l+1}` over a policy list ordered by group.
pub fn check_nesting(policies: &[AccessPolicy]) -> Result<()> {
    for w in policies.windows(2) {
        if !w[0].attributes.is_superset(&w[1].attributes) {
            return Err(Error::integrity(format!(
                "policy of group {} is not contained in policy of group {}",
                w[1].group, w[0].group
            )));
        }
    }
    Ok(())
}
