use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};

use super::kem::{
    abe_dec, abe_enc_with, abe_gen_with, abe_keygen, MasterSecretKey, Unwrapped, UserSecretKey, WrappedKeyStore,
};
use super::{build_group_chains_with, build_policies, AccessPolicy, GroupKeyChain};
use crate::error::{Error, Result};

/// Everything the key service keeps private.
#[derive(Debug, Clone)]
pub struct KeyServiceState {
    pub group_count: u16,
    /// Attribute to the highest group it may open.
    pub roles: BTreeMap<String, u16>,
    pub msk: MasterSecretKey,
    /// `chain(L)`; every lower chain is a suffix of it.
    pub top_chain: GroupKeyChain,
}

impl KeyServiceState {
    pub fn validate(&self) -> Result<()> {
        if self.top_chain.group() != self.group_count {
            return Err(Error::integrity(format!(
                "key service holds a group {} chain for {} groups",
                self.top_chain.group(),
                self.group_count
            )));
        }
        let universe: BTreeSet<String> = self.roles.keys().cloned().collect();
        if universe != self.msk.universe() {
            return Err(Error::integrity("role table and master key name different attributes"));
        }
        build_policies(&self.roles, self.group_count)?;
        Ok(())
    }

    pub fn universe(&self) -> BTreeSet<String> {
        self.msk.universe()
    }

    pub fn policies(&self) -> Result<Vec<AccessPolicy>> {
        build_policies(&self.roles, self.group_count)
    }

    pub fn chain(&self, group: u16) -> Result<GroupKeyChain> {
        self.top_chain.truncate_to(group)
    }

    /// Issues a user key for `attributes`. Registration never touches the key store.
    pub fn register(&self, user_id: &str, attributes: &BTreeSet<String>) -> Result<UserSecretKey> {
        if user_id.is_empty() {
            return Err(Error::validation("user id must be non-empty"));
        }
        abe_keygen(&self.msk, user_id, attributes)
    }
}

/// Output of a system setup.
#[derive(Debug)]
pub struct Setup {
    pub state: KeyServiceState,
    pub store: WrappedKeyStore,
    /// Policy encryptions performed; always the group count.
    pub wrap_operations: usize,
}

/// Generates base keys, chains, policies and the attribute keys, then wraps
/// each chain under its group's policy.
pub fn setup(roles: &BTreeMap<String, u16>, group_count: u16) -> Result<Setup> {
    setup_with(roles, group_count, &mut OsRng)
}

pub fn setup_with<R: RngCore + CryptoRng>(
    roles: &BTreeMap<String, u16>,
    group_count: u16,
    rng: &mut R,
) -> Result<Setup> {
    let policies = build_policies(roles, group_count)?;
    let universe: BTreeSet<String> = roles.keys().cloned().collect();
    let (mpk, msk) = abe_gen_with(&universe, rng)?;
    let chains = build_group_chains_with(group_count, rng)?;

    let mut wrap_operations = 0;
    let mut records = Vec::with_capacity(policies.len());
    for (policy, chain) in policies.iter().zip(&chains) {
        records.push(abe_enc_with(&mpk, policy, chain.as_bytes(), rng)?);
        wrap_operations += 1;
    }
    let store = WrappedKeyStore {
        group_count,
        mpk,
        records,
    };
    let top_chain = chains.into_iter().last().expect("group_count >= 1");
    Ok(Setup {
        state: KeyServiceState {
            group_count,
            roles: roles.clone(),
            msk,
            top_chain,
        },
        store,
        wrap_operations,
    })
}

/// One row of the capability matrix: who can open `group`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capability {
    pub group: u16,
    pub attributes: BTreeSet<String>,
}

impl Capability {
    pub fn formula(&self) -> String {
        self.attributes.iter().cloned().collect::<Vec<_>>().join(" ∨ ")
    }
}

/// Which single attributes actually open which wrapped records.
///
/// Computed by trial decryption with a one-attribute key per role, so it
/// reflects the published store rather than the intended policies.
pub fn capability_matrix(state: &KeyServiceState, store: &WrappedKeyStore) -> Result<Vec<Capability>> {
    let mut rows: Vec<Capability> = (1..=store.group_count)
        .map(|group| Capability {
            group,
            attributes: BTreeSet::new(),
        })
        .collect();
    for attr in state.universe() {
        let sk = abe_keygen(&state.msk, "capability-probe", &BTreeSet::from([attr.clone()]))?;
        for row in rows.iter_mut() {
            let record = store
                .record(row.group)
                .ok_or_else(|| Error::integrity(format!("key store has no record for group {}", row.group)))?;
            if let Unwrapped::Granted(_) = abe_dec(&sk, record)? {
                row.attributes.insert(attr.clone());
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keycore::{abe_enc, abe_gen, recover_max_group};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn roles(pairs: &[(&str, u16)]) -> BTreeMap<String, u16> {
        pairs.iter().map(|(a, g)| (a.to_string(), *g)).collect()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn setup_wraps_once_per_group() {
        let s = setup(&roles(&[("a1", 1), ("a2", 2), ("a3", 3), ("a4", 4)]), 4).unwrap();
        assert_eq!(s.wrap_operations, 4);
        assert_eq!(s.store.records.len(), 4);
        s.store.validate().unwrap();
        s.state.validate().unwrap();
    }

    #[test]
    fn three_role_capabilities() {
        let s = setup(&roles(&[("a1", 1), ("a2", 2), ("a3", 3)]), 3).unwrap();
        let m = capability_matrix(&s.state, &s.store).unwrap();
        let formulas: Vec<String> = m.iter().map(Capability::formula).collect();
        assert_eq!(formulas, vec!["a1 ∨ a2 ∨ a3", "a2 ∨ a3", "a3"]);
    }

    #[test]
    fn registered_keys_follow_roles() {
        let s = setup(&roles(&[("a1", 1), ("a2", 2), ("a3", 3)]), 3).unwrap();
        let sk = s.state.register("bob", &set(&["a2"])).unwrap();
        let rec = recover_max_group(&sk, &s.store).unwrap().unwrap();
        assert_eq!(rec.group(), 2);
        assert_eq!(rec.chain, s.state.chain(2).unwrap());
        assert!(s.state.register("eve", &set(&["a9"])).is_err());
        assert!(s.state.register("", &set(&["a1"])).is_err());
    }

    #[test]
    fn seeded_setup_is_reproducible() {
        let r = roles(&[("a1", 1), ("a2", 2)]);
        let a = setup_with(&r, 2, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let b = setup_with(&r, 2, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.state.top_chain, b.state.top_chain);
    }

    #[test]
    fn empty_policy_aborts_setup() {
        let err = setup(&roles(&[("a1", 1)]), 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    /// Every user set against every non-empty policy over a 4-attribute universe.
    #[test]
    fn disjunction_contract_is_exhaustive() {
        let names = ["a", "b", "c", "d"];
        let universe = set(&names);
        let (mpk, msk) = abe_gen(&universe).unwrap();
        let subset = |mask: u32| -> BTreeSet<String> {
            names
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| n.to_string())
                .collect()
        };
        let keys: Vec<_> = (0..16u32).map(|m| abe_keygen(&msk, "u", &subset(m)).unwrap()).collect();
        for pmask in 1..16u32 {
            let policy = AccessPolicy {
                group: 1,
                attributes: subset(pmask),
            };
            let wrapped = abe_enc(&mpk, &policy, b"payload").unwrap();
            for (umask, sk) in keys.iter().enumerate() {
                let granted = matches!(abe_dec(sk, &wrapped).unwrap(), Unwrapped::Granted(_));
                assert_eq!(
                    granted,
                    umask as u32 & pmask != 0,
                    "user {umask:04b} policy {pmask:04b}"
                );
            }
        }
    }

    #[test]
    fn coalitions_gain_nothing() {
        let s = setup(&roles(&[("a1", 1), ("a2", 2), ("a3", 3)]), 3).unwrap();
        let opened = |attrs: &[&str]| -> BTreeSet<u16> {
            let sk = s.state.register("u", &set(attrs)).unwrap();
            s.store
                .records
                .iter()
                .filter(|r| matches!(abe_dec(&sk, r).unwrap(), Unwrapped::Granted(_)))
                .map(|r| r.group())
                .collect()
        };
        let union: BTreeSet<u16> = opened(&["a1"]).union(&opened(&["a2"])).copied().collect();
        assert_eq!(opened(&["a1", "a2"]), union);
    }
}
