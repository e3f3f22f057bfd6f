//! Key files (`S2SK`): the public key store, the key-service state and user keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::wire::{expect_preamble, split_digest, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::keycore::{
    AccessPolicy, AttributeShare, GroupKeyChain, KeyServiceState, MasterPublicKey, MasterSecretKey, UserSecretKey,
    WrappedGroupKey, WrappedKeyStore, KEY_LEN,
};

pub const KEY_MAGIC: &[u8; 4] = b"S2SK";
pub const KEY_VERSION: u16 = 1;

/// Which record a key file holds; the byte after the version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum KeyFileKind {
    Store = 1,
    ServiceState = 2,
    UserKey = 3,
}

impl KeyFileKind {
    fn name(self) -> &'static str {
        match self {
            KeyFileKind::Store => "key store",
            KeyFileKind::ServiceState => "key-service state",
            KeyFileKind::UserKey => "user key",
        }
    }
}

fn preamble(kind: KeyFileKind) -> Writer {
    let mut w = Writer::default();
    w.bytes(KEY_MAGIC);
    w.u16(KEY_VERSION);
    w.u8(kind as u8);
    w
}

fn open(bytes: &[u8], kind: KeyFileKind) -> Result<Reader<'_>> {
    let what = kind.name();
    let body = split_digest(bytes, what)?;
    let mut r = Reader::new(body, what);
    expect_preamble(&mut r, KEY_MAGIC, KEY_VERSION)?;
    let found = r.u8("kind")?;
    if found != kind as u8 {
        return Err(r.corrupt(format!("file kind is {found}, expected {} ({what})", kind as u8)));
    }
    Ok(r)
}

/// Reads the kind byte without checking anything else.
pub fn peek_kind(bytes: &[u8]) -> Option<KeyFileKind> {
    if bytes.len() < 7 || &bytes[..4] != KEY_MAGIC {
        return None;
    }
    match bytes[6] {
        1 => Some(KeyFileKind::Store),
        2 => Some(KeyFileKind::ServiceState),
        3 => Some(KeyFileKind::UserKey),
        _ => None,
    }
}

pub fn encode_key_store(store: &WrappedKeyStore) -> Result<Vec<u8>> {
    let mut w = preamble(KeyFileKind::Store);
    w.u16(store.group_count);
    let keys = store.mpk.keys();
    w.u16(u16::try_from(keys.len()).map_err(|_| Error::validation("too many attributes"))?);
    for (attr, pk) in keys {
        w.str16(attr)?;
        w.bytes(pk);
    }
    w.u16(u16::try_from(store.records.len()).map_err(|_| Error::validation("too many records"))?);
    for rec in &store.records {
        w.u16(rec.group());
        w.u16(rec.shares.len() as u16);
        for (attr, share) in &rec.shares {
            w.str16(attr)?;
            w.bytes(&share.ephemeral);
            w.blob32(&share.sealed)?;
        }
        w.blob32(&rec.payload)?;
    }
    Ok(w.finish())
}

/// Parses a key store. Checks the format only; see [`WrappedKeyStore::validate`].
pub fn decode_key_store(bytes: &[u8]) -> Result<WrappedKeyStore> {
    let mut r = open(bytes, KeyFileKind::Store)?;
    let group_count = r.u16("group count")?;
    let n = r.u16("attribute count")?;
    let mut keys = BTreeMap::new();
    for _ in 0..n {
        let attr = r.str16("attribute")?;
        let pk = r.array::<32>("public key")?;
        if keys.insert(attr.clone(), pk).is_some() {
            return Err(r.corrupt(format!("attribute {attr:?} listed twice")));
        }
    }
    let count = r.u16("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let group = r.u16("group")?;
        let shares_n = r.u16("share count")?;
        let mut shares = BTreeMap::new();
        for _ in 0..shares_n {
            let attr = r.str16("share attribute")?;
            let ephemeral = r.array::<32>("ephemeral key")?;
            let sealed = r.blob32("sealed key")?.to_vec();
            if shares
                .insert(attr.clone(), AttributeShare { ephemeral, sealed })
                .is_some()
            {
                return Err(r.corrupt(format!("group {group} has two shares for {attr:?}")));
            }
        }
        let payload = r.blob32("payload")?.to_vec();
        records.push(WrappedGroupKey {
            policy: AccessPolicy {
                group,
                attributes: shares.keys().cloned().collect(),
            },
            shares,
            payload,
        });
    }
    r.expect_end()?;
    Ok(WrappedKeyStore {
        group_count,
        mpk: MasterPublicKey::from_keys(keys),
        records,
    })
}

pub fn encode_service_state(state: &KeyServiceState) -> Result<Vec<u8>> {
    let mut w = preamble(KeyFileKind::ServiceState);
    w.u16(state.group_count);
    let secrets = state.msk.secret_bytes();
    if secrets.keys().ne(state.roles.keys()) {
        return Err(Error::validation("role table and master key name different attributes"));
    }
    w.u16(u16::try_from(state.roles.len()).map_err(|_| Error::validation("too many attributes"))?);
    for (attr, max_group) in &state.roles {
        w.str16(attr)?;
        w.u16(*max_group);
        w.bytes(secrets[attr].as_ref());
    }
    w.u16(state.top_chain.group());
    w.bytes(state.top_chain.as_bytes());
    Ok(w.finish())
}

pub fn decode_service_state(bytes: &[u8]) -> Result<KeyServiceState> {
    let mut r = open(bytes, KeyFileKind::ServiceState)?;
    let group_count = r.u16("group count")?;
    let n = r.u16("attribute count")?;
    let mut roles = BTreeMap::new();
    let mut secrets = BTreeMap::new();
    for _ in 0..n {
        let attr = r.str16("attribute")?;
        let max_group = r.u16("max group")?;
        let secret = r.array::<32>("secret key")?;
        if roles.insert(attr.clone(), max_group).is_some() {
            return Err(r.corrupt(format!("attribute {attr:?} listed twice")));
        }
        secrets.insert(attr, secret);
    }
    let chain_group = r.u16("chain group")?;
    let chain = r.take(chain_group as usize * KEY_LEN, "key chain")?.to_vec();
    r.expect_end()?;
    let state = KeyServiceState {
        group_count,
        roles,
        msk: MasterSecretKey::from_secret_bytes(secrets),
        top_chain: GroupKeyChain::from_bytes(chain_group, chain).map_err(|e| r.corrupt(e.to_string()))?,
    };
    state.validate().map_err(|e| r.corrupt(e.to_string()))?;
    Ok(state)
}

pub fn encode_user_key(sk: &UserSecretKey) -> Result<Vec<u8>> {
    let mut w = preamble(KeyFileKind::UserKey);
    w.str16(sk.user_id())?;
    let secrets = sk.secret_bytes();
    w.u16(u16::try_from(secrets.len()).map_err(|_| Error::validation("too many attributes"))?);
    for (attr, secret) in &secrets {
        w.str16(attr)?;
        w.bytes(secret.as_ref());
    }
    Ok(w.finish())
}

pub fn decode_user_key(bytes: &[u8]) -> Result<UserSecretKey> {
    let mut r = open(bytes, KeyFileKind::UserKey)?;
    let user_id = r.str16("user id")?;
    let n = r.u16("attribute count")?;
    let mut keys = BTreeMap::new();
    for _ in 0..n {
        let attr = r.str16("attribute")?;
        let secret = r.array::<32>("secret key")?;
        if keys.insert(attr.clone(), secret).is_some() {
            return Err(r.corrupt(format!("attribute {attr:?} listed twice")));
        }
    }
    r.expect_end()?;
    Ok(UserSecretKey::from_secret_bytes(user_id, keys))
}

pub fn store_key_store(store: &WrappedKeyStore, path: &Path) -> Result<()> {
    write_atomic(path, &encode_key_store(store)?)
}

/// Loads and fully validates a key store.
pub fn load_key_store(path: &Path) -> Result<WrappedKeyStore> {
    let store = decode_key_store(&fs::read(path)?)?;
    store.validate()?;
    Ok(store)
}

pub fn store_service_state(state: &KeyServiceState, path: &Path) -> Result<()> {
    write_atomic(path, &encode_service_state(state)?)
}

pub fn load_service_state(path: &Path) -> Result<KeyServiceState> {
    decode_service_state(&fs::read(path)?)
}

pub fn store_user_key(sk: &UserSecretKey, path: &Path) -> Result<()> {
    write_atomic(path, &encode_user_key(sk)?)
}

pub fn load_user_key(path: &Path) -> Result<UserSecretKey> {
    decode_user_key(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keycore::{recover_max_group, setup_with};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn fixture() -> crate::keycore::Setup {
        let roles = [("a1", 1u16), ("a2", 2), ("a3", 3)]
            .iter()
            .map(|(a, g)| (a.to_string(), *g))
            .collect();
        setup_with(&roles, 3, &mut ChaCha20Rng::seed_from_u64(8)).unwrap()
    }

    #[test]
    fn store_round_trip() {
        let s = fixture();
        let bytes = encode_key_store(&s.store).unwrap();
        assert_eq!(&bytes[..4], b"S2SK");
        assert_eq!(bytes[6], 1);
        let back = decode_key_store(&bytes).unwrap();
        assert_eq!(back, s.store);
        assert_eq!(encode_key_store(&back).unwrap(), bytes);
    }

    #[test]
    fn state_and_user_key_round_trip() {
        let s = fixture();
        let bytes = encode_service_state(&s.state).unwrap();
        let state = decode_service_state(&bytes).unwrap();
        assert_eq!(encode_service_state(&state).unwrap(), bytes);
        assert_eq!(state.top_chain, s.state.top_chain);

        let sk = state.register("carol", &BTreeSet::from(["a2".to_string()])).unwrap();
        let back = decode_user_key(&encode_user_key(&sk).unwrap()).unwrap();
        assert_eq!(back.user_id(), "carol");
        let rec = recover_max_group(&back, &s.store).unwrap().unwrap();
        assert_eq!(rec.group(), 2);
    }

    #[test]
    fn kinds_are_not_interchangeable() {
        let s = fixture();
        let bytes = encode_key_store(&s.store).unwrap();
        assert_eq!(peek_kind(&bytes), Some(KeyFileKind::Store));
        let err = decode_user_key(&bytes).unwrap_err();
        assert!(err.is_integrity(), "{err}");
    }

    #[test]
    fn missing_record_fails_validation_only() {
        let mut s = fixture();
        s.store.records.remove(1);
        let back = decode_key_store(&encode_key_store(&s.store).unwrap()).unwrap();
        assert!(back.validate().unwrap_err().is_integrity());
    }

    #[test]
    fn corruption_is_detected() {
        let s = fixture();
        let bytes = encode_service_state(&s.state).unwrap();
        for i in [0, 5, 6, 20, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 4;
            assert!(decode_service_state(&bad).unwrap_err().is_integrity());
        }
    }
}
