//! Persistence: containers, key files and repository verification.
//!
//! A repository is a directory holding `*.s2sc` containers and one `*.s2sk`
//! key store. All integers are little-endian and every file ends with the
//! SHA-256 of the bytes before it.

mod container;
mod keyfile;
mod wire;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub use container::{
    decode_container, encode_container, framing_len, load_container, store_container, CONTAINER_MAGIC,
    CONTAINER_VERSION, INDEX_ENTRY_LEN,
};
pub use keyfile::{
    decode_key_store, decode_service_state, decode_user_key, encode_key_store, encode_service_state, encode_user_key,
    load_key_store, load_service_state, load_user_key, peek_kind, store_key_store, store_service_state, store_user_key,
    KeyFileKind, KEY_MAGIC, KEY_VERSION,
};
pub use wire::write_atomic;

use crate::error::Result;
use crate::keycore::WrappedKeyStore;

pub const CONTAINER_EXTENSION: &str = "s2sc";
pub const KEY_EXTENSION: &str = "s2sk";

/// Verdict for one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileVerdict {
    pub path: PathBuf,
    /// `None` when the file passed.
    pub failure: Option<String>,
    /// Short description of what was found, for passing files.
    pub summary: String,
}

impl FileVerdict {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositoryReport {
    /// The key store verdict, or a failure when the directory has none or several.
    pub key_store: FileVerdict,
    pub containers: Vec<FileVerdict>,
}

impl RepositoryReport {
    pub fn passed(&self) -> bool {
        self.key_store.passed() && self.containers.iter().all(FileVerdict::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FileVerdict> {
        std::iter::once(&self.key_store)
            .chain(&self.containers)
            .filter(|v| !v.passed())
    }
}

impl fmt::Display for RepositoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in std::iter::once(&self.key_store).chain(&self.containers) {
            match &v.failure {
                None => writeln!(f, "ok    {}  {}", v.path.display(), v.summary)?,
                Some(e) => writeln!(f, "FAIL  {}  {e}", v.path.display())?,
            }
        }
        Ok(())
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e == ext)
}

fn check_store(path: &Path) -> (FileVerdict, Option<WrappedKeyStore>) {
    let result = fs::read(path)
        .map_err(Into::into)
        .and_then(|b| decode_key_store(&b))
        .and_then(|s| s.validate().map(|_| s));
    match result {
        Ok(s) => (
            FileVerdict {
                path: path.to_path_buf(),
                failure: None,
                summary: format!("{} groups, {} attributes", s.group_count, s.universe().len()),
            },
            Some(s),
        ),
        Err(e) => (
            FileVerdict {
                path: path.to_path_buf(),
                failure: Some(e.to_string()),
                summary: String::new(),
            },
            None,
        ),
    }
}

/// Checks every container digest and layout plus the key store's coverage
/// and policy nesting. Never needs secret keys; failures go in the report.
pub fn verify_repository(dir: &Path) -> Result<RepositoryReport> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();

    let stores: Vec<&PathBuf> = entries
        .iter()
        .filter(|p| has_extension(p, KEY_EXTENSION))
        .filter(|p| {
            fs::read(p)
                .ok()
                .and_then(|b| peek_kind(&b))
                .is_none_or(|k| k == KeyFileKind::Store)
        })
        .collect();
    let (key_store, store) = match stores.as_slice() {
        [one] => check_store(one),
        [] => (
            FileVerdict {
                path: dir.to_path_buf(),
                failure: Some("no key store in the repository".into()),
                summary: String::new(),
            },
            None,
        ),
        many => (
            FileVerdict {
                path: dir.to_path_buf(),
                failure: Some(format!("{} key stores in the repository; expected one", many.len())),
                summary: String::new(),
            },
            None,
        ),
    };

    let containers = entries
        .iter()
        .filter(|p| has_extension(p, CONTAINER_EXTENSION))
        .map(|path| {
            let checked = load_container(path).and_then(|c| {
                let groups = c.metadata.group_count();
                match &store {
                    Some(s) if groups > s.group_count => Err(crate::Error::Integrity(format!(
                        "container uses {groups} groups but the key store has {}",
                        s.group_count
                    ))),
                    _ => Ok(c),
                }
            });
            match checked {
                Ok(c) => FileVerdict {
                    path: path.clone(),
                    failure: None,
                    summary: format!("{} PSOs, {} encrypted bytes", c.blobs.len(), c.encrypted_bytes()),
                },
                Err(e) => FileVerdict {
                    path: path.clone(),
                    failure: Some(e.to_string()),
                    summary: String::new(),
                },
            }
        })
        .collect();
    Ok(RepositoryReport { key_store, containers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keycore::setup_with;
    use crate::regioncrypt::protect_image_with;
    use crate::samples;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn populate(dir: &Path) -> crate::keycore::Setup {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let roles = (1..=4u16).map(|g| (format!("a{g}"), g)).collect();
        let s = setup_with(&roles, 4, &mut rng).unwrap();
        store_key_store(&s.store, &dir.join("keys.s2sk")).unwrap();
        let p = protect_image_with(
            &samples::case_study_image(),
            &samples::case_study_metadata(),
            &s.state.top_chain,
            &mut rng,
        )
        .unwrap();
        store_container(&p, &dir.join("a.s2sc")).unwrap();
        store_container(&p, &dir.join("b.s2sc")).unwrap();
        s
    }

    #[test]
    fn clean_repository_passes() {
        let dir = tempfile::tempdir().unwrap();
        populate(dir.path());
        let report = verify_repository(dir.path()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.containers.len(), 2);
    }

    #[test]
    fn missing_record_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = populate(dir.path());
        s.store.records.remove(1);
        store_key_store(&s.store, &dir.path().join("keys.s2sk")).unwrap();
        let report = verify_repository(dir.path()).unwrap();
        assert!(!report.passed());
        assert!(
            report.key_store.failure.as_ref().unwrap().contains("records"),
            "{report}"
        );
    }

    #[test]
    fn truncated_container_is_named() {
        let dir = tempfile::tempdir().unwrap();
        populate(dir.path());
        let path = dir.path().join("b.s2sc");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let report = verify_repository(dir.path()).unwrap();
        let failed: Vec<_> = report.failures().collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].path.ends_with("b.s2sc"));
        assert!(report.to_string().contains("FAIL"));
    }

    #[test]
    fn missing_store_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        populate(dir.path());
        fs::remove_file(dir.path().join("keys.s2sk")).unwrap();
        assert!(!verify_repository(dir.path()).unwrap().passed());
    }
}
