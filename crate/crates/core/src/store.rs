//! Shared helpers for the on-disk stores: content hashing, atomic
//! publication, identifier hygiene.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Names and versions become path components, so keep them to a safe
/// alphabet.
pub fn check_component(kind: &str, s: &str) -> Result<()> {
    let ok = !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{kind} {s:?} must be non-empty, not start with '.', and use only [A-Za-z0-9._-]"
        )))
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `files` into a hidden sibling directory of `dest` and renames it
/// into place. Readers never observe a partially written `dest`.
pub fn publish_dir(dest: &Path, files: &[(&str, &[u8])]) -> Result<()> {
    if dest.exists() {
        return Err(Error::Conflict(dest.display().to_string()));
    }
    let parent = dest
        .parent()
        .ok_or_else(|| Error::Internal(format!("{} has no parent", dest.display())))?;
    fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    let leaf = dest.file_name().and_then(|s| s.to_str()).unwrap_or("entry");
    let tmp: PathBuf = parent.join(format!(
        ".tmp-{leaf}-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    for (name, bytes) in files {
        let p = tmp.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    }
    if let Err(e) = fs::rename(&tmp, dest) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(if dest.exists() {
            Error::Conflict(dest.display().to_string())
        } else {
            Error::io(format!("publishing {}", dest.display()), e)
        });
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Sorted names of the visible subdirectories of `dir` (empty if `dir`
/// does not exist).
pub fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(format!("listing {}", dir.display()), e)),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && entry.path().is_dir() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn component_rules() {
        assert!(check_component("name", "mnist-test_v1.2").is_ok());
        for bad in ["", ".hidden", "a/b", "..", "a b"] {
            assert!(check_component("name", bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn publish_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("x").join("entry");
        publish_dir(&dest, &[("a.txt", b"1")]).unwrap();
        assert!(matches!(
            publish_dir(&dest, &[("a.txt", b"2")]),
            Err(Error::Conflict(_))
        ));
        assert_eq!(fs::read(dest.join("a.txt")).unwrap(), b"1");
        assert_eq!(subdirs(&dir.path().join("x")).unwrap(), vec!["entry"]);
    }
}
