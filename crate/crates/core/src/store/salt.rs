//! The MAC salt file.
//!
//! Kept outside the data directory on purpose: device ids in the journal are
//! salted hashes, and without the salt they cannot be matched to hardware
//! addresses. The file holds the salt as hex on one line and is created with
//! owner-only permissions.

use std::io::{Read, Write};
use std::path::Path;

use super::StoreError;
use crate::flowcap::Salt;

pub const SALT_BYTES: usize = 32;

/// Reads the salt at `path`, generating and saving a fresh one if absent.
pub fn load_or_create(path: &Path) -> Result<Salt, StoreError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse(path, &text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let mut bytes = [0u8; SALT_BYTES];
            std::fs::File::open("/dev/urandom")
                .and_then(|mut f| f.read_exact(&mut bytes))
                .map_err(StoreError::io(Path::new("/dev/urandom")))?;
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(StoreError::io(parent))?;
            }
            write_private(path, &hex::encode(bytes)).map_err(StoreError::io(path))?;
            Ok(Salt::new(bytes.to_vec()).expect("salt is nonempty"))
        }
        Err(e) => Err(StoreError::io(path)(e)),
    }
}

/// Salt from a configured string, used as raw bytes.
pub fn from_secret(secret: &str) -> Option<Salt> {
    Salt::new(secret.as_bytes().to_vec()).ok()
}

fn parse(path: &Path, text: &str) -> Result<Salt, StoreError> {
    let corrupt = |message: String| StoreError::Corrupt {
        path: path.to_owned(),
        line: 1,
        message,
    };
    let bytes = hex::decode(text.trim()).map_err(|e| corrupt(format!("salt is not hex: {e}")))?;
    Salt::new(bytes).map_err(|e| corrupt(e.to_string()))
}

fn write_private(path: &Path, text: &str) -> std::io::Result<()> {
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    writeln!(f, "{text}")?;
    f.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcap::device_id;

    #[test]
    fn created_once_then_reused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("secret").join("salt");
        let mac = "02:00:00:00:00:01".parse().unwrap();
        let a = load_or_create(&path).unwrap();
        let b = load_or_create(&path).unwrap();
        assert_eq!(device_id(&a, mac), device_id(&b, mac));
        std::fs::write(&path, "zz").unwrap();
        assert!(load_or_create(&path).is_err());
    }
}
