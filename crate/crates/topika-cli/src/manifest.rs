//! Run manifests: the resolved configuration plus content hashes of every
//! input file, enough to repeat a run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolved;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    /// sha256 of `blob <len>\0<content>`, as git computes object ids.
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Resolved,
    pub inputs: Vec<InputFile>,
    /// Hash over all input hashes, in order.
    pub input_hash: String,
    pub outputs: Vec<PathBuf>,
    /// Training seconds (train) or total wall time.
    pub seconds: f64,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

pub fn hash_str(s: &str) -> String {
    hex(&Sha256::digest(s.as_bytes()))
}

/// Hash every existing input file of the run.
pub fn hash_inputs(paths: &[&Path]) -> anyhow::Result<(Vec<InputFile>, String)> {
    let mut inputs = Vec::new();
    let mut all = String::new();
    for p in paths {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let hash = blob_hash(&bytes);
        all.push_str(&hash);
        inputs.push(InputFile {
            path: p.to_path_buf(),
            hash,
        });
    }
    Ok((inputs, hash_str(&all)))
}

impl Manifest {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_sha256_object_ids() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
