use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Writes files under the run's output directory. CSVs start with a
/// `# config_hash=… seed=…` comment line; JSON documents carry the same
/// values in a `meta` object.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    config_hash: String,
    seed: u64,
}

#[derive(Serialize)]
struct Meta<'a> {
    config_hash: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: Meta<'a>,
    data: &'a T,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>, config_hash: String, seed: u64) -> Self {
        OutputDir {
            root: root.into(),
            config_hash,
            seed,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&self, relative: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    /// Writes a CSV produced by `body` behind the header comment.
    pub fn csv(&self, relative: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = format!("# config_hash={} seed={}\n", self.config_hash, self.seed).into_bytes();
        body(&mut buf)?;
        let path = self.target(relative)?;
        fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, relative: &str, data: &T) -> Result<PathBuf> {
        let doc = Document {
            meta: Meta {
                config_hash: &self.config_hash,
                seed: self.seed,
            },
            data,
        };
        let mut buf = serde_json::to_vec_pretty(&doc)?;
        buf.push(b'\n');
        let path = self.target(relative)?;
        fs::write(&path, buf)?;
        Ok(path)
    }
}
