//! Output bookkeeping: files written by a command are removed again unless
//! the command finishes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dir: bool,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let created_dir = !dir.exists();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs { dir, written: Vec::new(), created_dir, committed: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Register `name` inside the output directory and return its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, text)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    /// Keep everything written so far.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            if p.exists() {
                let _ = fs::remove_file(p);
            }
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
