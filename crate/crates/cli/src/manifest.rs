//! Per-experiment `manifest.json`: sha256 of every data file and checkpoint,
//! keyed by path relative to the experiment directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftgrad::io::sha256_file;

use crate::error::{CliError, Result};

const FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(FILE);
        if !p.exists() {
            return Ok(Self::default());
        }
        serde_json::from_slice(&std::fs::read(&p)?).map_err(|e| CliError::Manifest(format!("{}: {e}", p.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(dir.join(FILE), s)?;
        Ok(())
    }

    /// Hashes `rel` (relative to `dir`) and records it.
    pub fn record(&mut self, dir: &Path, rel: &str) -> Result<String> {
        let h = sha256_file(&dir.join(rel))?;
        self.files.insert(rel.to_string(), h.clone());
        Ok(h)
    }

    /// Checks the on-disk file against its recorded hash. Files the
    /// manifest does not know about pass.
    pub fn check(&self, dir: &Path, rel: &str) -> Result<()> {
        if let Some(want) = self.files.get(rel) {
            let got = sha256_file(&dir.join(rel))?;
            if &got != want {
                return Err(CliError::Manifest(format!(
                    "{rel}: sha256 {got} does not match manifest {want}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_check_and_tamper() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("a.txt"), "hello").unwrap();
        let mut m = Manifest::default();
        let h = m.record(d.path(), "a.txt").unwrap();
        // sha256("hello")
        assert_eq!(h, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        m.save(d.path()).unwrap();
        let m = Manifest::load(d.path()).unwrap();
        m.check(d.path(), "a.txt").unwrap();
        m.check(d.path(), "unknown.txt").unwrap();
        std::fs::write(d.path().join("a.txt"), "hellO").unwrap();
        assert_eq!(m.check(d.path(), "a.txt").unwrap_err().code(), "E_MANIFEST");
    }
}
