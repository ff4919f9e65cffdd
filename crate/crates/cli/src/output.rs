//! Hash-stamped CSV files and the run manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// First line of every CSV written for a scenario.
pub const HASH_PREFIX: &str = "# scenario-hash: ";

/// SHA-256 of the config text, plus the seed override when one is given.
pub fn scenario_hash(config_text: &str, seed_override: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    if let Some(seed) = seed_override {
        h.update(format!("\nseed-override = {seed}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

/// Output directory bound to one scenario hash.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
    pub hash: String,
}

impl OutDir {
    pub fn create(root: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Write serializable rows under the hash line; returns the file name.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<String> {
        let path = self.path(name);
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{HASH_PREFIX}{}", self.hash)?;
        let mut w = csv::Writer::from_writer(file);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(name.to_string())
    }

    /// The hash stamped on an existing output, if the file exists.
    pub fn stamped_hash(&self, name: &str) -> Result<Option<String>> {
        let path = self.path(name);
        if !path.exists() {
            return Ok(None);
        }
        let mut line = String::new();
        BufReader::new(File::open(&path)?).read_line(&mut line)?;
        Ok(line.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
    }
}

/// Rows of a stamped CSV, skipping the hash line.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>().with_context(|| format!("reading {}", path.display()))?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    /// A numerical certificate failed.
    Fail,
    /// The stage refused to run (missing input or inadmissible scenario).
    Refused,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: Status,
    pub message: String,
    pub seconds: f64,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub config: String,
    pub tool_version: String,
    pub seed: u64,
    pub jobs: usize,
    pub stages_requested: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<String>,
}

impl RunManifest {
    /// The manifest already in `out`, if any.
    pub fn read(out: &OutDir) -> Result<Option<Self>> {
        let path = out.path("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    /// Written last, through a rename, so its presence marks a complete run.
    pub fn write(&self, out: &OutDir) -> Result<()> {
        for f in &self.files {
            if !out.path(f).exists() {
                bail!("manifest lists {f}, which was not written");
            }
        }
        let tmp = out.path("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(&tmp, out.path("manifest.json"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_text_and_seed() {
        let a = scenario_hash("x = 1", None);
        assert_eq!(a.len(), 64);
        assert_eq!(a, scenario_hash("x = 1", None));
        assert_ne!(a, scenario_hash("x = 2", None));
        assert_ne!(a, scenario_hash("x = 1", Some(3)));
    }

    #[test]
    fn csv_round_trip_keeps_the_stamp() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Row {
            a: f64,
            b: String,
        }
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path(), "abc".into()).unwrap();
        let rows = vec![Row { a: 1.5, b: "x".into() }, Row { a: -2.0, b: "y".into() }];
        out.write_csv("t.csv", &rows).unwrap();
        assert_eq!(out.stamped_hash("t.csv").unwrap().as_deref(), Some("abc"));
        assert_eq!(read_csv::<Row>(&out.path("t.csv")).unwrap(), rows);
        assert_eq!(out.stamped_hash("missing.csv").unwrap(), None);
    }
}
