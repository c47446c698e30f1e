//! Output files. Every file starts with a header carrying the manifest hash,
//! and is written to a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

pub struct Sink {
    dir: Option<PathBuf>,
    hash: String,
    written: Vec<PathBuf>,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Sink {
    pub fn new(dir: Option<&Path>, hash: &str) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Sink {
            dir: dir.map(Path::to_path_buf),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            atomic_write(&path, bytes)?;
            self.written.push(path);
        }
        Ok(())
    }

    /// CSV with a `# manifest <hash>` comment line before the column header.
    pub fn csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut buf = format!("# manifest {}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        self.put(name, &buf)
    }

    /// JSON lines; the first line is `{"manifest": "<hash>"}`.
    pub fn jsonl<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut buf = serde_json::to_vec(&serde_json::json!({ "manifest": self.hash }))?;
        buf.push(b'\n');
        for r in rows {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.put(name, &buf)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.put(name, bytes)
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.put(name, &buf)
    }
}
