//! Checkpoint files: a text manifest plus a raw little-endian `f64` blob.
//!
//! ```text
//! rehearsal-checkpoint 1
//! kind qnetwork
//! meta hidden_activation leaky_relu:0.01
//! tensor layer0.weight 128 128
//! tensor layer0.bias 128
//! end
//! ```
//!
//! The blob holds every tensor's values back to back, in manifest order.
//! Round trips are bit-exact. Files are written once and never overwritten.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "rehearsal-checkpoint";
pub const VERSION: u32 = 1;

const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| bad(format!("missing meta key {key:?}")))?;
        raw.parse()
            .map_err(|_| bad(format!("meta {key:?} has unparsable value {raw:?}")))
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor {name:?}")))
    }

    fn validate(&self) -> Result<()> {
        if !valid_token(&self.kind) {
            return Err(bad(format!("invalid kind {:?}", self.kind)));
        }
        for (k, v) in &self.meta {
            if !valid_token(k) || !valid_token(v) {
                return Err(bad(format!("invalid meta entry {k:?} = {v:?}")));
            }
        }
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            if !valid_token(name) {
                return Err(bad(format!("invalid tensor name {name:?}")));
            }
            if t.rank() > MAX_RANK {
                return Err(bad(format!("tensor {name:?} has rank {}", t.rank())));
            }
            if self.tensors[..i].iter().any(|(n, _)| n == name) {
                return Err(bad(format!("duplicate tensor {name:?}")));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<String> {
        self.validate()?;
        let mut out = format!("{MAGIC} {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            out.push_str("tensor ");
            out.push_str(name);
            for d in t.shape() {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn blob(&self) -> Vec<u8> {
        let total: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(total * 8);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a manifest and its blob. Rejects anything malformed, including
    /// trailing or missing blob bytes.
    pub fn from_parts(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint manifest"));
        }
        match head.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) if head.next().is_none() => {}
            _ => return Err(bad(format!("unsupported header {header:?}"))),
        }

        let mut kind: Option<String> = None;
        let mut meta = Vec::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut ended = false;
        let mut total: usize = 0;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(bad(format!("line {lineno}: content after end")));
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("kind") => {
                    let k = parts
                        .next()
                        .ok_or_else(|| bad(format!("line {lineno}: empty kind")))?;
                    if kind.is_some() || parts.next().is_some() {
                        return Err(bad(format!("line {lineno}: malformed kind")));
                    }
                    kind = Some(k.to_string());
                }
                Some("meta") => {
                    let (Some(k), Some(v), None) = (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(bad(format!("line {lineno}: meta needs key and value")));
                    };
                    if meta.iter().any(|(mk, _): &(String, String)| mk == k) {
                        return Err(bad(format!("line {lineno}: duplicate meta {k:?}")));
                    }
                    meta.push((k.to_string(), v.to_string()));
                }
                Some("tensor") => {
                    let name = parts
                        .next()
                        .ok_or_else(|| bad(format!("line {lineno}: tensor needs a name")))?;
                    if shapes.iter().any(|(n, _)| n == name) {
                        return Err(bad(format!("line {lineno}: duplicate tensor {name:?}")));
                    }
                    let dims = parts
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| bad(format!("line {lineno}: bad dimension {d:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if dims.len() > MAX_RANK {
                        return Err(bad(format!("line {lineno}: rank {} too large", dims.len())));
                    }
                    let n = dims
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .ok_or_else(|| bad(format!("line {lineno}: size overflow")))?;
                    total = total
                        .checked_add(n)
                        .filter(|t| t.checked_mul(8).is_some_and(|b| b <= blob.len()))
                        .ok_or_else(|| bad(format!("line {lineno}: blob too short")))?;
                    shapes.push((name.to_string(), dims));
                }
                Some("end") if parts.next().is_none() => ended = true,
                None => {}
                Some(other) => {
                    return Err(bad(format!("line {lineno}: unknown directive {other:?}")))
                }
            }
        }
        if !ended {
            return Err(bad("manifest has no end line"));
        }
        let kind = kind.ok_or_else(|| bad("manifest has no kind"))?;
        if total * 8 != blob.len() {
            return Err(bad(format!(
                "blob has {} bytes, manifest describes {}",
                blob.len(),
                total * 8
            )));
        }

        let mut offset = 0;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, dims) in shapes {
            let n: usize = dims.iter().product();
            let data = blob[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            offset += n * 8;
            tensors.push((name, Tensor::new(dims, data)?));
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{stem}.manifest")),
            dir.join(format!("{stem}.bin")),
        )
    }

    /// Writes `{stem}.manifest` and `{stem}.bin` into `dir`. Existing files
    /// are never replaced.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let manifest = self.manifest()?;
        std::fs::create_dir_all(dir)?;
        let (mpath, bpath) = Self::paths(dir, stem);
        for (path, bytes) in [(&bpath, self.blob()), (&mpath, manifest.into_bytes())] {
            let mut f = OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(path)
                .map_err(|e| bad(format!("{}: {e}", path.display())))?;
            f.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let (mpath, bpath) = Self::paths(dir, stem);
        let manifest = std::fs::read_to_string(&mpath)
            .map_err(|e| bad(format!("{}: {e}", mpath.display())))?;
        let blob = std::fs::read(&bpath).map_err(|e| bad(format!("{}: {e}", bpath.display())))?;
        Self::from_parts(&manifest, &blob)
    }
}
