//! Persistent registration records for vehicles and users.
//!
//! The file store is append-only text, one record per line:
//!
//! ```text
//! vehicle 7 <sha256-hex> 1,2
//! user 1 <sha256-hex> 7
//! ```
//!
//! The last column lists linked ids (a vehicle's owners, a user's vehicles)
//! or `-` when empty. Lines starting with `#` are ignored.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartyKind {
    Vehicle,
    User,
}

impl PartyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartyKind::Vehicle => "vehicle",
            PartyKind::User => "user",
        }
    }
}

impl std::str::FromStr for PartyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(PartyKind::Vehicle),
            "user" => Ok(PartyKind::User),
            other => Err(format!("unknown party kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub kind: PartyKind,
    pub id: u32,
    pub credential_hash: String,
    pub links: Vec<u32>,
}

impl Registration {
    pub fn new(kind: PartyKind, id: u32, credentials: &str, links: Vec<u32>) -> Self {
        Self {
            kind,
            id,
            credential_hash: hash_credentials(credentials),
            links,
        }
    }

    pub fn to_line(&self) -> String {
        let links = if self.links.is_empty() {
            "-".to_string()
        } else {
            self.links.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        };
        format!("{} {} {} {}", self.kind.as_str(), self.id, self.credential_hash, links)
    }

    pub fn parse_line(line: &str) -> Result<Self, RegistryError> {
        let bad = || RegistryError::Parse(line.to_string());
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let id = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let credential_hash = parts.next().ok_or_else(bad)?.to_string();
        let links = match parts.next().ok_or_else(bad)? {
            "-" => Vec::new(),
            list => list
                .split(',')
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?,
        };
        if parts.next().is_some() || credential_hash.len() != 64 {
            return Err(bad());
        }
        Ok(Self {
            kind,
            id,
            credential_hash,
            links,
        })
    }

    pub fn check(&self, credentials: &str) -> bool {
        hash_credentials(credentials) == self.credential_hash
    }
}

pub fn hash_credentials(credentials: &str) -> String {
    hex::encode(Sha256::digest(credentials.as_bytes()))
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("already-registered: {0} {1}")]
    AlreadyRegistered(&'static str, u32),
    #[error("malformed registry line {0:?}")]
    Parse(String),
    #[error("registry store: {0}")]
    Io(#[from] io::Error),
}

pub trait RegistryStore: Send {
    fn load(&mut self) -> Result<Vec<Registration>, RegistryError>;
    fn append(&mut self, r: &Registration) -> Result<(), RegistryError>;
}

#[derive(Debug, Clone, Default)]
pub struct MemRegistry {
    records: Vec<Registration>,
}

impl MemRegistry {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RegistryStore for MemRegistry {
    fn load(&mut self) -> Result<Vec<Registration>, RegistryError> {
        Ok(self.records.clone())
    }

    fn append(&mut self, r: &Registration) -> Result<(), RegistryError> {
        self.records.push(r.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FileRegistry {
    path: PathBuf,
}

impl FileRegistry {
    pub fn new(path: impl AsRef<Path>) -> Self {
        Self {
            path: path.as_ref().to_path_buf(),
        }
    }
}

impl RegistryStore for FileRegistry {
    fn load(&mut self) -> Result<Vec<Registration>, RegistryError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            out.push(Registration::parse_line(trimmed)?);
        }
        Ok(out)
    }

    fn append(&mut self, r: &Registration) -> Result<(), RegistryError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", r.to_line())?;
        f.sync_data()?;
        Ok(())
    }
}
