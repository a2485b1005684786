//! Byte sinks behind a recorder segment.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub trait SegmentStore {
    /// Truncates the segment and writes a fresh header.
    fn reset(&mut self, header: &[u8]) -> io::Result<()>;
    fn append(&mut self, parts: &[&[u8]]) -> io::Result<()>;
    /// Current size in bytes.
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
    /// Full contents, or `None` for stores that only count bytes.
    fn contents(&mut self) -> io::Result<Option<Vec<u8>>>;
}

/// In-memory segment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemStore {
    bytes: Vec<u8>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl SegmentStore for MemStore {
    fn reset(&mut self, header: &[u8]) -> io::Result<()> {
        self.bytes.clear();
        self.bytes.extend_from_slice(header);
        Ok(())
    }

    fn append(&mut self, parts: &[&[u8]]) -> io::Result<()> {
        for p in parts {
            self.bytes.extend_from_slice(p);
        }
        Ok(())
    }

    fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn contents(&mut self) -> io::Result<Option<Vec<u8>>> {
        Ok(Some(self.bytes.clone()))
    }
}

/// Tracks size only; used for storage accounting at paper scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountingStore {
    len: u64,
}

impl SegmentStore for CountingStore {
    fn reset(&mut self, header: &[u8]) -> io::Result<()> {
        self.len = header.len() as u64;
        Ok(())
    }

    fn append(&mut self, parts: &[&[u8]]) -> io::Result<()> {
        self.len += parts.iter().map(|p| p.len() as u64).sum::<u64>();
        Ok(())
    }

    fn len(&self) -> u64 {
        self.len
    }

    fn contents(&mut self) -> io::Result<Option<Vec<u8>>> {
        Ok(None)
    }
}

/// Segment backed by a file on disk.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: BufWriter<File>,
    len: u64,
}

impl FileStore {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        Ok(Self {
            path,
            file: BufWriter::new(file),
            len: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl SegmentStore for FileStore {
    fn reset(&mut self, header: &[u8]) -> io::Result<()> {
        self.file.flush()?;
        let f = self.file.get_mut();
        f.set_len(0)?;
        f.seek(SeekFrom::Start(0))?;
        self.file.write_all(header)?;
        self.len = header.len() as u64;
        Ok(())
    }

    fn append(&mut self, parts: &[&[u8]]) -> io::Result<()> {
        for p in parts {
            self.file.write_all(p)?;
            self.len += p.len() as u64;
        }
        Ok(())
    }

    fn len(&self) -> u64 {
        self.len
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        self.file.get_ref().sync_data()
    }

    fn contents(&mut self) -> io::Result<Option<Vec<u8>>> {
        self.file.flush()?;
        std::fs::read(&self.path).map(Some)
    }
}
