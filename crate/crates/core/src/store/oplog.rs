//! Append-only operation log.
//!
//! Each record is a little-endian `u32` byte length followed by that many
//! bytes of UTF-8 JSON. The first record is the header `{"epoch":n}` naming
//! the snapshot epoch the log extends; every later record encodes one
//! [`Op`]. A record cut short at the end of the file is a torn write; it is
//! dropped and the file truncated back to the last complete record.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Op, StoreError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    epoch: u64,
}

pub struct OpLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl OpLog {
    /// Opens (creating if absent) the log and returns every complete record.
    /// A log written for another snapshot epoch is stale and comes back
    /// empty.
    pub fn open(path: impl AsRef<Path>, epoch: u64) -> Result<(OpLog, Vec<Op>), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut header = None;
        let mut ops = Vec::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            if bytes.len() - pos < 4 {
                break;
            }
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            if bytes.len() - pos - 4 < len {
                break;
            }
            let payload = &bytes[pos + 4..pos + 4 + len];
            let text = std::str::from_utf8(payload)
                .map_err(|_| StoreError::CorruptLog(format!("record at byte {pos} is not UTF-8")))?;
            let bad = |e: serde_json::Error| StoreError::CorruptLog(format!("record at byte {pos}: {e}"));
            if header.is_none() {
                header = Some(serde_json::from_str::<Header>(text).map_err(bad)?.epoch);
            } else {
                ops.push(serde_json::from_str::<Op>(text).map_err(bad)?);
            }
            pos += 4 + len;
        }
        if pos < bytes.len() {
            log::warn!(
                "dropping {} bytes of torn record at end of {}",
                bytes.len() - pos,
                path.display()
            );
            file.set_len(pos as u64)?;
        }
        file.seek(SeekFrom::End(0))?;
        let mut log = OpLog {
            path,
            out: BufWriter::new(file),
        };
        match header {
            Some(e) if e == epoch => {}
            Some(e) => {
                log::warn!(
                    "discarding {} records of {}: epoch {e} is older than snapshot epoch {epoch}",
                    ops.len(),
                    log.path.display()
                );
                ops.clear();
                log.reset(epoch)?;
            }
            None => log.reset(epoch)?,
        }
        Ok((log, ops))
    }

    fn write_record(&mut self, json: &str) -> io::Result<()> {
        let len = u32::try_from(json.len()).map_err(|_| io::Error::other("record too large"))?;
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(json.as_bytes())?;
        self.out.flush()
    }

    pub fn append(&mut self, op: &Op) -> io::Result<()> {
        let json = serde_json::to_string(op).map_err(io::Error::other)?;
        self.write_record(&json)
    }

    /// Drops every record and starts a log for snapshot `epoch`.
    pub fn reset(&mut self, epoch: u64) -> io::Result<()> {
        self.out.flush()?;
        let file = self.out.get_mut();
        file.set_len(0)?;
        file.seek(SeekFrom::Start(0))?;
        let header = serde_json::to_string(&Header { epoch }).map_err(io::Error::other)?;
        self.write_record(&header)?;
        self.out.get_mut().sync_all()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
