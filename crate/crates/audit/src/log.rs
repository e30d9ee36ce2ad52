use crate::state::VerdictEvent;
use crate::AuditError;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

/// Append-only JSONL log of verdict events.
#[derive(Debug)]
pub struct EventLog {
    file: File,
    path: PathBuf,
}

impl EventLog {
    /// Opens (creating if needed) and reads back every event. A final line
    /// cut short by a crash is dropped; any other bad line is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<VerdictEvent>), AuditError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        let mut events: Vec<VerdictEvent> = Vec::new();
        let mut good_len = 0usize;
        let mut offset = 0usize;
        let mut segments = text.split_inclusive('\n').enumerate().peekable();
        while let Some((idx, seg)) = segments.next() {
            let complete = seg.ends_with('\n');
            let line = seg.trim_end_matches(['\n', '\r']);
            offset += seg.len();
            if line.trim().is_empty() {
                good_len = offset;
                continue;
            }
            match serde_json::from_str::<VerdictEvent>(line) {
                Ok(ev) => {
                    if let Some(prev) = events.last() {
                        if ev.seq <= prev.seq {
                            return Err(AuditError::CorruptLog {
                                line: idx + 1,
                                message: format!("sequence {} after {}", ev.seq, prev.seq),
                            });
                        }
                    }
                    events.push(ev);
                    good_len = offset;
                }
                Err(_) if !complete && segments.peek().is_none() => break,
                Err(e) => {
                    return Err(AuditError::CorruptLog {
                        line: idx + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        if good_len < text.len() {
            file.set_len(good_len as u64)?;
        } else if !text.is_empty() && !text.ends_with('\n') {
            file.write_all(b"\n")?;
        }
        file.seek(SeekFrom::End(0))?;
        file.sync_data()?;
        Ok((
            Self {
                file,
                path: path.to_owned(),
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one event and syncs it to disk before returning.
    pub fn append(&mut self, event: &VerdictEvent) -> Result<(), AuditError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}
