//! Append-only audit trail for gateway decisions.
//!
//! Every record carries a strictly increasing sequence number, a wall-clock
//! timestamp, an event kind, and the digest of the payload the event is
//! about. Records are kept in memory and, when a path is given, mirrored as
//! one line per record to a file opened in append mode. Reopening an
//! existing log resumes the sequence where it left off; a file whose
//! sequence numbers ever fail to increase is refused.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::crypto::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    CommandPassed,
    CommandRectified,
    CommandDenied,
    UpdateAccepted,
    UpdateRejected,
    LoadFailure,
    BypassDenied,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AuditKind::CommandPassed => "COMMAND_PASSED",
            AuditKind::CommandRectified => "COMMAND_RECTIFIED",
            AuditKind::CommandDenied => "COMMAND_DENIED",
            AuditKind::UpdateAccepted => "UPDATE_ACCEPTED",
            AuditKind::UpdateRejected => "UPDATE_REJECTED",
            AuditKind::LoadFailure => "LOAD_FAILURE",
            AuditKind::BypassDenied => "BYPASS_DENIED",
        };
        f.write_str(name)
    }
}

impl FromStr for AuditKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, AuditError> {
        Ok(match s {
            "COMMAND_PASSED" => AuditKind::CommandPassed,
            "COMMAND_RECTIFIED" => AuditKind::CommandRectified,
            "COMMAND_DENIED" => AuditKind::CommandDenied,
            "UPDATE_ACCEPTED" => AuditKind::UpdateAccepted,
            "UPDATE_REJECTED" => AuditKind::UpdateRejected,
            "LOAD_FAILURE" => AuditKind::LoadFailure,
            "BYPASS_DENIED" => AuditKind::BypassDenied,
            other => return Err(AuditError::Malformed(format!("unknown kind `{other}`"))),
        })
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("malformed audit line: {0}")]
    Malformed(String),
    #[error("sequence regressed: {prev} then {next}")]
    SequenceRegression { prev: u64, next: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub seq: u64,
    pub unix_millis: u64,
    pub kind: AuditKind,
    /// Digest of whatever the event concerns: a command encoding, a bundle,
    /// a manifest, or the name of a refused requestor.
    pub subject: Digest,
    /// Free-text elaboration; may be empty.
    pub detail: String,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "{} {} {} {}",
            self.seq, self.unix_millis, self.kind, self.subject
        );
        if !self.detail.is_empty() {
            line.push(' ');
            line.push_str(&self.detail);
        }
        line
    }

    pub fn parse(line: &str) -> Result<Self, AuditError> {
        let mut parts = line.splitn(5, ' ');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| AuditError::Malformed(format!("missing {name}")))
        };
        let seq = field("seq")?
            .parse()
            .map_err(|_| AuditError::Malformed("bad seq".into()))?;
        let unix_millis = field("timestamp")?
            .parse()
            .map_err(|_| AuditError::Malformed("bad timestamp".into()))?;
        let kind = field("kind")?.parse()?;
        let subject = field("subject")?
            .parse()
            .map_err(|_| AuditError::Malformed("bad subject digest".into()))?;
        let detail = parts.next().unwrap_or("").to_string();
        Ok(AuditRecord {
            seq,
            unix_millis,
            kind,
            subject,
            detail,
        })
    }
}

/// Checks the append-only invariant over a record slice.
pub fn check_sequence(records: &[AuditRecord]) -> Result<(), AuditError> {
    for pair in records.windows(2) {
        if pair[1].seq <= pair[0].seq {
            return Err(AuditError::SequenceRegression {
                prev: pair[0].seq,
                next: pair[1].seq,
            });
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct AuditLog {
    next_seq: u64,
    records: Vec<AuditRecord>,
    file: Option<File>,
}

/// The log is shared between listener threads and the broker.
pub type SharedAudit = Arc<Mutex<AuditLog>>;

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            next_seq: 1,
            records: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a file-backed log, replaying existing lines so
    /// appends continue the sequence.
    pub fn at_path(path: &Path) -> Result<Self, AuditError> {
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                records.push(AuditRecord::parse(&line)?);
            }
            check_sequence(&records)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let next_seq = records.last().map(|r| r.seq + 1).unwrap_or(1);
        Ok(AuditLog {
            next_seq,
            records,
            file: Some(file),
        })
    }

    pub fn shared(self) -> SharedAudit {
        Arc::new(Mutex::new(self))
    }

    pub fn append(
        &mut self,
        kind: AuditKind,
        subject: Digest,
        detail: &str,
    ) -> Result<&AuditRecord, AuditError> {
        let record = AuditRecord {
            seq: self.next_seq,
            unix_millis: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            kind,
            subject,
            detail: detail.to_string(),
        };
        if let Some(file) = &mut self.file {
            writeln!(file, "{}", record.to_line())?;
            file.flush()?;
        }
        self.next_seq += 1;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Appends to a shared log, panicking only on a poisoned lock. File-backed
/// append failures are fatal for the gateway and surface as panics here by
/// design: an enforcement point that cannot record what it did must stop.
pub(crate) fn append_shared(audit: &SharedAudit, kind: AuditKind, subject: Digest, detail: &str) {
    audit
        .lock()
        .expect("audit lock")
        .append(kind, subject, detail)
        .expect("audit append");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    #[test]
    fn sequence_is_strictly_increasing() {
        let mut log = AuditLog::in_memory();
        for i in 0..5 {
            log.append(AuditKind::CommandPassed, hash(&[i]), "").unwrap();
        }
        let seqs: Vec<u64> = log.records().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
        check_sequence(log.records()).unwrap();
    }

    #[test]
    fn line_round_trip() {
        let record = AuditRecord {
            seq: 7,
            unix_millis: 1_700_000_000_123,
            kind: AuditKind::UpdateRejected,
            subject: hash(b"bundle"),
            detail: "rollback: offered 2, active 5".to_string(),
        };
        assert_eq!(AuditRecord::parse(&record.to_line()).unwrap(), record);

        let bare = AuditRecord {
            detail: String::new(),
            ..record
        };
        assert_eq!(AuditRecord::parse(&bare.to_line()).unwrap(), bare);
    }

    #[test]
    fn file_backed_log_resumes_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        {
            let mut log = AuditLog::at_path(&path).unwrap();
            log.append(AuditKind::CommandPassed, hash(b"a"), "").unwrap();
            log.append(AuditKind::CommandDenied, hash(b"b"), "blocked")
                .unwrap();
        }
        let mut log = AuditLog::at_path(&path).unwrap();
        assert_eq!(log.len(), 2);
        let r = log
            .append(AuditKind::UpdateAccepted, hash(b"c"), "version 2")
            .unwrap();
        assert_eq!(r.seq, 3);
        check_sequence(log.records()).unwrap();
    }

    #[test]
    fn regressed_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        let good = AuditRecord {
            seq: 5,
            unix_millis: 1,
            kind: AuditKind::CommandPassed,
            subject: hash(b"x"),
            detail: String::new(),
        };
        let bad = AuditRecord { seq: 5, ..good.clone() };
        std::fs::write(&path, format!("{}\n{}\n", good.to_line(), bad.to_line())).unwrap();
        assert!(matches!(
            AuditLog::at_path(&path).unwrap_err(),
            AuditError::SequenceRegression { prev: 5, next: 5 }
        ));
    }

    #[test]
    fn malformed_lines_are_refused() {
        assert!(AuditRecord::parse("not an audit line").is_err());
        assert!(AuditRecord::parse("1 2 NOT_A_KIND deadbeef").is_err());
        assert!(AuditRecord::parse("1 2 COMMAND_PASSED nothex").is_err());
    }
}
