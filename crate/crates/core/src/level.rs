//! Cassandra-style per-operation consistency levels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How many replicas a read waits for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReadLevel {
    One,
    Quorum,
    All,
}

/// How many replicas a write waits for. `Any` is the weakest and is only valid for writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WriteLevel {
    Any,
    One,
    Quorum,
    All,
}

/// Either side of a level, as accepted by [`required_acks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckLevel {
    Any,
    One,
    Quorum,
    All,
}

/// Which operation an [`AckLevel`] is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write,
}

impl From<ReadLevel> for AckLevel {
    fn from(l: ReadLevel) -> Self {
        match l {
            ReadLevel::One => AckLevel::One,
            ReadLevel::Quorum => AckLevel::Quorum,
            ReadLevel::All => AckLevel::All,
        }
    }
}

impl From<WriteLevel> for AckLevel {
    fn from(l: WriteLevel) -> Self {
        match l {
            WriteLevel::Any => AckLevel::Any,
            WriteLevel::One => AckLevel::One,
            WriteLevel::Quorum => AckLevel::Quorum,
            WriteLevel::All => AckLevel::All,
        }
    }
}

/// Number of replica acknowledgements an operation at `level` waits for.
///
/// `ANY` counts as a single ack; requesting it for a read is an error.
pub fn required_acks(level: AckLevel, kind: OpKind, replica_count: usize) -> Result<usize> {
    if replica_count == 0 {
        return Err(Error::Config("replica_count must be at least 1".into()));
    }
    Ok(match (level, kind) {
        (AckLevel::Any, OpKind::Read) => return Err(Error::InvalidReadLevel("ANY".into())),
        (AckLevel::Any, OpKind::Write) | (AckLevel::One, _) => 1,
        (AckLevel::Quorum, _) => replica_count / 2 + 1,
        (AckLevel::All, _) => replica_count,
    })
}

impl ReadLevel {
    pub const ALL: [ReadLevel; 3] = [ReadLevel::One, ReadLevel::Quorum, ReadLevel::All];

    pub fn acks(self, replica_count: usize) -> usize {
        required_acks(self.into(), OpKind::Read, replica_count).expect("read levels are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            ReadLevel::One => "ONE",
            ReadLevel::Quorum => "QUORUM",
            ReadLevel::All => "ALL",
        }
    }
}

impl WriteLevel {
    pub const ALL: [WriteLevel; 4] = [
        WriteLevel::Any,
        WriteLevel::One,
        WriteLevel::Quorum,
        WriteLevel::All,
    ];

    pub fn acks(self, replica_count: usize) -> usize {
        required_acks(self.into(), OpKind::Write, replica_count).expect("write levels are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            WriteLevel::Any => "ANY",
            WriteLevel::One => "ONE",
            WriteLevel::Quorum => "QUORUM",
            WriteLevel::All => "ALL",
        }
    }
}

impl FromStr for ReadLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ONE" => Ok(ReadLevel::One),
            "QUORUM" => Ok(ReadLevel::Quorum),
            "ALL" => Ok(ReadLevel::All),
            other => Err(Error::InvalidReadLevel(other.to_string())),
        }
    }
}

impl FromStr for WriteLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ANY" => Ok(WriteLevel::Any),
            "ONE" => Ok(WriteLevel::One),
            "QUORUM" => Ok(WriteLevel::Quorum),
            "ALL" => Ok(WriteLevel::All),
            other => Err(Error::Config(format!("unknown write level {other:?}"))),
        }
    }
}

/// A combined (read, write) level. Ordering is lexicographic on (read, write),
/// which is also the weakest-first order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConsistencyLevel {
    pub read: ReadLevel,
    pub write: WriteLevel,
}

impl ConsistencyLevel {
    pub const COUNT: usize = 12;

    pub const fn new(read: ReadLevel, write: WriteLevel) -> Self {
        ConsistencyLevel { read, write }
    }

    /// All 12 combinations, weakest first.
    pub fn all() -> [ConsistencyLevel; Self::COUNT] {
        let mut out = [ConsistencyLevel::new(ReadLevel::One, WriteLevel::Any); Self::COUNT];
        for (i, r) in ReadLevel::ALL.into_iter().enumerate() {
            for (j, w) in WriteLevel::ALL.into_iter().enumerate() {
                out[i * 4 + j] = ConsistencyLevel::new(r, w);
            }
        }
        out
    }

    /// Position in [`ConsistencyLevel::all`].
    pub fn index(self) -> usize {
        let r = ReadLevel::ALL.iter().position(|&r| r == self.read).unwrap();
        let w = WriteLevel::ALL.iter().position(|&w| w == self.write).unwrap();
        r * 4 + w
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then(|| Self::all()[i])
    }

    /// Whether read and write quorums are guaranteed to intersect.
    pub fn is_strong(self, replica_count: usize) -> bool {
        self.read.acks(replica_count) + self.write.acks(replica_count) > replica_count
    }
}

impl fmt::Display for ConsistencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.read.name(), self.write.name())
    }
}

impl FromStr for ConsistencyLevel {
    type Err = Error;

    /// Parses `READLEVEL/WRITELEVEL`, e.g. `QUORUM/ALL`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, w) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("expected READ/WRITE level, got {s:?}")))?;
        Ok(ConsistencyLevel::new(r.parse()?, w.parse()?))
    }
}
