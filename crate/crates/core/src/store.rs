//! Line-delimited JSON demonstration store.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{ContextSchema, ContextVector, TipTrajectory, TrainingSet};
use crate::tasks::{DemoMeta, Demonstration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub task: ContextSchema,
    pub context: Vec<f64>,
    pub waypoints: TipTrajectory,
    pub meta: DemoMeta,
}

impl From<&Demonstration> for DemoRecord {
    fn from(d: &Demonstration) -> Self {
        Self {
            task: d.context.schema(),
            context: d.context.values().to_vec(),
            waypoints: d.trajectory.clone(),
            meta: d.meta.clone(),
        }
    }
}

impl TryFrom<DemoRecord> for Demonstration {
    type Error = Error;

    fn try_from(r: DemoRecord) -> Result<Self> {
        Ok(Demonstration { context: ContextVector::new(r.task, r.context)?, trajectory: r.waypoints, meta: r.meta })
    }
}

pub fn to_line(demo: &Demonstration) -> Result<String> {
    Ok(serde_json::to_string(&DemoRecord::from(demo))?)
}

/// Reads every record; blank lines are skipped.
pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<Demonstration>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse { path: path.to_path_buf(), line: n + 1, msg };
        let record: DemoRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        out.push(Demonstration::try_from(record).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

/// Replaces the file with the given records.
pub fn write_store(path: impl AsRef<Path>, demos: &[Demonstration]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for d in demos {
        text.push_str(&to_line(d)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Append-only writer. Each call writes and flushes one complete line.
#[derive(Debug)]
pub struct StoreWriter {
    path: PathBuf,
    count: usize,
}

impl StoreWriter {
    /// Opens (without truncating) and counts existing records.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let count = match std::fs::File::open(&path) {
            Ok(f) => BufReader::new(f).lines().map_while(|l| l.ok()).filter(|l| !l.trim().is_empty()).count(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(Self { path, count })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Returns the zero-based index of the new record.
    pub fn append(&mut self, demo: &Demonstration) -> Result<usize> {
        let line = to_line(demo)? + "\n";
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(self.count - 1)
    }
}

/// Training set from stored demonstrations.
pub fn training_set(demos: &[Demonstration]) -> Result<TrainingSet> {
    TrainingSet::new(demos.iter().map(|d| (d.context.clone(), d.trajectory.clone())))
}
