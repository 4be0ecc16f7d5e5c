use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MemoryError, MemoryStore, PooledTrajectory, ReflectionRecord};

pub const MEMORY_VERSION: u32 = 1;
const FORMAT: &str = "trailcast-memory";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    records: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Reflection(ReflectionRecord),
    Trajectory(PooledTrajectory),
}

fn io(path: &Path, e: impl std::fmt::Display) -> MemoryError {
    MemoryError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Writes the store as a header line followed by one JSON object per
/// record: activity reflections, location reflections, then the pool.
pub fn persist(store: &MemoryStore, path: &Path) -> Result<(), MemoryError> {
    use super::Level::{Activity, Location};
    let header = Header {
        format: FORMAT.into(),
        version: MEMORY_VERSION,
        dim: store.dim(),
        records: store.records(Activity).len()
            + store.records(Location).len()
            + store.trajectory_pool().len(),
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| io(path, e))?);
    let mut put = |s: String| writeln!(w, "{s}").map_err(|e| io(path, e));
    put(serde_json::to_string(&header).expect("header serializes"))?;
    let lines = store
        .records(Activity)
        .iter()
        .chain(store.records(Location))
        .cloned()
        .map(Line::Reflection)
        .chain(store.trajectory_pool().iter().cloned().map(Line::Trajectory));
    for line in lines {
        put(serde_json::to_string(&line).expect("memory records serialize"))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn load(path: &Path) -> Result<MemoryStore, MemoryError> {
    let corrupt = |line: usize, reason: String| MemoryError::Corrupt {
        path: path.display().to_string(),
        line,
        reason,
    };
    let file = fs::File::open(path).map_err(|e| io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| corrupt(1, "empty file".into()))?
        .map_err(|e| io(path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(corrupt(1, format!("not a memory file (format {:?})", header.format)));
    }
    if header.version != MEMORY_VERSION {
        return Err(MemoryError::Version {
            path: path.display().to_string(),
            found: header.version,
            expected: MEMORY_VERSION,
        });
    }
    let mut store = MemoryStore::new(header.dim);
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| io(path, e))?;
        let parsed: Line = serde_json::from_str(&line).map_err(|e| corrupt(i + 2, e.to_string()))?;
        match parsed {
            Line::Reflection(r) => store.push_reflection(r),
            Line::Trajectory(t) => store.push_trajectory(t),
        }
        .map_err(|e| corrupt(i + 2, e.to_string()))?;
        count += 1;
    }
    if count != header.records {
        return Err(corrupt(
            count + 1,
            format!("expected {} records, found {count}", header.records),
        ));
    }
    Ok(store)
}
