use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::CorpusSplits;
use crate::eval::StepOutcome;

pub const OUTCOME_VERSION: u32 = 1;
const FORMAT: &str = "trailcast-outcomes";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeHeader {
    pub format: String,
    pub version: u32,
    pub phase: String,
    pub variant: String,
    pub config_digest: String,
    pub corpus_digest: String,
}

impl OutcomeHeader {
    pub fn new(phase: &str, variant: &str, config_digest: &str, corpus_digest: &str) -> Self {
        OutcomeHeader {
            format: FORMAT.into(),
            version: OUTCOME_VERSION,
            phase: phase.into(),
            variant: variant.into(),
            config_digest: config_digest.into(),
            corpus_digest: corpus_digest.into(),
        }
    }
}

/// Short hash identifying the exact trajectories of a split set.
pub fn corpus_digest(splits: &CorpusSplits) -> String {
    let bytes = serde_json::to_vec(&(&splits.train, &splits.valid, &splits.test))
        .expect("trajectories serialize");
    crate::digest_hex(&bytes)
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

/// Line writer for an outcome stream.
pub struct OutcomeWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl OutcomeWriter {
    /// Starts a fresh stream holding `header` and then `existing`.
    pub fn create(path: &Path, header: &OutcomeHeader, existing: &[StepOutcome]) -> Result<Self, PipelineError> {
        let file = fs::File::create(path).map_err(|e| io(path, e))?;
        let mut w = OutcomeWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(&serde_json::to_string(header).expect("header serializes"))?;
        for o in existing {
            w.write(o)?;
        }
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<(), PipelineError> {
        writeln!(self.out, "{s}").map_err(|e| io(&self.path, e))
    }

    pub fn write(&mut self, o: &StepOutcome) -> Result<(), PipelineError> {
        self.line(&serde_json::to_string(o).expect("outcomes serialize"))
    }

    pub fn flush(&mut self) -> Result<(), PipelineError> {
        self.out.flush().map_err(|e| io(&self.path, e))
    }
}

/// Reads a stream back. A torn final line (from an interrupted write) is
/// dropped; any other malformed line is an error.
pub fn read_outcomes(path: &Path) -> Result<(OutcomeHeader, Vec<StepOutcome>), PipelineError> {
    let file = fs::File::open(path).map_err(|e| io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io(path, e))?;
    let first = lines.first().ok_or_else(|| io(path, "empty outcome file"))?;
    let header: OutcomeHeader =
        serde_json::from_str(first).map_err(|e| io(path, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != OUTCOME_VERSION {
        return Err(PipelineError::Checkpoint(format!(
            "{} is {} v{}, expected {FORMAT} v{OUTCOME_VERSION}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut out = Vec::with_capacity(lines.len() - 1);
    for (i, l) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str(l) {
            Ok(o) => out.push(o),
            Err(_) if i + 1 == lines.len() => log::warn!("dropping torn last line of {}", path.display()),
            Err(e) => return Err(io(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok((header, out))
}

/// Progress marker written next to an outcome stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_digest: String,
    pub corpus_digest: String,
    pub phase: String,
    pub completed: usize,
    /// `(user, trajectory, step)` of the last completed step.
    pub last: Option<(String, String, usize)>,
}

impl Checkpoint {
    pub fn path_for(stream: &Path) -> PathBuf {
        let mut p = stream.as_os_str().to_owned();
        p.push(".ckpt");
        PathBuf::from(p)
    }

    pub fn load(path: &Path) -> Result<Option<Self>, PipelineError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(path, e)),
        }
    }

    /// Replaces the file atomically.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, serde_json::to_string(self).expect("checkpoint serializes"))
            .map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io(path, e))
    }

    /// Errors unless this checkpoint was written for the same run.
    pub fn ensure_matches(&self, header: &OutcomeHeader) -> Result<(), PipelineError> {
        let mismatch = |what: &str, a: &str, b: &str| {
            Err(PipelineError::Checkpoint(format!(
                "checkpoint {what} {a} does not match current {b}; delete the checkpoint to start over"
            )))
        };
        if self.config_digest != header.config_digest {
            return mismatch("config", &self.config_digest, &header.config_digest);
        }
        if self.corpus_digest != header.corpus_digest {
            return mismatch("corpus", &self.corpus_digest, &header.corpus_digest);
        }
        if self.phase != header.phase {
            return mismatch("phase", &self.phase, &header.phase);
        }
        Ok(())
    }
}
