//! Canonical line-oriented corpus files: a header object with a schema
//! version, then one JSON record per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CheckIn, Corpus, CorpusError, CorpusSplits, Poi, PoiIndex, SplitReport, Trajectory};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<SplitReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CorpusLine {
    Poi(Poi),
    Checkin(CheckIn),
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    split: String,
    trajectory: Trajectory,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_lines<T: Serialize>(
    path: &Path,
    header: &Header,
    lines: impl Iterator<Item = T>,
) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let head = serde_json::to_string(header).expect("header serializes");
    writeln!(w, "{head}").map_err(|e| io_err(path, e))?;
    for line in lines {
        let s = serde_json::to_string(&line).expect("archive records serialize");
        writeln!(w, "{s}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
    format: &str,
) -> Result<(Header, Vec<T>), CorpusError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, reason: String| CorpusError::Archive {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .map_err(|e| io_err(path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| bad(1, format!("bad header: {e}")))?;
    if header.format != format {
        return Err(bad(1, format!("expected format {format}, found {}", header.format)));
    }
    if header.version != ARCHIVE_VERSION {
        return Err(bad(
            1,
            format!("schema version {} (expected {ARCHIVE_VERSION})", header.version),
        ));
    }
    let mut out = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        out.push(serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?);
    }
    if out.len() != header.records {
        return Err(bad(
            out.len() + 1,
            format!("expected {} records, found {}", header.records, out.len()),
        ));
    }
    Ok((header, out))
}

pub fn write_archive(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let header = Header {
        format: "trailcast-corpus".into(),
        version: ARCHIVE_VERSION,
        records: corpus.pois.len() + corpus.checkins.len(),
        report: None,
    };
    let lines = corpus
        .pois
        .values()
        .cloned()
        .map(CorpusLine::Poi)
        .chain(corpus.checkins.iter().cloned().map(CorpusLine::Checkin));
    write_lines(path, &header, lines)
}

pub fn read_archive(path: &Path) -> Result<Corpus, CorpusError> {
    let (_, lines) = read_lines::<CorpusLine>(path, "trailcast-corpus")?;
    let mut corpus = Corpus::default();
    for line in lines {
        match line {
            CorpusLine::Poi(p) => {
                corpus.pois.insert(p.id.clone(), p);
            }
            CorpusLine::Checkin(c) => corpus.checkins.push(c),
        }
    }
    Ok(corpus)
}

pub fn write_splits(path: &Path, splits: &CorpusSplits) -> Result<(), CorpusError> {
    let header = Header {
        format: "trailcast-splits".into(),
        version: ARCHIVE_VERSION,
        records: splits.train.len() + splits.valid.len() + splits.test.len(),
        report: Some(splits.report.clone()),
    };
    let tag = |name: &'static str, list: &[Trajectory]| {
        list.iter()
            .map(move |t| SplitLine {
                split: name.to_string(),
                trajectory: t.clone(),
            })
            .collect::<Vec<_>>()
    };
    let lines = tag("train", &splits.train)
        .into_iter()
        .chain(tag("valid", &splits.valid))
        .chain(tag("test", &splits.test));
    write_lines(path, &header, lines)
}

pub fn read_splits(path: &Path, pois: &PoiIndex) -> Result<CorpusSplits, CorpusError> {
    let (header, lines) = read_lines::<SplitLine>(path, "trailcast-splits")?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.into_iter().enumerate() {
        match line.split.as_str() {
            "train" => train.push(line.trajectory),
            "valid" => valid.push(line.trajectory),
            "test" => test.push(line.trajectory),
            other => {
                return Err(CorpusError::Archive {
                    path: path.display().to_string(),
                    line: i + 2,
                    reason: format!("unknown split {other:?}"),
                })
            }
        }
    }
    Ok(CorpusSplits::from_parts(
        train,
        valid,
        test,
        pois,
        header.report.unwrap_or_default(),
    ))
}
