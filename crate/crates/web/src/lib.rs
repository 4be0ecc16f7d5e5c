//! WebAssembly bindings for the trailcast browser demo.
//!
//! Each operation has a plain Rust form returning `Result<String, String>`
//! and a `wasm_bindgen` export with the same name plus a `js` prefix.

use serde::Serialize;
use trailcast::corpus::{LatLon, Poi, PoiId, PoiIndex, UserId};
use trailcast::eval::{aggregate, render_report, Averaging, ReportFormat, Scope, StepOutcome};
use trailcast::features::{build_all_candidates, build_candidates};
use trailcast::memory::{cosine, Embedder, HashEmbedder, Level, MemoryStore, ReflectionRecord};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct RankedPoi<'a> {
    id: &'a str,
    category: &'a str,
    distance_km: f64,
}

#[derive(Serialize)]
struct Retrieved<'a> {
    lesson: &'a str,
    score: f64,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Reads `id,category,lat,lon` rows; a header row is allowed.
pub fn parse_pois(csv_text: &str) -> Result<PoiIndex, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let mut pois = PoiIndex::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(err)?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 4 {
            return Err(format!("line {}: expected id,category,lat,lon", i + 1));
        }
        let (lat, lon) = match (row[2].parse::<f64>(), row[3].parse::<f64>()) {
            (Ok(lat), Ok(lon)) => (lat, lon),
            _ if i == 0 => continue,
            _ => return Err(format!("line {}: bad coordinates", i + 1)),
        };
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(format!("line {}: coordinates out of range", i + 1));
        }
        let id = PoiId(row[0].to_string());
        pois.insert(
            id.clone(),
            Poi {
                id,
                category: row[1].to_string(),
                lat,
                lon,
            },
        );
    }
    if pois.is_empty() {
        return Err("no places given".into());
    }
    Ok(pois)
}

/// Places nearest to (`lat`, `lon`) whose category is listed in
/// `categories` (comma separated, empty for all), as a JSON array.
pub fn rank_candidates(pois_csv: &str, lat: f64, lon: f64, categories: &str, cap: usize) -> Result<String, String> {
    let pois = parse_pois(pois_csv)?;
    let anchor = LatLon { lat, lon };
    let wanted: Vec<String> = categories
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    let set = if wanted.is_empty() {
        build_all_candidates(anchor, &pois, cap)
    } else {
        build_candidates(anchor, &wanted, &pois, cap).map_err(err)?
    };
    let ranked: Vec<RankedPoi> = set
        .items
        .iter()
        .map(|c| RankedPoi {
            id: &c.poi.id.0,
            category: &c.poi.category,
            distance_km: c.distance_km,
        })
        .collect();
    serde_json::to_string(&ranked).map_err(err)
}

/// The `n` lessons (one per line) most similar to `query`, best first, as
/// a JSON array of `{lesson, score}`.
pub fn retrieve_lessons(lessons: &str, query: &str, n: usize) -> Result<String, String> {
    let embedder = HashEmbedder::default();
    let texts: Vec<&str> = lessons.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let vectors = embedder.embed_batch(&texts).map_err(err)?;
    let mut memory = MemoryStore::new(embedder.dim());
    for (i, (text, embedding)) in texts.iter().zip(vectors).enumerate() {
        memory
            .push_reflection(ReflectionRecord {
                level: Level::Location,
                source_user: UserId("demo".into()),
                context_digest: text.to_string(),
                prediction: String::new(),
                actual: String::new(),
                lesson: text.to_string(),
                embedding,
                created_at: i as u64,
            })
            .map_err(err)?;
    }
    let q = embedder.embed(query).map_err(err)?;
    let hits = memory
        .retrieve_top_n(&q, Level::Location, n)
        .map_err(err)?
        .into_iter()
        .map(|r| {
            Ok(Retrieved {
                lesson: &r.lesson,
                score: cosine(&q, &r.embedding)?,
            })
        })
        .collect::<Result<Vec<_>, trailcast::memory::MemoryError>>()
        .map_err(err)?;
    serde_json::to_string(&hits).map_err(err)
}

/// Accuracy and MRR over outcome records (JSON lines; stream header lines
/// are skipped), rendered as `table` or `jsonl`.
pub fn score_outcomes(jsonl: &str, format: &str, macro_average: bool) -> Result<String, String> {
    let format: ReportFormat = format.parse().map_err(err)?;
    let mut outcomes = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.contains("\"format\"") {
            continue;
        }
        let o: StepOutcome = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        outcomes.push(o);
    }
    let scope = Scope {
        dataset: "demo".into(),
        split: "test".into(),
        cohort: String::new(),
        variant: "pasted".into(),
        config_digest: "-".into(),
    };
    let averaging = if macro_average { Averaging::Macro } else { Averaging::Micro };
    let reports = aggregate(&outcomes, None, &scope, averaging).map_err(err)?;
    render_report(&reports, format).map_err(err)
}

#[wasm_bindgen(js_name = rankCandidates)]
pub fn js_rank_candidates(pois_csv: &str, lat: f64, lon: f64, categories: &str, cap: usize) -> Result<String, JsError> {
    rank_candidates(pois_csv, lat, lon, categories, cap).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = retrieveLessons)]
pub fn js_retrieve_lessons(lessons: &str, query: &str, n: usize) -> Result<String, JsError> {
    retrieve_lessons(lessons, query, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = scoreOutcomes)]
pub fn js_score_outcomes(jsonl: &str, format: &str, macro_average: bool) -> Result<String, JsError> {
    score_outcomes(jsonl, format, macro_average).map_err(|e| JsError::new(&e))
}
