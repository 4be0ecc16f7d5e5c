//! Turns free-form model output into ranked category and POI lists.
//!
//! Extraction tries, in order: a fenced or bracketed JSON list, numbered or
//! bulleted lines, then a comma/semicolon/newline separated list. The first
//! strategy that yields at least one valid entry wins.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::PoiId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    StructuredBlock,
    Enumerated,
    CommaList,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub strategy: Option<Strategy>,
    /// Extracted items that matched nothing in the allowed set.
    pub unmatched: Vec<String>,
    pub duplicates: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCategoryResponse {
    pub ranked_categories: Vec<String>,
    pub raw: String,
    pub report: ParseReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPoiResponse {
    pub ranked_pois: Vec<PoiId>,
    pub raw: String,
    pub report: ParseReport,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("no valid entries in response (unmatched: {unmatched:?})")]
    NoMatches { unmatched: Vec<String> },
    #[error("limit must be at least 1")]
    InvalidLimit,
    #[error("nothing to match against")]
    EmptyUniverse,
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").expect("valid regex"))
}

fn enum_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:\d+\s*[.):]|[-*•+]|\(\d+\))\s+(.+?)\s*$").expect("valid regex")
    })
}

fn json_items(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(|x| match x {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .collect(),
        ),
        Value::Object(map) => map.values().find_map(json_items),
        _ => None,
    }
}

fn structured(text: &str) -> Option<Vec<String>> {
    for cap in fence_re().captures_iter(text) {
        if let Ok(v) = serde_json::from_str::<Value>(cap[1].trim()) {
            if let Some(items) = json_items(&v) {
                return Some(items);
            }
        }
    }
    let (start, end) = (text.find('[')?, text.rfind(']')?);
    if start < end {
        if let Ok(v) = serde_json::from_str::<Value>(&text[start..=end]) {
            return json_items(&v);
        }
    }
    None
}

fn enumerated(text: &str) -> Option<Vec<String>> {
    let items: Vec<String> = text
        .lines()
        .filter_map(|l| enum_re().captures(l).map(|c| c[1].to_string()))
        .collect();
    (!items.is_empty()).then_some(items)
}

fn comma_list(text: &str) -> Option<Vec<String>> {
    let items: Vec<String> = text
        .split([',', ';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    (!items.is_empty()).then_some(items)
}

/// Lowercase, drop markdown/quote decoration and collapse whitespace.
fn normalize(s: &str) -> String {
    let stripped: String = s.chars().filter(|c| !matches!(c, '*' | '`' | '"')).collect();
    let trimmed = stripped.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '\'' | '.' | ',' | ';' | ':' | '!' | '?')
    });
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// The item itself, then progressively shorter heads for items that carry
/// an explanation ("Gym - because ...", "Gym (0.4 km)", "Gym: ...").
fn heads(item: &str) -> Vec<&str> {
    let mut out = vec![item];
    for sep in [" - ", " – ", " — ", " (", ":", " |", " because"] {
        if let Some(i) = item.find(sep) {
            out.push(&item[..i]);
        }
    }
    out
}

/// Ranks `items` against `lookup`, keeping first occurrences and the order
/// of appearance.
fn collect<'a>(
    items: Vec<String>,
    limit: usize,
    mut lookup: impl FnMut(&str) -> Option<&'a str>,
) -> (Vec<&'a str>, ParseReport) {
    let mut report = ParseReport::default();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for item in items {
        match lookup(&item) {
            Some(hit) if seen.insert(hit) => out.push(hit),
            Some(_) => report.duplicates += 1,
            None => report.unmatched.push(item),
        }
    }
    if out.len() > limit {
        report.truncated = out.len() - limit;
        out.truncate(limit);
    }
    (out, report)
}

type Extractor = fn(&str) -> Option<Vec<String>>;

fn ladder<'a>(
    text: &str,
    limit: usize,
    mut lookup: impl FnMut(&str) -> Option<&'a str>,
) -> Result<(Vec<&'a str>, ParseReport), ParseError> {
    let mut unmatched = Vec::new();
    let strategies: [(Strategy, Extractor); 3] = [
        (Strategy::StructuredBlock, structured),
        (Strategy::Enumerated, enumerated),
        (Strategy::CommaList, comma_list),
    ];
    for (strategy, extract) in strategies {
        let Some(items) = extract(text) else { continue };
        let (hits, mut report) = collect(items, limit, &mut lookup);
        if !hits.is_empty() {
            report.strategy = Some(strategy);
            return Ok((hits, report));
        }
        unmatched.extend(report.unmatched);
    }
    Err(ParseError::NoMatches { unmatched })
}

/// Extracts up to `k` categories from `text`, matched (case and whitespace
/// insensitively) against `category_set`.
pub fn parse_categories(
    text: &str,
    category_set: &BTreeSet<String>,
    k: usize,
) -> Result<ParsedCategoryResponse, ParseError> {
    if k == 0 {
        return Err(ParseError::InvalidLimit);
    }
    if category_set.is_empty() {
        return Err(ParseError::EmptyUniverse);
    }
    let by_norm: HashMap<String, &str> = category_set
        .iter()
        .map(|c| (normalize(c), c.as_str()))
        .collect();
    let (hits, report) = ladder(text, k, |item| {
        heads(item)
            .into_iter()
            .find_map(|h| by_norm.get(&normalize(h)).copied())
    })?;
    Ok(ParsedCategoryResponse {
        ranked_categories: hits.into_iter().map(str::to_string).collect(),
        raw: text.to_string(),
        report,
    })
}

/// Extracts up to `limit` POI ids from `text`; only ids in `candidates`
/// are kept.
pub fn parse_pois<'a>(
    text: &str,
    candidates: impl IntoIterator<Item = &'a PoiId>,
    limit: usize,
) -> Result<ParsedPoiResponse, ParseError> {
    if limit == 0 {
        return Err(ParseError::InvalidLimit);
    }
    let exact: BTreeMap<&str, &str> = candidates
        .into_iter()
        .map(|p| (p.0.as_str(), p.0.as_str()))
        .collect();
    if exact.is_empty() {
        return Err(ParseError::EmptyUniverse);
    }
    let folded: HashMap<String, &str> = exact.keys().map(|k| (k.to_lowercase(), *k)).collect();
    let find = |tok: &str| {
        let tok = tok.trim_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '`' | '"' | '\'' | '.' | ',' | ';' | ':')
        });
        exact
            .get(tok)
            .copied()
            .or_else(|| folded.get(&tok.to_lowercase()).copied())
    };
    let (hits, report) = ladder(text, limit, |item| {
        find(item).or_else(|| {
            item.split(|c: char| {
                c.is_whitespace() || matches!(c, ',' | ';' | '(' | ')' | '[' | ']' | '|' | '"' | '`' | '*')
            })
            .find_map(find)
        })
    })?;
    Ok(ParsedPoiResponse {
        ranked_pois: hits.into_iter().map(|s| PoiId(s.to_string())).collect(),
        raw: text.to_string(),
        report,
    })
}

/// Canonical answer rendering: a fenced JSON list.
pub fn render_answer<S: AsRef<str>>(items: &[S]) -> String {
    let list: Vec<&str> = items.iter().map(AsRef::as_ref).collect();
    format!(
        "```json\n{}\n```",
        serde_json::to_string(&list).expect("strings serialize")
    )
}
