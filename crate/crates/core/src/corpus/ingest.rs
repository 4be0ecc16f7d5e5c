use std::fs::File;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CheckIn, Corpus, CorpusError, LatLon, Poi, PoiId, UserId};

/// A column addressed by zero-based index or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TimestampFormat {
    /// Integer (or fractional) seconds since the epoch, UTC.
    #[default]
    Unix,
    /// A chrono format string. With `%z` the zone is taken from the value;
    /// otherwise the value is local time in the row's offset column (UTC
    /// when the schema has none).
    Pattern(String),
}

impl Serialize for TimestampFormat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TimestampFormat::Unix => s.serialize_str("unix"),
            TimestampFormat::Pattern(p) => s.serialize_str(p),
        }
    }
}

impl<'de> Deserialize<'de> for TimestampFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s.eq_ignore_ascii_case("unix") {
            TimestampFormat::Unix
        } else {
            TimestampFormat::Pattern(s)
        })
    }
}

/// Column mapping for a delimiter-separated check-in file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default = "default_true")]
    pub quoting: bool,
    pub user: ColumnRef,
    pub poi: ColumnRef,
    pub category: ColumnRef,
    pub lat: ColumnRef,
    pub lon: ColumnRef,
    pub timestamp: ColumnRef,
    /// Column holding the venue's UTC offset in minutes.
    #[serde(default)]
    pub utc_offset: Option<ColumnRef>,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Schema {
    /// Header-named columns `user,poi,category,lat,lon,timestamp` with unix
    /// seconds, the layout used by the bundled fixtures.
    pub fn canonical(delimiter: char) -> Self {
        Schema {
            delimiter,
            has_header: true,
            quoting: true,
            user: ColumnRef::Name("user".into()),
            poi: ColumnRef::Name("poi".into()),
            category: ColumnRef::Name("category".into()),
            lat: ColumnRef::Name("lat".into()),
            lon: ColumnRef::Name("lon".into()),
            timestamp: ColumnRef::Name("timestamp".into()),
            utc_offset: None,
            timestamp_format: TimestampFormat::Unix,
        }
    }
}

/// A row that failed validation. `line` is 1-based in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
}

struct Resolved {
    user: usize,
    poi: usize,
    category: usize,
    lat: usize,
    lon: usize,
    timestamp: usize,
    utc_offset: Option<usize>,
}

fn resolve(
    col: &ColumnRef,
    header: Option<&csv::StringRecord>,
) -> Result<usize, CorpusError> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|f| f.trim() == name))
            .ok_or_else(|| CorpusError::MissingColumn(name.clone())),
    }
}

/// Reads check-ins in file order. Rows that fail validation go to
/// `rejects`; the first occurrence of a POI id defines its category and
/// coordinates.
pub fn parse_checkins(path: &Path, schema: &Schema) -> Result<Ingested, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    if !schema.delimiter.is_ascii() {
        return Err(CorpusError::InvalidCoordinate(format!(
            "delimiter {:?} is not ASCII",
            schema.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .quoting(schema.quoting)
        .flexible(true)
        .from_reader(file);

    let header = if schema.has_header {
        Some(
            reader
                .headers()
                .map_err(|e| io_err(std::io::Error::other(e.to_string())))?
                .clone(),
        )
    } else {
        None
    };
    let cols = Resolved {
        user: resolve(&schema.user, header.as_ref())?,
        poi: resolve(&schema.poi, header.as_ref())?,
        category: resolve(&schema.category, header.as_ref())?,
        lat: resolve(&schema.lat, header.as_ref())?,
        lon: resolve(&schema.lon, header.as_ref())?,
        timestamp: resolve(&schema.timestamp, header.as_ref())?,
        utc_offset: schema
            .utc_offset
            .as_ref()
            .map(|c| resolve(c, header.as_ref()))
            .transpose()?,
    };

    let mut out = Ingested::default();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.rejects.push(Reject {
                    line,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&record, &cols, &schema.timestamp_format) {
            Ok((checkin, poi)) => {
                out.corpus.pois.entry(poi.id.clone()).or_insert(poi);
                out.corpus.checkins.push(checkin);
            }
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }

    if out.corpus.checkins.is_empty() {
        return Err(CorpusError::NoValidRows {
            path: path.display().to_string(),
            rejected: out.rejects.len(),
        });
    }
    Ok(out)
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str, String> {
    let v = record
        .get(idx)
        .ok_or_else(|| format!("missing {name} field"))?
        .trim();
    if v.is_empty() {
        return Err(format!("empty {name}"));
    }
    Ok(v)
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &Resolved,
    format: &TimestampFormat,
) -> Result<(CheckIn, Poi), String> {
    let user = field(record, cols.user, "user")?;
    let poi = field(record, cols.poi, "poi")?;
    let category = field(record, cols.category, "category")?;
    let lat: f64 = field(record, cols.lat, "lat")?
        .parse()
        .map_err(|_| "lat is not a number".to_string())?;
    let lon: f64 = field(record, cols.lon, "lon")?
        .parse()
        .map_err(|_| "lon is not a number".to_string())?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err("lat out of range".into());
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err("lon out of range".into());
    }
    let location = LatLon::new(lat, lon).map_err(|e| e.to_string())?;
    let utc_offset_min = match cols.utc_offset {
        Some(idx) => field(record, idx, "utc offset")?
            .parse::<i32>()
            .map_err(|_| "utc offset is not an integer".to_string())?,
        None => 0,
    };
    let raw_ts = field(record, cols.timestamp, "timestamp")?;
    let timestamp = parse_timestamp(raw_ts, format, utc_offset_min)?;

    Ok((
        CheckIn {
            user: UserId(user.to_string()),
            poi: PoiId(poi.to_string()),
            timestamp,
            utc_offset_min,
        },
        Poi {
            id: PoiId(poi.to_string()),
            category: category.to_string(),
            lat: location.lat,
            lon: location.lon,
        },
    ))
}

fn parse_timestamp(raw: &str, format: &TimestampFormat, offset_min: i32) -> Result<i64, String> {
    match format {
        TimestampFormat::Unix => {
            if let Ok(v) = raw.parse::<i64>() {
                return Ok(v);
            }
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v.floor() as i64)
                .ok_or_else(|| "timestamp is not a unix time".to_string())
        }
        TimestampFormat::Pattern(p) if p.contains("%z") || p.contains("%:z") => {
            DateTime::parse_from_str(raw, p)
                .map(|dt| dt.timestamp())
                .map_err(|e| format!("timestamp does not match {p:?}: {e}"))
        }
        TimestampFormat::Pattern(p) => NaiveDateTime::parse_from_str(raw, p)
            .map(|dt| dt.and_utc().timestamp() - i64::from(offset_min) * 60)
            .map_err(|e| format!("timestamp does not match {p:?}: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn maps_fields_directly() {
        let f = write_tmp(
            "user,poi,category,lat,lon,timestamp\nu1,p1,Coffee Shop,40.7,-74.0,1338000000\n",
        );
        let out = parse_checkins(f.path(), &Schema::canonical(',')).unwrap();
        assert_eq!(
            out.corpus.checkins,
            vec![CheckIn {
                user: "u1".into(),
                poi: "p1".into(),
                timestamp: 1_338_000_000,
                utc_offset_min: 0
            }]
        );
        assert_eq!(out.corpus.pois[&PoiId::from("p1")].category, "Coffee Shop");
        assert!(out.rejects.is_empty());
    }

    #[test]
    fn out_of_range_latitude_is_rejected() {
        let f = write_tmp(
            "user,poi,category,lat,lon,timestamp\n\
             u1,p1,Gym,95.0,-74.0,1338000000\n\
             u1,p2,Gym,40.0,-74.0,1338000100\n",
        );
        let out = parse_checkins(f.path(), &Schema::canonical(',')).unwrap();
        assert_eq!(out.corpus.checkins.len(), 1);
        assert_eq!(
            out.rejects,
            vec![Reject {
                line: 2,
                reason: "lat out of range".into()
            }]
        );
    }

    #[test]
    fn three_rows_one_malformed() {
        let f = write_tmp(
            "user,poi,category,lat,lon,timestamp\n\
             u1,p1,Gym,40.0,-74.0,100\n\
             u1,p2,Bar,40.0,-74.0,not-a-time\n\
             u2,p1,Gym,40.0,-74.0,300\n",
        );
        let out = parse_checkins(f.path(), &Schema::canonical(',')).unwrap();
        assert_eq!(out.corpus.checkins.len(), 2);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].line, 3);
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_tmp("user,poi,category,lat,lon,time\nu1,p1,Gym,1,1,1\n");
        match parse_checkins(f.path(), &Schema::canonical(',')) {
            Err(CorpusError::MissingColumn(c)) => assert_eq!(c, "timestamp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_valid_rows_is_an_error() {
        let f = write_tmp("user,poi,category,lat,lon,timestamp\nu1,p1,Gym,99,1,1\n");
        assert!(matches!(
            parse_checkins(f.path(), &Schema::canonical(',')),
            Err(CorpusError::NoValidRows { rejected: 1, .. })
        ));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            parse_checkins(Path::new("/nonexistent/checkins.csv"), &Schema::canonical(',')),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn foursquare_style_tsv_with_offsets() {
        // user, venue, category id, category, lat, lon, offset, utc time
        let f = write_tmp(
            "470\t49bbd6c0f964a520f4531fe3\t4bf58dd8d48988d127951735\tArts & Crafts Store\t40.71981037548853\t-74.00258103213994\t-240\tTue Apr 03 18:00:09 +0000 2012\n",
        );
        let schema = Schema {
            delimiter: '\t',
            has_header: false,
            quoting: false,
            user: ColumnRef::Index(0),
            poi: ColumnRef::Index(1),
            category: ColumnRef::Index(3),
            lat: ColumnRef::Index(4),
            lon: ColumnRef::Index(5),
            timestamp: ColumnRef::Index(7),
            utc_offset: Some(ColumnRef::Index(6)),
            timestamp_format: TimestampFormat::Pattern("%a %b %d %H:%M:%S %z %Y".into()),
        };
        let out = parse_checkins(f.path(), &schema).unwrap();
        let c = &out.corpus.checkins[0];
        assert_eq!(c.timestamp, 1_333_476_009);
        assert_eq!(c.utc_offset_min, -240);
        // 18:00 UTC is 14:00 in New York during DST.
        assert_eq!(c.local_minute_of_day(), 14 * 60);
    }

    #[test]
    fn naive_local_time_is_shifted_to_utc() {
        let f = write_tmp("u,p,c,1,1,2012-04-03 14:00:00,-240\n");
        let schema = Schema {
            delimiter: ',',
            has_header: false,
            quoting: true,
            user: ColumnRef::Index(0),
            poi: ColumnRef::Index(1),
            category: ColumnRef::Index(2),
            lat: ColumnRef::Index(3),
            lon: ColumnRef::Index(4),
            timestamp: ColumnRef::Index(5),
            utc_offset: Some(ColumnRef::Index(6)),
            timestamp_format: TimestampFormat::Pattern("%Y-%m-%d %H:%M:%S".into()),
        };
        let out = parse_checkins(f.path(), &schema).unwrap();
        assert_eq!(out.corpus.checkins[0].timestamp, 1_333_476_000);
    }
}
