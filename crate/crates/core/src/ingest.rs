//! Parsing and cleaning of raw taxi trip rows, and the canonical trip store.
//!
//! Cleaning applies its checks in a fixed order and counts each dropped row
//! under the first check it fails:
//!
//! 1. unparseable row → `rows_dropped_schema`
//! 2. missing, `(0, 0)` or off-globe coordinate → `rows_dropped_gps`
//! 3. endpoint outside the configured box → `rows_dropped_bbox`
//! 4. negative duration or passenger count outside `[1, 48]` → `rows_dropped_schema`

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::grid::BoundingBox;
use crate::{Error, Result, Timestamp};

pub const MAX_PASSENGERS: i64 = 48;

/// First line of every trip store.
pub const TRIP_STORE_MAGIC: &str = "# ridenet trip store v1";
const TRIP_STORE_HEADER: [&str; 7] = [
    "t_start", "t_end", "o_lon", "o_lat", "d_lon", "d_lat", "passengers",
];

/// Which header names hold the fields of a [`RawTripRow`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub pickup_time: String,
    pub pickup_lon: String,
    pub pickup_lat: String,
    pub dropoff_lon: String,
    pub dropoff_lat: String,
    pub passenger_count: String,
    pub trip_duration: String,
    pub avg_velocity: Option<String>,
    pub delimiter: char,
}

impl Default for ColumnMapping {
    /// Column names of the 2013 NYC TLC `trip_data` files.
    fn default() -> Self {
        ColumnMapping {
            pickup_time: "pickup_datetime".into(),
            pickup_lon: "pickup_longitude".into(),
            pickup_lat: "pickup_latitude".into(),
            dropoff_lon: "dropoff_longitude".into(),
            dropoff_lat: "dropoff_latitude".into(),
            passenger_count: "passenger_count".into(),
            trip_duration: "trip_time_in_secs".into(),
            avg_velocity: None,
            delimiter: ',',
        }
    }
}

/// One row as read from the source. Coordinates are `None` when the field is
/// empty; whether a row is usable is decided by [`Cleaner`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTripRow {
    pub pickup_time: Timestamp,
    pub pickup_lon: Option<f64>,
    pub pickup_lat: Option<f64>,
    pub dropoff_lon: Option<f64>,
    pub dropoff_lat: Option<f64>,
    pub passenger_count: i64,
    pub trip_duration: i64,
    pub avg_velocity: Option<f64>,
}

/// A row that could not be parsed. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowItem {
    Row(RawTripRow),
    Malformed(RowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
}

/// A cleaned trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub o: Point,
    pub d: Point,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    pub passengers: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: u64,
    pub rows_dropped_gps: u64,
    pub rows_dropped_bbox: u64,
    pub rows_dropped_schema: u64,
    pub rows_kept: u64,
}

impl CleaningReport {
    pub fn dropped(&self) -> u64 {
        self.rows_dropped_gps + self.rows_dropped_bbox + self.rows_dropped_schema
    }

    pub fn reconciles(&self) -> bool {
        self.rows_read == self.rows_kept + self.dropped()
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "rows_read={}\nrows_dropped_gps={}\nrows_dropped_bbox={}\nrows_dropped_schema={}\nrows_kept={}\n",
            self.rows_read,
            self.rows_dropped_gps,
            self.rows_dropped_bbox,
            self.rows_dropped_schema,
            self.rows_kept
        )
    }
}

struct ColumnIndex {
    pickup_time: usize,
    pickup_lon: usize,
    pickup_lat: usize,
    dropoff_lon: usize,
    dropoff_lat: usize,
    passenger_count: usize,
    trip_duration: usize,
    avg_velocity: Option<usize>,
}

/// Streaming reader over delimited trip rows.
pub struct TripRows<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    index: ColumnIndex,
    line: u64,
}

/// Reads the header of `source` and returns an iterator over its rows.
///
/// A missing required column fails immediately. Rows that do not parse are
/// yielded as [`RowItem::Malformed`]; I/O failures end the stream with `Err`.
pub fn parse_trips<R: Read>(source: R, schema: &ColumnMapping) -> Result<TripRows<R>> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::config("delimiter must be a single-byte character"))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header row: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("required column `{name}` not in header")))
    };
    let index = ColumnIndex {
        pickup_time: find(&schema.pickup_time)?,
        pickup_lon: find(&schema.pickup_lon)?,
        pickup_lat: find(&schema.pickup_lat)?,
        dropoff_lon: find(&schema.dropoff_lon)?,
        dropoff_lat: find(&schema.dropoff_lat)?,
        passenger_count: find(&schema.passenger_count)?,
        trip_duration: find(&schema.trip_duration)?,
        avg_velocity: schema.avg_velocity.as_deref().map(find).transpose()?,
    };
    Ok(TripRows {
        records: reader.into_records(),
        index,
        line: 1,
    })
}

impl<R: Read> Iterator for TripRows<R> {
    type Item = Result<RowItem>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.line += 1;
        let line = self.line;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                return Some(match e.kind() {
                    csv::ErrorKind::Io(_) => Err(Error::data(format!("read failed at line {line}: {e}"))),
                    _ => Ok(RowItem::Malformed(RowError {
                        line,
                        message: e.to_string(),
                    })),
                })
            }
        };
        Some(Ok(match self.parse_record(&record) {
            Ok(row) => RowItem::Row(row),
            Err(message) => RowItem::Malformed(RowError { line, message }),
        }))
    }
}

impl<R: Read> TripRows<R> {
    fn parse_record(&self, record: &csv::StringRecord) -> std::result::Result<RawTripRow, String> {
        let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
            record.get(i).ok_or_else(|| format!("missing field `{name}`"))
        };
        let coord = |i: usize, name: &str| -> std::result::Result<Option<f64>, String> {
            let s = field(i, name)?;
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| format!("non-numeric {name} `{s}`"))
        };
        let integer = |i: usize, name: &str| -> std::result::Result<i64, String> {
            let s = field(i, name)?;
            s.parse::<i64>()
                .or_else(|_| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && v.is_finite())
                        .map(|v| v as i64)
                        .ok_or(())
                })
                .map_err(|_| format!("non-integer {name} `{s}`"))
        };
        let ix = &self.index;
        Ok(RawTripRow {
            pickup_time: parse_timestamp(field(ix.pickup_time, "pickup_time")?)?,
            pickup_lon: coord(ix.pickup_lon, "pickup longitude")?,
            pickup_lat: coord(ix.pickup_lat, "pickup latitude")?,
            dropoff_lon: coord(ix.dropoff_lon, "dropoff longitude")?,
            dropoff_lat: coord(ix.dropoff_lat, "dropoff latitude")?,
            passenger_count: integer(ix.passenger_count, "passenger count")?,
            trip_duration: integer(ix.trip_duration, "trip duration")?,
            avg_velocity: match ix.avg_velocity {
                Some(i) => coord(i, "average velocity")?,
                None => None,
            },
        })
    }
}

/// Accepts `YYYY-MM-DD HH:MM:SS`, the same with a `T` separator, or integer
/// epoch seconds.
pub fn parse_timestamp(s: &str) -> std::result::Result<Timestamp, String> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| format!("unparseable timestamp `{s}`"))
}

pub fn format_timestamp(t: Timestamp) -> String {
    chrono::DateTime::from_timestamp(t, 0)
        .map(|dt| dt.format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_else(|| t.to_string())
}

fn gps_ok(lon: Option<f64>, lat: Option<f64>) -> Option<Point> {
    let (lon, lat) = (lon?, lat?);
    let valid = lon.is_finite()
        && lat.is_finite()
        && (-180.0..=180.0).contains(&lon)
        && (-90.0..=90.0).contains(&lat)
        && !(lon == 0.0 && lat == 0.0);
    valid.then_some(Point { lon, lat })
}

enum Verdict {
    Keep(TripRecord),
    Gps,
    Bbox,
    Schema,
}

fn judge(row: &RawTripRow, bbox: &BoundingBox) -> Verdict {
    let (Some(o), Some(d)) = (
        gps_ok(row.pickup_lon, row.pickup_lat),
        gps_ok(row.dropoff_lon, row.dropoff_lat),
    ) else {
        return Verdict::Gps;
    };
    if !bbox.contains(o.lon, o.lat) || !bbox.contains(d.lon, d.lat) {
        return Verdict::Bbox;
    }
    if row.trip_duration < 0 || !(1..=MAX_PASSENGERS).contains(&row.passenger_count) {
        return Verdict::Schema;
    }
    Verdict::Keep(TripRecord {
        o,
        d,
        t_start: row.pickup_time,
        t_end: row.pickup_time + row.trip_duration,
        passengers: row.passenger_count as u8,
    })
}

/// Iterator adapter that drops invalid rows and counts why. The report is
/// complete once the iterator is exhausted.
pub struct Cleaner<I> {
    rows: I,
    bbox: BoundingBox,
    report: CleaningReport,
}

pub fn clean<I>(rows: I, bbox: BoundingBox) -> Result<Cleaner<I::IntoIter>>
where
    I: IntoIterator<Item = Result<RowItem>>,
{
    bbox.validate()?;
    Ok(Cleaner {
        rows: rows.into_iter(),
        bbox,
        report: CleaningReport::default(),
    })
}

impl<I> Cleaner<I> {
    pub fn report(&self) -> &CleaningReport {
        &self.report
    }
}

impl<I: Iterator<Item = Result<RowItem>>> Iterator for Cleaner<I> {
    type Item = Result<TripRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let item = match self.rows.next()? {
                Ok(item) => item,
                Err(e) => return Some(Err(e)),
            };
            self.report.rows_read += 1;
            let row = match item {
                RowItem::Row(row) => row,
                RowItem::Malformed(_) => {
                    self.report.rows_dropped_schema += 1;
                    continue;
                }
            };
            match judge(&row, &self.bbox) {
                Verdict::Keep(trip) => {
                    self.report.rows_kept += 1;
                    return Some(Ok(trip));
                }
                Verdict::Gps => self.report.rows_dropped_gps += 1,
                Verdict::Bbox => self.report.rows_dropped_bbox += 1,
                Verdict::Schema => self.report.rows_dropped_schema += 1,
            }
        }
    }
}

/// Parses and cleans a whole delimited source into memory.
pub fn ingest_reader<R: Read>(
    source: R,
    schema: &ColumnMapping,
    bbox: BoundingBox,
) -> Result<(Vec<TripRecord>, CleaningReport)> {
    let mut cleaner = clean(parse_trips(source, schema)?, bbox)?;
    let trips = cleaner.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((trips, cleaner.report.clone()))
}

/// Writes the canonical trip store: a version line, a header, then one
/// comma-separated row per trip in input order.
pub fn write_trip_store<W: Write>(mut out: W, trips: &[TripRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<trip store>", e);
    writeln!(out, "{TRIP_STORE_MAGIC}").map_err(io)?;
    writeln!(out, "{}", TRIP_STORE_HEADER.join(",")).map_err(io)?;
    for t in trips {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.t_start, t.t_end, t.o.lon, t.o.lat, t.d.lon, t.d.lat, t.passengers
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_trip_store<R: Read>(source: R) -> Result<Vec<TripRecord>> {
    let mut buf = BufReader::new(source);
    let mut magic = String::new();
    buf.read_line(&mut magic)
        .map_err(|e| Error::io("<trip store>", e))?;
    if magic.trim_end() != TRIP_STORE_MAGIC {
        return Err(Error::data(format!(
            "not a trip store (expected `{TRIP_STORE_MAGIC}`, found `{}`)",
            magic.trim_end()
        )));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(buf);
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("trip store header: {e}")))?;
    if headers.iter().ne(TRIP_STORE_HEADER.iter().copied()) {
        return Err(Error::data("trip store header mismatch"));
    }
    let mut trips = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("trip store row {}: {e}", i + 1)))?;
        let bad = |what: &str| Error::data(format!("trip store row {}: bad {what}", i + 1));
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(TRIP_STORE_HEADER[k]))
        };
        let n = |k: usize| -> Result<i64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(TRIP_STORE_HEADER[k]))
        };
        let passengers = u8::try_from(n(6)?).map_err(|_| bad("passengers"))?;
        trips.push(TripRecord {
            t_start: n(0)?,
            t_end: n(1)?,
            o: Point { lon: f(2)?, lat: f(3)? },
            d: Point { lon: f(4)?, lat: f(5)? },
            passengers,
        });
    }
    Ok(trips)
}
