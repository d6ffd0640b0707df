use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::Deserialize;

use crate::error::{Error, Result};

/// One speed observation: a single vehicle or a pre-averaged link reading.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedRecord {
    pub link_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// km/h.
    pub speed: f64,
}

impl SpeedRecord {
    pub fn new(link_id: impl Into<String>, timestamp: i64, speed: f64) -> Self {
        Self {
            link_id: link_id.into(),
            timestamp,
            speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeFormat {
    Epoch,
    Iso,
}

#[derive(Deserialize)]
struct Row {
    link_id: String,
    timestamp: String,
    speed_kmh: f64,
}

fn parse_iso(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

fn parse_time(s: &str, format: TimeFormat) -> Option<i64> {
    match format {
        TimeFormat::Epoch => s.parse().ok(),
        TimeFormat::Iso => parse_iso(s),
    }
}

/// Reads `link_id,timestamp,speed_kmh` CSV.
///
/// The timestamp format (integer epoch seconds or ISO-8601, naive times
/// taken as UTC) is decided by the first data row and enforced on the rest.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<SpeedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["link_id", "timestamp", "speed_kmh"] {
        return Err(Error::data(format!(
            "expected header link_id,timestamp,speed_kmh, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut format = None;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let fmt = *format.get_or_insert(if row.timestamp.parse::<i64>().is_ok() {
            TimeFormat::Epoch
        } else {
            TimeFormat::Iso
        });
        let ts = parse_time(&row.timestamp, fmt).ok_or_else(|| {
            Error::data(format!(
                "row {}: timestamp {:?} does not match the file's {:?} format",
                i + 2,
                row.timestamp,
                fmt
            ))
        })?;
        out.push(SpeedRecord::new(row.link_id, ts, row.speed_kmh));
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<SpeedRecord>> {
    read_records(std::fs::File::open(path)?)
}

/// Writes records with integer epoch timestamps.
pub fn write_records<W: Write>(writer: W, records: &[SpeedRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["link_id", "timestamp", "speed_kmh"])?;
    for r in records {
        w.write_record([r.link_id.as_str(), &r.timestamp.to_string(), &r.speed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_records(path: &Path, records: &[SpeedRecord]) -> Result<()> {
    write_records(std::io::BufWriter::new(std::fs::File::create(path)?), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_and_iso_files() {
        let epoch = "link_id,timestamp,speed_kmh\na,1433138400,42.5\nb,1433138460,30\n";
        let iso = "link_id,timestamp,speed_kmh\na,2015-06-01T06:00:00Z,42.5\nb,2015-06-01 06:01:00,30\n";
        let a = read_records(epoch.as_bytes()).unwrap();
        let b = read_records(iso.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].timestamp, 1_433_138_400);
    }

    #[test]
    fn mixed_formats_are_rejected() {
        let mixed = "link_id,timestamp,speed_kmh\na,1433138400,42.5\nb,2015-06-01T06:00:00Z,30\n";
        let err = read_records(mixed.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("row 3")), "{err}");
        assert!(read_records("id,ts,v\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read() {
        let recs = vec![SpeedRecord::new("x", 10, 12.25), SpeedRecord::new("y", 130, 0.0)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }
}
