//! Event datasets and the `lon,lat` CSV format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::UnitVector;

/// Observed event locations on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    points: Vec<UnitVector>,
    source: String,
    original_rows: Option<Vec<(f64, f64)>>,
}

impl EventDataset {
    pub fn new(points: Vec<UnitVector>, source: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("dataset has no points".into()));
        }
        Ok(EventDataset {
            points,
            source: source.into(),
            original_rows: None,
        })
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<UnitVector> {
        self.points
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `(lon, lat)` in degrees as read from disk, when loaded from a file.
    pub fn original_rows(&self) -> Option<&[(f64, f64)]> {
        self.original_rows.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads a `lon,lat` CSV in degrees. `label` names the source in errors.
pub fn read_events(reader: impl Read, label: &str) -> Result<EventDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() == 0 || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(1, "empty file".into()));
    }
    let names: Vec<&str> = header.iter().collect();
    if names != ["lon", "lat"] {
        return Err(parse_err(
            1,
            format!("expected header `lon,lat`, found `{}`", names.join(",")),
        ));
    }

    let mut points = Vec::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = &record[i];
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("{name} `{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{name} `{raw}` is not finite")));
            }
            Ok(v)
        };
        let lon = field(0, "lon")?;
        let lat = field(1, "lat")?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(parse_err(line, format!("lat {lat} outside [-90, 90]")));
        }
        if !(-360.0..=360.0).contains(&lon) {
            return Err(parse_err(line, format!("lon {lon} outside [-360, 360]")));
        }
        points.push(UnitVector::from_lon_lat_degrees(lon, lat));
        rows.push((lon, lat));
    }
    if points.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(EventDataset {
        points,
        source: label.to_string(),
        original_rows: Some(rows),
    })
}

pub fn load_events(path: &Path) -> Result<EventDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events(std::io::BufReader::new(file), &path.display().to_string())
}

/// Writes `lon,lat` rows using shortest round-trip float formatting.
pub fn write_events(data: &EventDataset, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "lon,lat")?;
    for p in data.points() {
        let (lon, lat) = p.to_lon_lat_degrees();
        writeln!(out, "{lon},{lat}")?;
    }
    Ok(())
}

pub fn save_events(data: &EventDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_events(data, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EventDataset> {
        read_events(text.as_bytes(), "test.csv")
    }

    fn close(a: &[f64; 3], b: &[f64; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn coordinate_convention() {
        let d = parse("lon,lat\n0,0\n90,0\n0,90\n").unwrap();
        assert!(close(d.points()[0].coords(), &[1.0, 0.0, 0.0]));
        assert!(close(d.points()[1].coords(), &[0.0, 1.0, 0.0]));
        assert!(close(d.points()[2].coords(), &[0.0, 0.0, 1.0]));
        assert_eq!(d.original_rows().unwrap()[1], (90.0, 0.0));
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("", "empty"),
            ("x,y\n1,2\n", "header"),
            ("lon,lat\n", "no data"),
            ("lon,lat\n0,0\n10,91\n", ":3:"),
            ("lon,lat\n0,0\n0,0\n400,0\n", ":4:"),
            ("lon,lat\n0,abc\n", ":2:"),
            ("lon,lat\n0\n", ":2:"),
            ("lon,lat\nNaN,0\n", "finite"),
        ];
        for (text, needle) in cases {
            let msg = parse(text).unwrap_err().to_string();
            assert!(msg.contains(needle), "{text:?} -> {msg}");
        }
    }

    #[test]
    fn duplicates_and_whitespace_are_kept() {
        let d = parse("lon,lat\n 10 , 20 \n10,20\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.points()[0], d.points()[1]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let d = parse("lon,lat\n-179.5,12.25\n33.3,-45\n0,90\n").unwrap();
        let mut buf = Vec::new();
        write_events(&d, &mut buf).unwrap();
        let back = read_events(buf.as_slice(), "mem").unwrap();
        for (a, b) in d.points().iter().zip(back.points()) {
            for k in 0..3 {
                assert!((a.coords()[k] - b.coords()[k]).abs() < 1e-15);
            }
        }
    }
}
