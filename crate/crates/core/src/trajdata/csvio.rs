use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Trajectory, TrajectoryPoint};
use crate::error::{Error, Result};

const COLUMNS: [&str; 5] = ["flight_id", "t", "lat", "lon", "alt"];

pub fn read_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

/// Parses `flight_id,t,lat,lon,alt` rows; lines starting with `#` are ignored.
///
/// Flights are returned in order of first appearance, each sorted by time
/// with duplicate timestamps reduced to their first record.
pub fn read_csv_from<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() {
        return Err(Error::invalid("empty trajectory file"));
    }
    let mut index = [0usize; 5];
    for (k, name) in COLUMNS.iter().enumerate() {
        index[k] = header.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}` in header {:?}", header.iter().collect::<Vec<_>>()),
        })?;
    }

    let mut order: Vec<String> = Vec::new();
    let mut flights: HashMap<String, Vec<(usize, TrajectoryPoint)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize| rec.get(index[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse {:?} as a number", COLUMNS[k], field(k)),
            })
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty flight_id".into(),
            });
        }
        let p = TrajectoryPoint::new(num(1)?, num(2)?, num(3)?, num(4)?);
        p.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !flights.contains_key(&id) {
            order.push(id.clone());
        }
        flights.entry(id).or_default().push((line, p));
    }
    if order.is_empty() {
        return Err(Error::invalid("trajectory file has no data rows"));
    }

    order
        .into_iter()
        .map(|id| {
            let mut rows = flights.remove(&id).unwrap();
            // stable: among equal timestamps the earliest row stays first
            rows.sort_by(|a, b| a.1.t.total_cmp(&b.1.t));
            rows.dedup_by(|later, earlier| later.1.t == earlier.1.t);
            let first_line = rows[0].0;
            Trajectory::new(id, rows.into_iter().map(|(_, p)| p).collect()).map_err(|e| Error::Parse {
                line: first_line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_csv(path: &Path, trajs: &[Trajectory], comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, trajs, comment)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes the CSV schema with shortest round-trip float formatting.
pub fn write_csv_to<W: Write>(mut w: W, trajs: &[Trajectory], comment: Option<&str>) -> Result<()> {
    let io = |e| Error::io("<csv>", e);
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}").map_err(io)?;
        }
    }
    writeln!(w, "{}", COLUMNS.join(",")).map_err(io)?;
    for t in trajs {
        for p in t.points() {
            writeln!(w, "{},{},{},{},{}", t.flight_id, p.t, p.lat, p.lon, p.alt).map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let src = "flight_id,t,lat,lon,alt\nA,0,37,126,5000\nA,6,37.01,126.01,4900\n";
        let t = read_csv_from(src.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 2);
    }

    #[test]
    fn rows_are_sorted_and_deduplicated() {
        let src = "flight_id,t,lat,lon,alt\nA,12,1,1,1\nA,0,2,2,2\nA,6,3,3,3\nA,6,4,4,4\n";
        let t = read_csv_from(src.as_bytes()).unwrap();
        let ts: Vec<f64> = t[0].points().iter().map(|p| p.t).collect();
        assert_eq!(ts, vec![0.0, 6.0, 12.0]);
        assert_eq!(t[0].points()[1].lat, 3.0);
    }

    #[test]
    fn out_of_range_latitude_names_line() {
        let src = "flight_id,t,lat,lon,alt\nA,0,37,126,5000\nA,6,95,126,4900\n";
        let err = read_csv_from(src.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("latitude"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_number_names_line() {
        let src = "flight_id,t,lat,lon,alt\nA,0,37,126,5000\nA,x,37,126,4900\n";
        assert!(matches!(read_csv_from(src.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(read_csv_from("".as_bytes()).is_err());
        assert!(read_csv_from("flight_id,t,lat,lon,alt\n".as_bytes()).is_err());
    }

    #[test]
    fn written_csv_reads_back_identically() {
        let pts = vec![
            TrajectoryPoint::new(0.1, 37.123456789012345, 126.98765432109876, 7123.000000001),
            TrajectoryPoint::new(6.1, -12.5, 0.1 + 0.2, -3.0),
        ];
        let t = vec![Trajectory::new("gen-1", pts).unwrap()];
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &t, Some("provenance line")).unwrap();
        assert_eq!(read_csv_from(buf.as_slice()).unwrap(), t);
    }
}
