//! `group,dose,y1,y2` data files.

use std::io::{Read, Write};

use thiserror::Error;

use crate::likelihood::{GroupSample, Observation, OutcomeKind};

pub const HEADER: [&str; 4] = ["group", "dose", "y1", "y2"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("data file is empty")]
    Empty,
    #[error("data header must be `group,dose,y1,y2`, found `{0}`")]
    Header(String),
    #[error("data line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("data file has no rows for group {0}")]
    MissingGroup(usize),
    #[error("group {group}: {message}")]
    Sample { group: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_dataset<R: Read>(input: R, kinds: [OutcomeKind; 2]) -> Result<[GroupSample; 2], DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(DatasetError::Empty);
    }
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(DatasetError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows: [Vec<Observation>; 2] = [Vec::new(), Vec::new()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| DatasetError::Row { line, message };
        let field = |i: usize| -> Result<f64, DatasetError> {
            let s = &rec[i];
            if s.is_empty() {
                return Err(err(format!("missing value for `{}`", HEADER[i])));
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("`{}` is not a finite number: `{s}`", HEADER[i]))),
            }
        };
        let group = match &rec[0] {
            "1" => 0,
            "2" => 1,
            other => return Err(err(format!("group must be 1 or 2, found `{other}`"))),
        };
        let dose = field(1)?;
        let y = [field(2)?, field(3)?];
        for k in 0..2 {
            if kinds[k] == OutcomeKind::Binary && y[k] != 0.0 && y[k] != 1.0 {
                return Err(err(format!("`y{}` is binary and must be 0 or 1, found `{}`", k + 1, y[k])));
            }
        }
        rows[group].push(Observation { dose, y });
    }
    if rows[0].is_empty() && rows[1].is_empty() {
        return Err(DatasetError::Empty);
    }
    let [r1, r2] = rows;
    let build = |g: usize, r: Vec<Observation>| -> Result<GroupSample, DatasetError> {
        if r.is_empty() {
            return Err(DatasetError::MissingGroup(g + 1));
        }
        GroupSample::new(kinds, r).map_err(|e| DatasetError::Sample { group: g + 1, message: e.to_string() })
    };
    Ok([build(0, r1)?, build(1, r2)?])
}

fn fmt_value(v: f64, kind: OutcomeKind) -> String {
    match kind {
        OutcomeKind::Binary => format!("{}", v as u8),
        OutcomeKind::Continuous => format!("{v}"),
    }
}

pub fn write_dataset<W: Write>(out: W, groups: [&GroupSample; 2]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for (g, s) in groups.into_iter().enumerate() {
        let kinds = s.kinds();
        for r in s.rows() {
            w.write_record([
                (g + 1).to_string(),
                format!("{}", r.dose),
                fmt_value(r.y[0], kinds[0]),
                fmt_value(r.y[1], kinds[1]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIXED: [OutcomeKind; 2] = [OutcomeKind::Continuous, OutcomeKind::Binary];

    #[test]
    fn round_trip() {
        let text = "group,dose,y1,y2\n1,0,0.25,0\n1,1,0.5,1\n2,0,0.125,1\n2,0.5,-1e-3,0\n";
        let g = read_dataset(text.as_bytes(), MIXED).unwrap();
        assert_eq!(g[0].len(), 2);
        let mut buf = Vec::new();
        write_dataset(&mut buf, [&g[0], &g[1]]).unwrap();
        let again = read_dataset(buf.as_slice(), MIXED).unwrap();
        assert_eq!(again, g);
        assert_eq!(String::from_utf8(buf).unwrap(), "group,dose,y1,y2\n1,0,0.25,0\n1,1,0.5,1\n2,0,0.125,1\n2,0.5,-0.001,0\n");
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(read_dataset("".as_bytes(), MIXED), Err(DatasetError::Empty)));
        assert!(matches!(read_dataset("group,dose,y1,y2\n".as_bytes(), MIXED), Err(DatasetError::Empty)));
        assert!(matches!(read_dataset("g,d,a,b\n1,0,0,0\n".as_bytes(), MIXED), Err(DatasetError::Header(_))));
        let e = read_dataset("group,dose,y1,y2\n1,0,0.2,0\n1,0,0.2,2\n".as_bytes(), MIXED).unwrap_err();
        assert!(matches!(e, DatasetError::Row { line: 3, .. }), "{e}");
        let e = read_dataset("group,dose,y1,y2\n1,0,,0\n".as_bytes(), MIXED).unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("missing"), "{e}");
        let e = read_dataset("group,dose,y1,y2\n3,0,0.1,0\n".as_bytes(), MIXED).unwrap_err();
        assert!(e.to_string().contains("group must be 1 or 2"));
        assert!(matches!(
            read_dataset("group,dose,y1,y2\n1,0,0.1,0\n".as_bytes(), MIXED),
            Err(DatasetError::MissingGroup(2))
        ));
        assert!(read_dataset("group,dose,y1,y2\n1,0,nan,0\n2,0,1,0\n".as_bytes(), MIXED).is_err());
    }
}
