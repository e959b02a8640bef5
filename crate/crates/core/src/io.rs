//! CSV formats.
//!
//! - potential outcomes: `unit,y1,...,y{2^K}`, one row per unit;
//! - observed data: `unit,f1,...,fK,y` with factor levels in {-1, 1};
//! - assignments: `unit,treatment` with 1-based treatment indices.
//!
//! Comma separated, header required, `.` as decimal separator.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::assignment::{Assignment, ObservedData, ObservedRecord};
use crate::design::{treatment_combinations, treatment_index, MAX_FACTORS};
use crate::error::{Error, Result};
use crate::population::PotentialOutcomeTable;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_owned(),
        line,
        message: message.into(),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(name: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(name, line, e.to_string())
}

fn parse_number(name: &str, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_error(name, line, format!("column {column}: '{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(name, line, format!("column {column}: non-finite value")));
    }
    Ok(v)
}

fn parse_unit(name: &str, line: u64, cell: &str) -> Result<usize> {
    cell.parse()
        .map_err(|_| parse_error(name, line, format!("unit '{cell}' is not a non-negative integer")))
}

fn check_header(name: &str, header: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_error(
            name,
            1,
            format!("expected header '{}', got '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

pub fn parse_potential_outcomes<R: Read>(input: R, name: &str) -> Result<PotentialOutcomeTable> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_error(name, e))?.clone();
    let n_y = header.len().saturating_sub(1);
    if n_y < 2 || !n_y.is_power_of_two() || n_y > 1 << MAX_FACTORS {
        return Err(parse_error(
            name,
            1,
            format!("need 2^K outcome columns with K >= 1, got {n_y}"),
        ));
    }
    let k = n_y.trailing_zeros();
    let expected: Vec<String> = std::iter::once("unit".to_owned())
        .chain((1..=n_y).map(|j| format!("y{j}")))
        .collect();
    check_header(name, &header, &expected)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(name, e))?;
        let line = record.position().map_or(0, |p| p.line());
        parse_unit(name, line, &record[0])?;
        let row = (1..=n_y)
            .map(|c| parse_number(name, line, &expected[c], &record[c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(name, 2, "no data rows"));
    }
    PotentialOutcomeTable::from_rows(k, rows)
}

pub fn read_potential_outcomes(path: &Path) -> Result<PotentialOutcomeTable> {
    parse_potential_outcomes(open(path)?, &path.display().to_string())
}

pub fn write_potential_outcomes(table: &PotentialOutcomeTable) -> String {
    let mut out = String::from("unit");
    for j in 1..=table.n_treatments() {
        let _ = write!(out, ",y{j}");
    }
    out.push('\n');
    for i in 0..table.n_units() {
        let _ = write!(out, "{}", i + 1);
        for j in 0..table.n_treatments() {
            let _ = write!(out, ",{}", table.value(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn parse_observed<R: Read>(input: R, name: &str) -> Result<ObservedData> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_error(name, e))?.clone();
    let k = header.len().saturating_sub(2);
    if k < 1 || k > MAX_FACTORS as usize {
        return Err(parse_error(
            name,
            1,
            format!("expected header 'unit,f1,...,fK,y' with 1 <= K <= {MAX_FACTORS}"),
        ));
    }
    let k = k as u32;
    let expected: Vec<String> = std::iter::once("unit".to_owned())
        .chain((1..=k).map(|f| format!("f{f}")))
        .chain(std::iter::once("y".to_owned()))
        .collect();
    check_header(name, &header, &expected)?;

    let mut records = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(name, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let unit = parse_unit(name, line, &record[0])?;
        let levels = (1..=k as usize)
            .map(|c| match &record[c] {
                "-1" => Ok(-1i8),
                "1" | "+1" => Ok(1i8),
                other => Err(parse_error(
                    name,
                    line,
                    format!("column f{c}: level '{other}' is not -1 or 1"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        let treatment = treatment_index(&levels).expect("levels validated above");
        let outcome = parse_number(name, line, "y", &record[k as usize + 1])?;
        records.push(ObservedRecord {
            unit,
            treatment,
            outcome,
        });
    }
    if records.is_empty() {
        return Err(parse_error(name, 2, "no data rows"));
    }
    ObservedData::new(k, records)
}

pub fn read_observed(path: &Path) -> Result<ObservedData> {
    parse_observed(open(path)?, &path.display().to_string())
}

pub fn write_observed(obs: &ObservedData) -> String {
    let combos = treatment_combinations(obs.k()).expect("observed data K validated");
    let mut out = String::from("unit");
    for f in 1..=obs.k() {
        let _ = write!(out, ",f{f}");
    }
    out.push_str(",y\n");
    for r in obs.records() {
        let _ = write!(out, "{}", r.unit);
        for l in &combos[r.treatment].levels {
            let _ = write!(out, ",{l}");
        }
        let _ = writeln!(out, ",{}", r.outcome);
    }
    out
}

pub fn write_assignment(a: &Assignment) -> String {
    let mut out = String::from("unit,treatment\n");
    for (i, t) in a.treatment_of().iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, t + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potential_outcomes_parse() {
        let csv = "unit,y1,y2\n1,1,2\n2,2,4\n3,3,6\n4,4,8\n";
        let t = parse_potential_outcomes(csv.as_bytes(), "pop.csv").unwrap();
        assert_eq!(t.k(), 1);
        assert_eq!(t.n_units(), 4);
        assert_eq!(t.value(3, 1), 8.0);
        assert_eq!(write_potential_outcomes(&t), csv);
    }

    #[test]
    fn potential_outcomes_errors_carry_lines() {
        let err = parse_potential_outcomes("unit,y1,y2\n1,1,2\n2,x,4\n".as_bytes(), "p.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("p.csv: line 3"), "{err}");

        let err = parse_potential_outcomes("unit,y1,y2,y3\n1,1,2,3\n".as_bytes(), "p.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("got 3"), "{err}");

        let err = parse_potential_outcomes("unit,a,b\n1,1,2\n".as_bytes(), "p.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("expected header"), "{err}");

        let err = parse_potential_outcomes("unit,y1,y2\n1,1\n".as_bytes(), "p.csv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        assert!(parse_potential_outcomes("unit,y1,y2\n".as_bytes(), "p.csv").is_err());
    }

    #[test]
    fn observed_parse_maps_levels() {
        let csv = "unit,f1,f2,y\n1,-1,-1,0.5\n2,-1,1,1\n3,1,-1,2\n4,1,1,3\n5,1,1,4\n";
        let obs = parse_observed(csv.as_bytes(), "d.csv").unwrap();
        assert_eq!(obs.k(), 2);
        let t: Vec<_> = obs.records().iter().map(|r| r.treatment).collect();
        assert_eq!(t, vec![0, 1, 2, 3, 3]);
        assert_eq!(write_observed(&obs), csv);

        let err = parse_observed("unit,f1,y\n1,0,2\n".as_bytes(), "d.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("f1"), "{err}");
        assert!(parse_observed("unit,y\n1,2\n".as_bytes(), "d.csv").is_err());
        assert!(parse_observed("unit,f1,y\n1,1,nan\n".as_bytes(), "d.csv").is_err());
    }

    #[test]
    fn assignment_csv() {
        let a = Assignment::from_treatments(1, vec![1, 0, 0]).unwrap();
        assert_eq!(write_assignment(&a), "unit,treatment\n1,2\n2,1\n3,1\n");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_observed(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
