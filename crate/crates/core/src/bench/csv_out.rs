//! CSV serialization of result rows: fixed column order, six significant
//! digits, LF line endings.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::run::ResultRow;

pub const HEADER: [&str; 11] = [
    "env",
    "setting",
    "estimator",
    "n",
    "replications",
    "rmse",
    "rmse_std_error",
    "mean_bias",
    "mean_plug_in_se",
    "wall_time",
    "failures",
];

/// Shortest decimal that equals `x` rounded to six significant digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn fmt(x: f64) -> String {
    let r = round6(x);
    // Normalize −0 so the output does not depend on the sign of a zero error.
    if r == 0.0 {
        "0".to_string()
    } else {
        r.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.setting.clone(),
            r.estimator.clone(),
            r.n.to_string(),
            r.replications.to_string(),
            fmt(r.rmse),
            fmt(r.rmse_std_error),
            fmt(r.mean_bias),
            fmt(r.mean_plug_in_se),
            r.wall_time.map(fmt).unwrap_or_default(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the table to `path`; I/O errors name the path.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to write"));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(e, path))?;
    }
    let file = std::fs::File::create(path).map_err(|e| with_path(e, path))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::invalid(format!("unexpected CSV header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::invalid(format!("bad number {s:?}"))) };
    let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::invalid(format!("bad integer {s:?}"))) };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(ResultRow {
                env: rec[0].to_string(),
                setting: rec[1].to_string(),
                estimator: rec[2].to_string(),
                n: int(&rec[3])?,
                replications: int(&rec[4])?,
                rmse: num(&rec[5])?,
                rmse_std_error: num(&rec[6])?,
                mean_bias: num(&rec[7])?,
                mean_plug_in_se: num(&rec[8])?,
                wall_time: if rec[9].is_empty() { None } else { Some(num(&rec[9])?) },
                failures: int(&rec[10])?,
            })
        })
        .collect()
}

pub fn load_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| with_path(e, path))?;
    read_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                env: "synthetic".into(),
                setting: "both_correct".into(),
                estimator: "drl_m2".into(),
                n: 1500,
                replications: 100,
                rmse: 0.123456789,
                rmse_std_error: 1.0 / 3.0,
                mean_bias: -0.0,
                mean_plug_in_se: 12345678.9,
                wall_time: None,
                failures: 0,
            },
            ResultRow {
                env: "cliff".into(),
                setting: "with, comma".into(),
                estimator: "is".into(),
                n: 3000,
                replications: 10,
                rmse: 7.640000000001,
                rmse_std_error: 1e-9 / 7.0,
                mean_bias: -2.5,
                mean_plug_in_se: f64::NAN,
                wall_time: Some(0.25),
                failures: 3,
            },
        ]
    }

    fn to_string(rows: &[ResultRow]) -> String {
        let mut buf = Vec::new();
        write_csv(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn golden_file() {
        let expected = "env,setting,estimator,n,replications,rmse,rmse_std_error,mean_bias,mean_plug_in_se,wall_time,failures\n\
synthetic,both_correct,drl_m2,1500,100,0.123457,0.333333,0,12345700,,0\n\
cliff,\"with, comma\",is,3000,10,7.64,0.000000000142857,-2.5,NaN,0.25,3\n";
        assert_eq!(to_string(&rows()), expected);
    }

    #[test]
    fn one_row_gives_two_lines() {
        let text = to_string(&rows()[..1]);
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn round_trip_reproduces_rounded_rows() {
        let text = to_string(&rows());
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].rmse, 0.123457);
        assert_eq!(back[1].wall_time, Some(0.25));
        assert!(back[1].mean_plug_in_se.is_nan());
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn emit_names_the_path_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_csv(&rows(), &blocker.join("out.csv")).unwrap_err();
        assert!(err.to_string().contains("out.csv"), "{err}");
        let ok = dir.path().join("sub/out.csv");
        emit_csv(&rows(), &ok).unwrap();
        assert_eq!(load_csv(&ok).unwrap().len(), 2);
    }

    #[test]
    fn round6_keeps_six_digits() {
        assert_eq!(round6(1.0 / 3.0), 0.333333);
        assert_eq!(round6(123456789.0), 123457000.0);
        assert_eq!(round6(0.0), 0.0);
    }
}
