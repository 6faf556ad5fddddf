//! CSV interchange. Every file is UTF-8 with a header row whose first column
//! is `row_id` (change logs excepted). Reals are written at full round-trip
//! precision; booleans as `0`/`1`.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::attribution::{AttributionRecord, ChangeLogEvent};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::metrics::{LevelEvaluation, SweepResult};
use crate::store::write_atomic;

pub const TIMESTAMP_COLUMN: &str = "timestamp";

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_err(path: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: match line {
            Some(l) => format!("{}:{l}", path.display()),
            None => path.display().to_string(),
        },
        message: message.into(),
    }
}

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Storage {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(storage(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn finish(path: &Path, mut w: csv::Writer<Vec<u8>>) -> Result<()> {
    w.flush().map_err(storage(path))?;
    let bytes = w
        .into_inner()
        .map_err(|e| parse_err(path, None, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Writes a header and string rows atomically.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| parse_err(path, None, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)?;
    }
    finish(path, w)
}

/// Header cells and data records tagged with their 1-based line numbers.
type Records = (Vec<String>, Vec<(u64, csv::StringRecord)>);

fn records(path: &Path) -> Result<Records> {
    let mut r = open(path)?;
    let header = r
        .headers()
        .map_err(|e| parse_err(path, Some(1), e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
                .map_err(|e| parse_err(path, e.position().map(|p| p.line()), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

fn parse_real(path: &Path, line: u64, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| parse_err(path, Some(line), format!("`{s}`: {e}")))
}

fn parse_bool(path: &Path, line: u64, s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(parse_err(
            path,
            Some(line),
            format!("`{other}` is not a boolean"),
        )),
    }
}

fn parse_time(path: &Path, line: u64, s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| parse_err(path, Some(line), format!("timestamp `{s}`: {e}")))
}

fn expect_first_column(path: &Path, header: &[String], name: &str) -> Result<()> {
    if header.first().map(String::as_str) != Some(name) {
        return Err(parse_err(
            path,
            Some(1),
            format!("first column must be `{name}`"),
        ));
    }
    Ok(())
}

/// A feature matrix with optional per-row timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub matrix: FeatureMatrix,
    pub timestamps: Option<Vec<DateTime<Utc>>>,
}

pub fn write_matrix(
    path: &Path,
    x: &FeatureMatrix,
    timestamps: Option<&[DateTime<Utc>]>,
) -> Result<()> {
    let mut header = vec!["row_id".to_string()];
    if timestamps.is_some() {
        header.push(TIMESTAMP_COLUMN.into());
    }
    header.extend(x.col_names().iter().cloned());
    let rows = x.rows().zip(x.row_ids()).enumerate().map(|(i, (row, id))| {
        let mut out = vec![id.clone()];
        if let Some(ts) = timestamps {
            out.push(fmt_time(&ts[i]));
        }
        out.extend(row.iter().map(|v| fmt_real(*v)));
        out
    });
    write_table(path, &header, rows)
}

/// Reads `row_id,[timestamp,]<features...>`.
pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let (header, rows) = records(path)?;
    expect_first_column(path, &header, "row_id")?;
    let ts_col = header.iter().position(|h| h == TIMESTAMP_COLUMN);
    let feature_cols: Vec<usize> = (1..header.len()).filter(|c| Some(*c) != ts_col).collect();
    let col_names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let mut row_ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut timestamps = ts_col.map(|_| Vec::with_capacity(rows.len()));
    for (line, rec) in &rows {
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                Some(*line),
                format!("expected {} fields", header.len()),
            ));
        }
        row_ids.push(rec[0].to_string());
        if let (Some(c), Some(ts)) = (ts_col, timestamps.as_mut()) {
            ts.push(parse_time(path, *line, &rec[c])?);
        }
        for &c in &feature_cols {
            values.push(parse_real(path, *line, &rec[c])?);
        }
    }
    let matrix = FeatureMatrix::new(row_ids, col_names, values).map_err(|e| match e {
        Error::InvalidInput(m) | Error::Shape(m) => parse_err(path, None, m),
        other => other,
    })?;
    Ok(MatrixFile { matrix, timestamps })
}

pub fn write_labels(path: &Path, row_ids: &[String], labels: &[bool]) -> Result<()> {
    let header = ["row_id".to_string(), "is_anomaly".to_string()];
    let rows = row_ids
        .iter()
        .zip(labels)
        .map(|(id, l)| [id.clone(), fmt_bool(*l).to_string()]);
    write_table(path, &header, rows)
}

pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<bool>)> {
    let (header, rows) = records(path)?;
    expect_first_column(path, &header, "row_id")?;
    if header.len() != 2 {
        return Err(parse_err(
            path,
            Some(1),
            "expected columns `row_id,is_anomaly`",
        ));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        ids.push(rec[0].to_string());
        labels.push(parse_bool(path, *line, &rec[1])?);
    }
    Ok((ids, labels))
}

/// One row of a `<level>.scores.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub row_id: String,
    pub score: f64,
    pub flagged: bool,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let header = ["row_id", "score", "flagged"].map(String::from);
    let body = rows.iter().map(|r| {
        [
            r.row_id.clone(),
            fmt_real(r.score),
            fmt_bool(r.flagged).to_string(),
        ]
    });
    write_table(path, &header, body)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let (header, rows) = records(path)?;
    if header != ["row_id", "score", "flagged"] {
        return Err(parse_err(
            path,
            Some(1),
            "expected columns `row_id,score,flagged`",
        ));
    }
    rows.iter()
        .map(|(line, rec)| {
            Ok(ScoreRow {
                row_id: rec[0].to_string(),
                score: parse_real(path, *line, &rec[1])?,
                flagged: parse_bool(path, *line, &rec[2])?,
            })
        })
        .collect()
}

/// Reads `timestamp,description` and returns events sorted by time (stable).
pub fn read_changelog(path: &Path) -> Result<Vec<ChangeLogEvent>> {
    let (header, rows) = records(path)?;
    if header != ["timestamp", "description"] {
        return Err(parse_err(
            path,
            Some(1),
            "expected columns `timestamp,description`",
        ));
    }
    let mut events = rows
        .iter()
        .map(|(line, rec)| {
            Ok(ChangeLogEvent {
                timestamp: parse_time(path, *line, &rec[0])?,
                description: rec[1].to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    events.sort_by_key(|e| e.timestamp);
    Ok(events)
}

pub fn write_changelog(path: &Path, events: &[ChangeLogEvent]) -> Result<()> {
    let header = ["timestamp", "description"].map(String::from);
    let rows = events
        .iter()
        .map(|e| [fmt_time(&e.timestamp), e.description.clone()]);
    write_table(path, &header, rows)
}

fn join_ranked(items: &[(String, f64)]) -> String {
    items
        .iter()
        .map(|(name, w)| format!("{name}:{}", fmt_real(*w)))
        .collect::<Vec<_>>()
        .join(";")
}

fn join_reals(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| fmt_real(*x))
        .collect::<Vec<_>>()
        .join(";")
}

pub const ATTRIBUTION_HEADER: [&str; 10] = [
    "row_id",
    "timestamp",
    "score",
    "dominant_mode",
    "max_z",
    "attributed_feature",
    "top_features",
    "residual_features",
    "projections",
    "annotation_tag",
];

/// Lists (`projections`, `top_features`, ...) are `;`-separated; ranked
/// features are `name:weight`. Empty cells mean "not present".
pub fn write_attribution(path: &Path, records: &[AttributionRecord]) -> Result<()> {
    let header = ATTRIBUTION_HEADER.map(String::from);
    let rows = records.iter().map(|r| {
        let max_z = r.z_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [
            r.row_id.clone(),
            r.timestamp.as_ref().map(fmt_time).unwrap_or_default(),
            fmt_real(r.score),
            r.dominant_mode.map(|j| j.to_string()).unwrap_or_default(),
            if r.z_scores.is_empty() {
                String::new()
            } else {
                fmt_real(max_z)
            },
            r.attributed_feature().unwrap_or_default().to_string(),
            join_ranked(&r.top_features),
            join_ranked(&r.residual_features),
            join_reals(&r.projections),
            r.annotation_tag.clone(),
        ]
    });
    write_table(path, &header, rows)
}

/// Raw string cells of any CSV file, header included. Used for re-ingestion checks.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let (header, rows) = records(path)?;
    Ok((
        header,
        rows.into_iter()
            .map(|(_, r)| r.iter().map(str::to_owned).collect())
            .collect(),
    ))
}

pub const EVALUATION_HEADER: [&str; 9] = [
    "level",
    "threshold",
    "precision",
    "recall",
    "f1",
    "tp",
    "fp",
    "fn",
    "tn",
];

pub fn write_evaluation(path: &Path, rows: &[LevelEvaluation]) -> Result<()> {
    let header = EVALUATION_HEADER.map(String::from);
    let body = rows.iter().map(|r| {
        [
            r.level.clone(),
            fmt_real(r.threshold),
            fmt_real(r.precision),
            fmt_real(r.recall),
            fmt_real(r.f1),
            r.confusion.tp.to_string(),
            r.confusion.fp.to_string(),
            r.confusion.fn_.to_string(),
            r.confusion.tn.to_string(),
        ]
    });
    write_table(path, &header, body)
}

pub fn read_evaluation(path: &Path) -> Result<Vec<LevelEvaluation>> {
    let (header, rows) = records(path)?;
    if header != EVALUATION_HEADER {
        return Err(parse_err(path, Some(1), "unexpected evaluation header"));
    }
    let count = |line: u64, s: &str| {
        s.parse::<usize>()
            .map_err(|e| parse_err(path, Some(line), format!("`{s}`: {e}")))
    };
    rows.iter()
        .map(|(line, r)| {
            Ok(LevelEvaluation {
                level: r[0].to_string(),
                threshold: parse_real(path, *line, &r[1])?,
                precision: parse_real(path, *line, &r[2])?,
                recall: parse_real(path, *line, &r[3])?,
                f1: parse_real(path, *line, &r[4])?,
                confusion: crate::metrics::Confusion {
                    tp: count(*line, &r[5])?,
                    fp: count(*line, &r[6])?,
                    fn_: count(*line, &r[7])?,
                    tn: count(*line, &r[8])?,
                },
            })
        })
        .collect()
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<()> {
    let header = [
        "threshold",
        "tp",
        "fp",
        "fn",
        "tn",
        "precision",
        "recall",
        "f1",
        "best",
    ]
    .map(String::from);
    let rows = sweep.points.iter().enumerate().map(|(i, p)| {
        [
            fmt_real(p.threshold),
            p.confusion.tp.to_string(),
            p.confusion.fp.to_string(),
            p.confusion.fn_.to_string(),
            p.confusion.tn.to_string(),
            fmt_real(p.precision),
            fmt_real(p.recall),
            fmt_real(p.f1),
            fmt_bool(i == sweep.best_index).to_string(),
        ]
    });
    write_table(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_with_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let x = FeatureMatrix::from_rows(&[vec![0.1, -2.5e-17], vec![1.0 / 3.0, 4.0]]).unwrap();
        let ts = vec![
            DateTime::parse_from_rfc3339("2024-05-01T00:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            DateTime::parse_from_rfc3339("2024-05-01T01:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
        ];
        write_matrix(&path, &x, Some(&ts)).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.matrix, x);
        assert_eq!(back.timestamps, Some(ts));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("row_id,timestamp,f0,f1\n"));
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,a\nr0,1\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "row_id,a\nr0,abc\n").unwrap();
        match read_matrix(&path) {
            Err(Error::Parse { location, .. }) => assert!(location.ends_with(":2")),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "row_id,a\nr0,1\nr0,2\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Parse { .. })));
        assert!(matches!(
            read_matrix(&dir.path().join("missing.csv")),
            Err(Error::Storage { .. })
        ));
    }

    #[test]
    fn labels_scores_changelog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let p = dir.path().join("l.csv");
        write_labels(&p, &ids, &[true, false]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), (ids.clone(), vec![true, false]));

        let p = dir.path().join("s.csv");
        let rows = vec![
            ScoreRow {
                row_id: "a".into(),
                score: 5.3,
                flagged: true,
            },
            ScoreRow {
                row_id: "b".into(),
                score: 1e-300,
                flagged: false,
            },
        ];
        write_scores(&p, &rows).unwrap();
        assert_eq!(read_scores(&p).unwrap(), rows);

        let p = dir.path().join("c.csv");
        std::fs::write(
            &p,
            "timestamp,description\n2024-01-02T00:00:00Z,\"late, deploy\"\n2024-01-01T00:00:00Z,early\n",
        )
        .unwrap();
        let events = read_changelog(&p).unwrap();
        assert_eq!(events[0].description, "early");
        assert_eq!(events[1].description, "late, deploy");
        write_changelog(&p, &events).unwrap();
        assert_eq!(read_changelog(&p).unwrap(), events);
    }
}
