use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::EpochMetrics;
use crate::model::checkpoint::write_atomic;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// Values are written with the shortest representation that parses back exactly.
pub fn metrics_to_csv(history: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    write_atomic(path, metrics_to_csv(history).as_bytes())
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<EpochMetrics>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((no, h)) => return Err(err(no, format!("expected header '{METRICS_HEADER}', found '{h}'"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(no, format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| err(no, format!("field {}: {e}", i + 1)))
        };
        rows.push(EpochMetrics {
            epoch: fields[0]
                .parse()
                .map_err(|e| err(no, format!("epoch: {e}")))?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            val_loss: num(3)?,
            val_acc: num(4)?,
        });
    }
    if rows.is_empty() {
        return Err(err(1, "no epoch rows".into()));
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<EpochMetrics> {
        (1..=n)
            .map(|e| EpochMetrics {
                epoch: e,
                train_loss: 1.0 / e as f64,
                train_acc: 0.1 + 0.2,
                val_loss: 2.0f64.sqrt(),
                val_acc: e as f64 / 3.0,
            })
            .collect()
    }

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &rows(4)).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows(4));
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{METRICS_HEADER}\n1,0.5,0.5,0.5,0.5\n2,0.4,x,0.4,0.4\n");
        let err = parse_metrics_csv(&text, Path::new("m.csv")).unwrap_err().to_string();
        assert!(err.contains("m.csv:3"), "{err}");
        let err = parse_metrics_csv("epoch,loss\n", Path::new("m.csv")).unwrap_err().to_string();
        assert!(err.contains(":1"), "{err}");
        assert!(parse_metrics_csv(&format!("{METRICS_HEADER}\n1,2\n"), Path::new("m")).is_err());
    }
}
