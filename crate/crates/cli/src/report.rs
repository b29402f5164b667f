//! Tidy plot data from run directories. Nothing is rendered.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use growreg::stats::spearman;

use crate::error::{CliError, Result};

const RECORD_HEADER: [&str; 5] = ["iter", "phase", "train_loss", "val_acc", "lambda"];

/// Parsed `record.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub layers: Vec<usize>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub iter: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lambda: f64,
    pub dispersion: Vec<Option<f64>>,
}

pub fn parse_record(text: &str, path: &Path) -> Result<Record> {
    let bad = |line: usize, msg: String| CliError::input(path, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Record { layers: Vec::new(), rows: Vec::new() });
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < RECORD_HEADER.len() || cols[..RECORD_HEADER.len()] != RECORD_HEADER {
        return Err(bad(1, format!("not a record header: {header:?}")));
    }
    let layers = cols[RECORD_HEADER.len()..]
        .iter()
        .map(|c| c.strip_prefix("disp_").and_then(|l| l.parse().ok()).ok_or_else(|| bad(1, format!("bad column {c:?}"))))
        .collect::<Result<Vec<usize>>>()?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(n, format!("{} fields, header has {}", f.len(), cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("bad number {s:?}")));
        rows.push(Row {
            iter: f[0].parse().map_err(|_| bad(n, format!("bad iteration {:?}", f[0])))?,
            phase: f[1].to_string(),
            train_loss: num(f[2])?,
            val_acc: num(f[3])?,
            lambda: num(f[4])?,
            dispersion: f[5..]
                .iter()
                .map(|s| if s.is_empty() { Ok(None) } else { num(s).map(Some) })
                .collect::<Result<_>>()?,
        });
    }
    Ok(Record { layers, rows })
}

impl Record {
    /// Long format `iter,layer,metric,value`; run-wide metrics leave `layer` empty.
    /// Iterations are offset so they increase across phases.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("iter,layer,metric,value\n");
        for r in &self.rows {
            for (metric, v) in [("train_loss", r.train_loss), ("val_acc", r.val_acc), ("lambda", r.lambda)] {
                writeln!(s, "{},,{metric},{v}", r.iter).unwrap();
            }
            for (&l, d) in self.layers.iter().zip(&r.dispersion) {
                if let Some(d) = d {
                    writeln!(s, "{},{l},dispersion,{d}", r.iter).unwrap();
                }
            }
        }
        s
    }

    /// Spearman correlation of dispersion against checkpoint index over the
    /// regularisation rows, per layer with at least three defined points.
    pub fn dispersion_trends(&self) -> Vec<(usize, f64)> {
        let reg: Vec<&Row> = self.rows.iter().filter(|r| r.phase != "finetune").collect();
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(col, &l)| {
                let ys: Vec<f64> = reg.iter().filter_map(|r| r.dispersion[col]).collect();
                if ys.len() < 3 {
                    return None;
                }
                let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
                Some((l, spearman(&xs, &ys)))
            })
            .collect()
    }
}

/// First, middle and last snapshot iteration.
pub fn snapshot_iters(iters: &BTreeSet<usize>) -> Vec<usize> {
    let v: Vec<usize> = iters.iter().copied().collect();
    if v.is_empty() {
        return v;
    }
    let picks: BTreeSet<usize> = [v[0], v[(v.len() - 1) / 2], v[v.len() - 1]].into_iter().collect();
    picks.into_iter().collect()
}

/// Keeps the rows of `snapshots.csv` at the first, middle and last iteration.
pub fn select_snapshots(text: &str, path: &Path) -> Result<(Vec<usize>, String)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, h)) if h == "iter,layer,group,value" => h,
        Some((_, h)) => return Err(CliError::input(path, format!("line 1: not a snapshot header: {h:?}"))),
        None => return Ok((Vec::new(), String::new())),
    };
    let mut parsed = Vec::new();
    for (i, line) in lines {
        let iter = line
            .split(',')
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .filter(|_| line.split(',').count() == 4)
            .ok_or_else(|| CliError::input(path, format!("line {}: malformed row {line:?}", i + 1)))?;
        parsed.push((iter, line));
    }
    let keep = snapshot_iters(&parsed.iter().map(|(i, _)| *i).collect());
    let mut out = format!("{header}\n");
    for (iter, line) in parsed {
        if keep.contains(&iter) {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok((keep, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    const REC: &str = "iter,phase,train_loss,val_acc,lambda,disp_0,disp_1\n\
        0,growing,0.5,0.9,0,0.1,\n\
        100,growing,0.4,0.9,0.1,0.2,\n\
        200,done,0.4,0.9,0.2,0.3,\n\
        300,finetune,0.3,0.95,0,0.01,\n";

    #[test]
    fn record_parses_and_reshapes() {
        let r = parse_record(REC, Path::new("r")).unwrap();
        assert_eq!(r.layers, vec![0, 1]);
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0].dispersion, vec![Some(0.1), None]);
        let long = r.long_csv();
        assert!(long.starts_with("iter,layer,metric,value\n0,,train_loss,0.5\n"));
        assert_eq!(long.lines().filter(|l| l.contains("dispersion")).count(), 4);
        assert_eq!(r.dispersion_trends(), vec![(0, 1.0)]);
    }

    #[test]
    fn empty_and_corrupt_records() {
        assert!(parse_record("", Path::new("r")).unwrap().rows.is_empty());
        assert!(parse_record("a,b\n", Path::new("r")).is_err());
        let short = "iter,phase,train_loss,val_acc,lambda\n1,x,0\n";
        assert!(parse_record(short, Path::new("r")).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn snapshot_selection_picks_three() {
        let iters: BTreeSet<usize> = [0, 100, 200, 300, 400].into();
        assert_eq!(snapshot_iters(&iters), vec![0, 200, 400]);
        assert_eq!(snapshot_iters(&[5].into()), vec![5]);
        let text = "iter,layer,group,value\n0,1,0,1\n50,1,0,0.5\n100,1,0,0.2\n150,1,0,0.1\n";
        let (keep, out) = select_snapshots(text, Path::new("s")).unwrap();
        assert_eq!(keep, vec![0, 50, 150]);
        assert_eq!(out.lines().count(), 4);
    }
}
