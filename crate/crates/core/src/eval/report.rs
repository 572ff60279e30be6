use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed CSV header. `snr_db` is empty for clean split rows.
pub const CSV_HEADER: &str = "system,split,snr_db,mse,pearson_mean,n";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub split: String,
    pub snr_db: Option<f64>,
    pub mse: f64,
    pub pearson_mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, system: &str, split: &str, snr_db: Option<f64>) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.split == split && r.snr_db == snr_db)
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.system,
                r.split,
                r.snr_db.map(|v| v.to_string()).unwrap_or_default(),
                r.mse,
                r.pearson_mean,
                r.n
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::format("csv", "missing or wrong header"));
        }
        let bad = |l: &str| Error::format("csv", format!("bad row {l:?}"));
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 6 {
                    return Err(bad(l));
                }
                Ok(EvalRow {
                    system: f[0].to_string(),
                    split: f[1].to_string(),
                    snr_db: if f[2].is_empty() {
                        None
                    } else {
                        Some(f[2].parse().map_err(|_| bad(l))?)
                    },
                    mse: f[3].parse().map_err(|_| bad(l))?,
                    pearson_mean: f[4].parse().map_err(|_| bad(l))?,
                    n: f[5].parse().map_err(|_| bad(l))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

pub fn emit_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(EvalReport::default().to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn file_round_trip() {
        let r = EvalReport {
            rows: vec![
                EvalRow {
                    system: "ppg".into(),
                    split: "normal".into(),
                    snr_db: None,
                    mse: 0.0123,
                    pearson_mean: 0.9,
                    n: 24,
                },
                EvalRow {
                    system: "mfcc".into(),
                    split: "normal".into(),
                    snr_db: Some(-15.0),
                    mse: 1.5,
                    pearson_mean: -0.25,
                    n: 96,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_csv(&r, &p).unwrap();
        assert_eq!(read_csv(&p).unwrap(), r);
        assert!(EvalReport::from_csv("nope\n").is_err());
    }

    proptest! {
        #[test]
        fn parse_back_equals_report(
            rows in prop::collection::vec(
                (any::<bool>(), -30.0f64..130.0, 0.0f64..10.0, -1.0f64..1.0, 1usize..600),
                0..8,
            )
        ) {
            let report = EvalReport {
                rows: rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (sweep, snr, m, p, n))| EvalRow {
                        system: format!("sys{i}"),
                        split: "unseen_speaker".into(),
                        snr_db: sweep.then_some(snr),
                        mse: m,
                        pearson_mean: p,
                        n,
                    })
                    .collect(),
            };
            prop_assert_eq!(EvalReport::from_csv(&report.to_csv()).unwrap(), report);
        }
    }
}
