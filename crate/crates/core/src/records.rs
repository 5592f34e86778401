//! CSV interchange for per-receiver magnitude CFR rows.
//!
//! Columns: `snapshot,receiver,count,h0,...,h{N-1}`. A snapshot observed by
//! several receivers has one row per receiver; rows are grouped back into
//! samples on load.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{Dataset, Provenance, Sample};
use crate::scene::label_intensity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrRecord {
    pub snapshot: u64,
    pub receiver: usize,
    pub count: usize,
    pub magnitudes: Vec<f64>,
}

/// How per-receiver vectors become one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Concatenate,
    Average,
}

pub fn write_records<W: Write>(writer: W, records: &[CfrRecord]) -> Result<()> {
    let width = records.first().map_or(0, |r| r.magnitudes.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["snapshot".to_string(), "receiver".into(), "count".into()];
    header.extend((0..width).map(|i| format!("h{i}")));
    w.write_record(&header)?;
    for r in records {
        if r.magnitudes.len() != width {
            return Err(Error::Shape {
                expected: width,
                got: r.magnitudes.len(),
            });
        }
        let mut row = vec![r.snapshot.to_string(), r.receiver.to_string(), r.count.to_string()];
        row.extend(r.magnitudes.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows that parsed, plus one error per rejected row.
#[derive(Debug, Default)]
pub struct RecordLoad {
    pub records: Vec<CfrRecord>,
    pub rejected: Vec<Error>,
}

impl RecordLoad {
    pub fn is_partial(&self) -> bool {
        !self.rejected.is_empty()
    }
}

fn parse_row(fields: &csv::StringRecord, width: usize, line: usize) -> Result<CfrRecord> {
    let parse_err = |reason: String| Error::Parse { line, reason };
    if fields.len() != width + 3 {
        return Err(parse_err(format!("expected {} columns, found {}", width + 3, fields.len())));
    }
    let snapshot = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| parse_err(format!("snapshot: {e}")))?;
    let receiver = fields[1]
        .trim()
        .parse::<usize>()
        .map_err(|e| parse_err(format!("receiver: {e}")))?;
    let count_raw = fields[2]
        .trim()
        .parse::<i64>()
        .map_err(|e| parse_err(format!("count: {e}")))?;
    let count = usize::try_from(count_raw).map_err(|_| parse_err(format!("negative count {count_raw}")))?;
    let magnitudes = (0..width)
        .map(|i| {
            let v = fields[i + 3]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(format!("h{i}: {e}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(format!("h{i}: non-finite value")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CfrRecord {
        snapshot,
        receiver,
        count,
        magnitudes,
    })
}

/// Reads a record file. A bad header or an empty file is an error; bad data
/// rows are collected in `rejected` with their 1-based line numbers.
pub fn read_records<R: Read>(reader: R) -> Result<RecordLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 4
        || &header[0] != "snapshot"
        || &header[1] != "receiver"
        || &header[2] != "count"
        || header.iter().skip(3).enumerate().any(|(i, h)| h != format!("h{i}"))
    {
        return Err(Error::Parse {
            line: 1,
            reason: "header must be snapshot,receiver,count,h0,...".into(),
        });
    }
    let width = header.len() - 3;
    let mut load = RecordLoad::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                load.rejected.push(Error::Parse {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line() as usize);
        match parse_row(&row, width, line) {
            Ok(r) => load.records.push(r),
            Err(e) => load.rejected.push(e),
        }
    }
    if load.records.is_empty() && load.rejected.is_empty() {
        return Err(Error::Data("record file has no data rows".into()));
    }
    Ok(load)
}

/// Groups records by snapshot (ascending) and combines the listed receivers
/// in the given order. Snapshots missing a receiver are an error, as are
/// receivers disagreeing on the count.
pub fn assemble_dataset(
    records: &[CfrRecord],
    receivers: &[usize],
    combine: Combine,
    gamma: usize,
    provenance: Provenance,
) -> Result<Dataset> {
    if receivers.is_empty() {
        return Err(Error::config("receivers", "at least one receiver is required"));
    }
    let mut by_snapshot: BTreeMap<u64, BTreeMap<usize, &CfrRecord>> = BTreeMap::new();
    for r in records {
        if by_snapshot.entry(r.snapshot).or_default().insert(r.receiver, r).is_some() {
            return Err(Error::Data(format!(
                "duplicate row for snapshot {} receiver {}",
                r.snapshot, r.receiver
            )));
        }
    }
    let samples = by_snapshot
        .into_iter()
        .map(|(snapshot, rows)| {
            let picked = receivers
                .iter()
                .map(|rx| {
                    rows.get(rx).copied().ok_or_else(|| {
                        Error::Data(format!("snapshot {snapshot} has no row for receiver {rx}"))
                    })
                })
                .collect::<Result<Vec<&CfrRecord>>>()?;
            let count = picked[0].count;
            if picked.iter().any(|r| r.count != count) {
                return Err(Error::Data(format!("receivers disagree on the count of snapshot {snapshot}")));
            }
            let features = match combine {
                Combine::Concatenate => picked.iter().flat_map(|r| r.magnitudes.iter().copied()).collect(),
                Combine::Average => {
                    let width = picked[0].magnitudes.len();
                    if let Some(bad) = picked.iter().find(|r| r.magnitudes.len() != width) {
                        return Err(Error::Shape {
                            expected: width,
                            got: bad.magnitudes.len(),
                        });
                    }
                    (0..width)
                        .map(|i| picked.iter().map(|r| r.magnitudes[i]).sum::<f64>() / picked.len() as f64)
                        .collect()
                }
            };
            Ok(Sample {
                snapshot,
                features,
                count,
                label: label_intensity(count, gamma),
            })
        })
        .collect::<Result<Vec<Sample>>>()?;
    let feature_receivers = match combine {
        Combine::Concatenate => receivers.len(),
        Combine::Average => 1,
    };
    Dataset::new(samples, gamma, feature_receivers, provenance)
}

/// Splits records into those whose snapshot has a row for every listed
/// receiver and the sorted ids of snapshots that do not.
pub fn complete_snapshots(records: Vec<CfrRecord>, receivers: &[usize]) -> (Vec<CfrRecord>, Vec<u64>) {
    let mut seen: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for r in &records {
        seen.entry(r.snapshot).or_default().push(r.receiver);
    }
    let incomplete: Vec<u64> = seen
        .into_iter()
        .filter(|(_, have)| !receivers.iter().all(|rx| have.contains(rx)))
        .map(|(snapshot, _)| snapshot)
        .collect();
    let kept = records
        .into_iter()
        .filter(|r| incomplete.binary_search(&r.snapshot).is_err())
        .collect();
    (kept, incomplete)
}

/// Median of the per-snapshot counts (lower middle for even sizes).
pub fn median_count(records: &[CfrRecord]) -> Option<usize> {
    let mut counts: Vec<usize> = records
        .iter()
        .map(|r| (r.snapshot, r.count))
        .collect::<BTreeMap<u64, usize>>()
        .into_values()
        .collect();
    if counts.is_empty() {
        return None;
    }
    counts.sort_unstable();
    Some(counts[(counts.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incomplete_snapshots_are_split_off() {
        let records = vec![rec(0, 0, 1, 1.0), rec(0, 1, 1, 1.0), rec(1, 1, 2, 1.0), rec(2, 0, 0, 1.0), rec(2, 1, 0, 1.0)];
        let (kept, dropped) = complete_snapshots(records, &[0, 1]);
        assert_eq!(dropped, vec![1]);
        assert_eq!(kept.iter().map(|r| r.snapshot).collect::<Vec<_>>(), vec![0, 0, 2, 2]);
    }

    fn rec(snapshot: u64, receiver: usize, count: usize, base: f64) -> CfrRecord {
        CfrRecord {
            snapshot,
            receiver,
            count,
            magnitudes: vec![base, base + 0.1, base * 1e-7],
        }
    }

    #[test]
    fn write_read_round_trip() {
        let records = vec![rec(0, 0, 3, 0.123456789012345), rec(0, 1, 3, 2.0), rec(5, 0, 1, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let load = read_records(buf.as_slice()).unwrap();
        assert!(!load.is_partial());
        assert_eq!(load.records, records);
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        let text = "snapshot,receiver,count,h0,h1\n0,0,2,1.0,2.0\n1,0,-3,1.0,2.0\n2,0,1,x,2.0\n3,0,1,1.0\n4,0,0,0.5,0.5\n";
        let load = read_records(text.as_bytes()).unwrap();
        assert_eq!(load.records.len(), 2);
        let lines: Vec<usize> = load
            .rejected
            .iter()
            .map(|e| match e {
                Error::Parse { line, .. } => *line,
                other => panic!("unexpected {other}"),
            })
            .collect();
        assert_eq!(lines, vec![3, 4, 5]);
    }

    #[test]
    fn empty_and_headerless_files_fail() {
        assert!(read_records("snapshot,receiver,count,h0\n".as_bytes()).is_err());
        assert!(read_records("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(read_records("".as_bytes()).is_err());
    }

    #[test]
    fn concatenation_and_average() {
        let records = vec![rec(1, 1, 4, 2.0), rec(1, 0, 4, 1.0), rec(0, 0, 0, 3.0), rec(0, 1, 0, 5.0)];
        let d = assemble_dataset(&records, &[0, 1], Combine::Concatenate, 2, Provenance::Ingested).unwrap();
        assert_eq!(d.n_features(), 6);
        assert_eq!(d.samples[0].snapshot, 0);
        assert_eq!(d.samples[1].features[..2], [1.0, 1.1]);
        assert!(d.samples[1].label.is_positive());
        let single = assemble_dataset(&records, &[1], Combine::Concatenate, 2, Provenance::Ingested).unwrap();
        assert_eq!(single.n_features(), 3);
        let avg = assemble_dataset(&records, &[0, 1], Combine::Average, 2, Provenance::Ingested).unwrap();
        assert_eq!(avg.samples[0].features[0], 4.0);
        assert!(assemble_dataset(&records, &[2], Combine::Concatenate, 2, Provenance::Ingested).is_err());
    }

    #[test]
    fn gamma_changes_labels_only() {
        let records = vec![rec(0, 0, 3, 1.0), rec(1, 0, 7, 2.0)];
        let a = assemble_dataset(&records, &[0], Combine::Concatenate, 2, Provenance::Ingested).unwrap();
        let b = assemble_dataset(&records, &[0], Combine::Concatenate, 5, Provenance::Ingested).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.features, y.features);
        }
        assert_ne!(a.samples[0].label, b.samples[0].label);
        assert_eq!(median_count(&records), Some(3));
    }
}
