//! CSV datasets: header `f0,…,f{d-1},label,segment_id`, one sample per row.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use quilt::segments::{DataSegment, Sample};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("schema error: {0}")]
    Schema(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A parsed dataset with labels remapped to `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub segments: Vec<DataSegment>,
    pub num_features: usize,
    pub num_classes: usize,
    /// `(original label, dense label)`, ascending.
    pub label_map: Vec<(i64, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub segment_sizes: Vec<(u64, usize)>,
    pub label_map: Vec<(i64, usize)>,
}

impl Dataset {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            rows: self.segments.iter().map(DataSegment::len).sum(),
            num_features: self.num_features,
            num_classes: self.num_classes,
            segment_sizes: self.segments.iter().map(|s| (s.id, s.len())).collect(),
            label_map: self.label_map.clone(),
        }
    }

    /// Stream indices at which segments after the first begin.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = 0;
        for seg in &self.segments[..self.segments.len().saturating_sub(1)] {
            at += seg.len();
            out.push(at);
        }
        out
    }
}

/// Writes `contents` next to `path` and renames it into place, so a failed
/// write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Serializes segments to CSV text. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn to_csv(segments: &[DataSegment]) -> Result<Vec<u8>, DatasetError> {
    let dim = segments
        .iter()
        .flat_map(|s| s.samples.first())
        .map(|s| s.features.len())
        .next()
        .ok_or_else(|| DatasetError::Schema("no samples to write".into()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("segment_id".into());
    let csv_err = |e: csv::Error| DatasetError::Schema(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let mut record: Vec<String> = Vec::with_capacity(dim + 2);
    for seg in segments {
        for s in &seg.samples {
            if s.features.len() != dim {
                return Err(DatasetError::Schema(format!(
                    "segment {} has a sample with {} features, expected {dim}",
                    seg.id,
                    s.features.len()
                )));
            }
            record.clear();
            record.extend(s.features.iter().map(|v| v.to_string()));
            record.push(s.label.to_string());
            record.push(seg.id.to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| DatasetError::Schema(e.to_string()))
}

pub fn write_csv(path: &Path, segments: &[DataSegment]) -> Result<(), DatasetError> {
    write_atomic(path, &to_csv(segments)?)
}

pub fn read_csv(path: &Path, boundaries: Option<&[usize]>) -> Result<Dataset, DatasetError> {
    let text = fs::read(path).map_err(io_err(path))?;
    parse_csv(&text, boundaries)
}

/// Parses CSV bytes. Every column other than `label` and `segment_id` is a
/// feature. Without a `segment_id` column the rows are cut at `boundaries`
/// (one segment when `None`).
pub fn parse_csv(bytes: &[u8], boundaries: Option<&[usize]>) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| DatasetError::Schema(format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let find = |name: &str| -> Result<Option<usize>, DatasetError> {
        let hits: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| **n == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [] => Ok(None),
            [i] => Ok(Some(*i)),
            _ => Err(DatasetError::Schema(format!(
                "column `{name}` appears more than once"
            ))),
        }
    };
    let label_col =
        find("label")?.ok_or_else(|| DatasetError::Schema("missing `label` column".into()))?;
    let segment_col = find("segment_id")?;
    if segment_col.is_some() && boundaries.is_some() {
        return Err(DatasetError::Schema(
            "the file has a segment_id column; drop the boundary list".into(),
        ));
    }
    let feature_cols: Vec<usize> = (0..names.len())
        .filter(|&i| i != label_col && Some(i) != segment_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(DatasetError::Schema("no feature columns".into()));
    }

    let mut rows: Vec<(Vec<f64>, i64, Option<u64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            DatasetError::Parse {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = field(c).parse().map_err(|_| DatasetError::Parse {
                line,
                reason: format!("column `{}`: {:?} is not a number", names[c], field(c)),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    line,
                    reason: format!("column `{}`: value is not finite", names[c]),
                });
            }
            features.push(v);
        }
        let raw_label = field(label_col);
        if raw_label.is_empty() {
            return Err(DatasetError::Schema(format!("line {line}: missing label")));
        }
        let label: i64 = raw_label.parse().map_err(|_| DatasetError::Parse {
            line,
            reason: format!("label {raw_label:?} is not an integer"),
        })?;
        let segment = segment_col
            .map(|c| {
                field(c).parse::<u64>().map_err(|_| DatasetError::Parse {
                    line,
                    reason: format!("segment_id {:?} is not a non-negative integer", field(c)),
                })
            })
            .transpose()?;
        rows.push((features, label, segment));
    }
    if rows.is_empty() {
        return Err(DatasetError::Schema("the file has no data rows".into()));
    }

    let distinct: Vec<i64> = {
        let mut v: Vec<i64> = rows.iter().map(|r| r.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let label_map: Vec<(i64, usize)> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let dense = |l: i64| distinct.binary_search(&l).expect("label collected above");
    let num_features = feature_cols.len();

    let segments = if segment_col.is_some() {
        let mut groups: BTreeMap<u64, Vec<Sample>> = BTreeMap::new();
        for (f, l, s) in rows {
            groups
                .entry(s.expect("segment column present"))
                .or_default()
                .push(Sample::new(f, dense(l)));
        }
        groups
            .into_iter()
            .map(|(id, samples)| DataSegment::new(id, samples))
            .collect()
    } else {
        let cuts = boundaries.unwrap_or(&[]);
        if cuts.windows(2).any(|w| w[0] >= w[1])
            || cuts.first() == Some(&0)
            || cuts.last().is_some_and(|&b| b >= rows.len())
        {
            return Err(DatasetError::Schema(format!(
                "boundaries must be strictly increasing inside (0, {})",
                rows.len()
            )));
        }
        let mut segments = Vec::with_capacity(cuts.len() + 1);
        let mut it = rows.into_iter();
        let mut start = 0;
        for (id, &end) in cuts.iter().chain(std::iter::once(&usize::MAX)).enumerate() {
            let take = end.saturating_sub(start);
            let samples: Vec<Sample> = it
                .by_ref()
                .take(take)
                .map(|(f, l, _)| Sample::new(f, dense(l)))
                .collect();
            segments.push(DataSegment::new(id as u64, samples));
            start = end;
        }
        segments
    };
    Ok(Dataset {
        segments,
        num_features,
        num_classes: distinct.len(),
        label_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_ids_group_in_id_order() {
        let text = "f0,label,segment_id\n0.5,1,2\n0.1,0,0\n0.2,1,1\n0.3,0,0\n";
        let d = parse_csv(text.as_bytes(), None).unwrap();
        let ids: Vec<u64> = d.segments.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(d.segments[0].samples.len(), 2);
        assert_eq!(d.segments[0].samples[1].features, vec![0.3]);
        assert_eq!(d.boundaries(), vec![2, 3]);
    }

    #[test]
    fn labels_are_remapped_densely() {
        let text = "a,b,label\n1,2,7\n3,4,2\n5,6,7\n";
        let d = parse_csv(text.as_bytes(), None).unwrap();
        assert_eq!(d.label_map, vec![(2, 0), (7, 1)]);
        let labels: Vec<usize> = d.segments[0].samples.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
        assert_eq!((d.num_features, d.num_classes), (2, 2));
    }

    #[test]
    fn bad_feature_names_its_line() {
        let mut text = String::from("f0,f1,label\n");
        for i in 0..10 {
            if i == 6 {
                text.push_str("0.1,abc,0\n");
            } else {
                text.push_str("0.1,0.2,1\n");
            }
        }
        match parse_csv(text.as_bytes(), None) {
            Err(DatasetError::Parse { line, reason }) => {
                // header is line 1, the seventh data row is line 8
                assert_eq!(line, 8);
                assert!(reason.contains("f1"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_label_is_a_schema_error() {
        assert!(matches!(
            parse_csv(b"f0,f1\n1,2\n", None),
            Err(DatasetError::Schema(_))
        ));
        assert!(matches!(
            parse_csv(b"f0,label\n1,\n", None),
            Err(DatasetError::Schema(_))
        ));
        assert!(matches!(
            parse_csv(b"f0,label\n", None),
            Err(DatasetError::Schema(_))
        ));
    }

    #[test]
    fn boundaries_cut_unsegmented_files() {
        let text = "f0,label\n0,0\n1,1\n2,0\n3,1\n4,0\n";
        let d = parse_csv(text.as_bytes(), Some(&[2, 4])).unwrap();
        let sizes: Vec<usize> = d.segments.iter().map(DataSegment::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert!(parse_csv(text.as_bytes(), Some(&[3, 2])).is_err());
        assert!(parse_csv(text.as_bytes(), Some(&[5])).is_err());
        assert_eq!(parse_csv(text.as_bytes(), None).unwrap().segments.len(), 1);
    }

    #[test]
    fn csv_text_round_trips_bitwise() {
        let segs = vec![
            DataSegment::new(
                0,
                vec![
                    Sample::new(vec![0.1 + 0.2, -1e-300], 1),
                    Sample::new(vec![1.0 / 3.0, 7.0], 0),
                ],
            ),
            DataSegment::new(1, vec![Sample::new(vec![f64::MAX, f64::MIN_POSITIVE], 1)]),
        ];
        let bytes = to_csv(&segs).unwrap();
        let back = parse_csv(&bytes, None).unwrap();
        assert_eq!(back.segments, segs);
        assert_eq!(back.label_map, vec![(0, 0), (1, 1)]);
    }
}
