//! On-disk segment sets.
//!
//! A directory holding `segments.hdr` (`key: value` lines with
//! `segment_length`, `count` and `format: f64le`), `segments.bin` (row-major
//! little-endian f64 samples) and `labels.csv`
//! (`index,category,source_record,provenance`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{Dataset, LabeledSegment, Provenance, RhythmCategory};

const HEADER: &str = "segments.hdr";
const SAMPLES: &str = "segments.bin";
const LABELS: &str = "labels.csv";

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = format!(
        "segment_length: {}\ncount: {}\nformat: f64le\n",
        dataset.segment_length(),
        dataset.len()
    );
    let mut bin = Vec::with_capacity(dataset.len() * dataset.segment_length() * 8);
    let mut labels = String::from("index,category,source_record,provenance\n");
    for (i, seg) in dataset.iter().enumerate() {
        for v in &seg.samples {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let _ = writeln!(labels, "{i},{},{},{}", seg.category, seg.source_record, seg.provenance.as_str());
    }
    for (name, bytes) in [(HEADER, header.as_bytes()), (SAMPLES, &bin[..]), (LABELS, labels.as_bytes())] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn header_field(text: &str, field: &'static str) -> Result<usize> {
    let value = text
        .lines()
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim() == field)
        .map(|(_, v)| v.trim())
        .ok_or_else(|| Error::MalformedHeader {
            field: field.into(),
            reason: "missing".into(),
        })?;
    value.parse().map_err(|_| Error::MalformedHeader {
        field: field.into(),
        reason: format!("`{value}` is not a count"),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let header = String::from_utf8_lossy(&read(HEADER)?).into_owned();
    let segment_length = header_field(&header, "segment_length")?;
    let count = header_field(&header, "count")?;
    if let Some((_, f)) = header.lines().filter_map(|l| l.split_once(':')).find(|(k, _)| k.trim() == "format") {
        if f.trim() != "f64le" {
            return Err(Error::MalformedHeader {
                field: "format".into(),
                reason: format!("unsupported `{}`", f.trim()),
            });
        }
    }
    let bin = read(SAMPLES)?;
    if bin.len() != count * segment_length * 8 {
        return Err(Error::SampleCountMismatch {
            declared: count * segment_length,
            actual: bin.len() / 8,
        });
    }
    let labels = String::from_utf8_lossy(&read(LABELS)?).into_owned();
    let mut segments = Vec::with_capacity(count);
    for (row, line) in labels.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedAnnotation {
                row,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        if fields[0].trim().parse::<usize>().ok() != Some(row) {
            return Err(Error::MalformedAnnotation {
                row,
                reason: format!("index `{}` out of sequence", fields[0]),
            });
        }
        if row >= count {
            return Err(Error::MalformedAnnotation {
                row,
                reason: "more label rows than segments".into(),
            });
        }
        let category: RhythmCategory = fields[1].trim().parse()?;
        let provenance: Provenance = fields[3].trim().parse()?;
        let samples = bin[row * segment_length * 8..(row + 1) * segment_length * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        segments.push(LabeledSegment {
            samples,
            category,
            source_record: fields[2].to_string(),
            provenance,
        });
    }
    if segments.len() != count {
        return Err(Error::MalformedAnnotation {
            row: segments.len(),
            reason: format!("{} label rows for {count} segments", segments.len()),
        });
    }
    Dataset::from_segments(segment_length, segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let segs = (0..4)
            .map(|i| LabeledSegment {
                samples: vec![i as f64, -0.5, 1e-300, f64::MAX],
                category: RhythmCategory::ALL[i % 5],
                source_record: format!("rec{i}"),
                provenance: if i % 2 == 0 { Provenance::Original } else { Provenance::WindowAugmented },
            })
            .collect();
        Dataset::from_segments(4, segs).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn detects_truncation_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(), dir.path()).unwrap();
        let bin = dir.path().join(SAMPLES);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::SampleCountMismatch { .. })));
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
