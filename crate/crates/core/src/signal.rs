//! ECG records, beat annotations, rhythm categories and their on-disk formats.
//!
//! A record `name` lives in three sibling files:
//!
//! * `name.dat` holds little-endian `f32` samples, back to back;
//! * `name.hdr` is a UTF-8 `key: value` header (`record_id`, `sampling_rate_hz`,
//!   `sample_count`, `scale`);
//! * `name.ann.csv` lists beat annotations and is only written when the record
//!   has any.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 300.0;

const ANNOTATION_COLUMNS: &str = "record_id,start,end,qrs_start,qrs_end,category";

/// AAMI EC57 beat classes used throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RhythmCategory {
    N,
    V,
    S,
    A,
    Q,
}

impl RhythmCategory {
    pub const COUNT: usize = 5;
    pub const ALL: [RhythmCategory; 5] = [Self::N, Self::V, Self::S, Self::A, Self::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Self::N => 'N',
            Self::V => 'V',
            Self::S => 'S',
            Self::A => 'A',
            Self::Q => 'Q',
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::N => "normal heartbeat",
            Self::V => "ventricular premature beat",
            Self::S => "supraventricular premature beat",
            Self::A => "atrial fibrillation",
            Self::Q => "unclassifiable beat",
        }
    }
}

impl fmt::Display for RhythmCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for RhythmCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" => Ok(Self::N),
            "V" => Ok(Self::V),
            "S" => Ok(Self::S),
            "A" => Ok(Self::A),
            "Q" => Ok(Self::Q),
            other => Err(Error::UnknownCategory(other.to_string())),
        }
    }
}

/// One expert-labelled beat. Indices are half-open sample ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeatAnnotation {
    pub start_index: usize,
    pub end_index: usize,
    pub category: RhythmCategory,
    pub qrs_start: usize,
    pub qrs_end: usize,
}

impl BeatAnnotation {
    pub fn qrs_len(&self) -> usize {
        self.qrs_end - self.qrs_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub sampling_rate_hz: f64,
    /// Raw stored values; physical millivolts are `sample * scale`.
    pub samples: Vec<f32>,
    pub scale: f32,
    pub annotations: Vec<BeatAnnotation>,
}

impl EcgRecord {
    /// Builds a record and checks every structural invariant.
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate_hz: f64,
        samples: Vec<f32>,
        annotations: Vec<BeatAnnotation>,
    ) -> Result<Self> {
        let record = EcgRecord {
            record_id: record_id.into(),
            sampling_rate_hz,
            samples,
            scale: 1.0,
            annotations,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples in millivolts as 64-bit floats.
    pub fn physical(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|&s| f64::from(s) * f64::from(self.scale))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.record_id.is_empty() || self.record_id.contains(['\n', ',']) {
            return Err(Error::InvalidRecord(format!(
                "record_id `{}` must be non-empty without commas or newlines",
                self.record_id
            )));
        }
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "sampling_rate_hz must be positive, got {}",
                self.sampling_rate_hz
            )));
        }
        if !(self.scale.is_finite() && self.scale != 0.0) {
            return Err(Error::InvalidRecord(format!("scale must be finite and non-zero, got {}", self.scale)));
        }
        let len = self.samples.len();
        let mut prev_start = 0;
        for (row, a) in self.annotations.iter().enumerate() {
            check_annotation(row, a, len)?;
            if a.start_index < prev_start {
                return Err(Error::MalformedAnnotation {
                    row,
                    reason: "annotations must be sorted by start index".into(),
                });
            }
            prev_start = a.start_index;
        }
        Ok(())
    }
}

fn check_annotation(row: usize, a: &BeatAnnotation, len: usize) -> Result<()> {
    for (field, value) in [
        ("start", a.start_index),
        ("qrs_start", a.qrs_start),
    ] {
        if value >= len {
            return Err(Error::AnnotationOutOfRange { row, field, value, len });
        }
    }
    for (field, value) in [("end", a.end_index), ("qrs_end", a.qrs_end)] {
        if value > len {
            return Err(Error::AnnotationOutOfRange { row, field, value, len });
        }
    }
    if a.start_index >= a.end_index {
        return Err(Error::MalformedAnnotation {
            row,
            reason: format!("start {} must precede end {}", a.start_index, a.end_index),
        });
    }
    if !(a.start_index <= a.qrs_start && a.qrs_start < a.qrs_end && a.qrs_end <= a.end_index) {
        return Err(Error::MalformedAnnotation {
            row,
            reason: "qrs interval must be non-empty and nested in the beat span".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    WindowAugmented,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::WindowAugmented => "window_augmented",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "original" => Ok(Provenance::Original),
            "window_augmented" => Ok(Provenance::WindowAugmented),
            other => Err(Error::config("provenance", format!("unknown value `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub samples: Vec<f64>,
    pub category: RhythmCategory,
    pub source_record: String,
    pub provenance: Provenance,
}

/// Fixed-length labelled segments with per-category counts kept current.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    segments: Vec<LabeledSegment>,
    segment_length: usize,
    counts: [usize; RhythmCategory::COUNT],
}

impl Dataset {
    pub fn new(segment_length: usize) -> Self {
        Dataset {
            segments: Vec::new(),
            segment_length,
            counts: [0; RhythmCategory::COUNT],
        }
    }

    pub fn from_segments(segment_length: usize, segments: Vec<LabeledSegment>) -> Result<Self> {
        let mut ds = Dataset::new(segment_length);
        ds.segments.reserve(segments.len());
        for s in segments {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, segment: LabeledSegment) -> Result<()> {
        if segment.samples.len() != self.segment_length {
            return Err(Error::SegmentLength {
                expected: self.segment_length,
                actual: segment.samples.len(),
            });
        }
        self.counts[segment.category.index()] += 1;
        self.segments.push(segment);
        Ok(())
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[LabeledSegment] {
        &self.segments
    }

    pub fn get(&self, i: usize) -> Option<&LabeledSegment> {
        self.segments.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSegment> {
        self.segments.iter()
    }

    pub fn count(&self, category: RhythmCategory) -> usize {
        self.counts[category.index()]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.category.index()).collect()
    }

    /// New dataset holding the segments at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut ds = Dataset::new(self.segment_length);
        for &i in indices {
            let s = self.segments[i].clone();
            ds.counts[s.category.index()] += 1;
            ds.segments.push(s);
        }
        ds
    }

    /// Replaces the label of segment `i`, keeping counts consistent.
    pub fn relabel(&mut self, i: usize, category: RhythmCategory) {
        let old = self.segments[i].category;
        self.counts[old.index()] -= 1;
        self.counts[category.index()] += 1;
        self.segments[i].category = category;
    }

    pub fn map_samples<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        for s in &mut self.segments {
            let out = f(&s.samples)?;
            if out.len() != self.segment_length {
                return Err(Error::SegmentLength {
                    expected: self.segment_length,
                    actual: out.len(),
                });
            }
            s.samples = out;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledSegment;
    type IntoIter = std::slice::Iter<'a, LabeledSegment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}

/// Per-category segment counts; every category is present, possibly at zero.
pub fn category_counts(dataset: &Dataset) -> BTreeMap<RhythmCategory, usize> {
    RhythmCategory::ALL
        .iter()
        .map(|&c| (c, dataset.count(c)))
        .collect()
}

pub fn header_path_for(sample_path: &Path) -> PathBuf {
    sample_path.with_extension("hdr")
}

pub fn annotation_path_for(sample_path: &Path) -> PathBuf {
    sample_path.with_extension("ann.csv")
}

struct Header {
    record_id: String,
    sampling_rate_hz: f64,
    sample_count: usize,
    scale: f32,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut fields = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| Error::MalformedHeader {
            field: format!("line {}", lineno + 1),
            reason: "expected `key: value`".into(),
        })?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |field: &str| {
        fields.get(field).ok_or_else(|| Error::MalformedHeader {
            field: field.into(),
            reason: "missing".into(),
        })
    };
    let bad = |field: &str, reason: String| Error::MalformedHeader {
        field: field.into(),
        reason,
    };

    let record_id = get("record_id")?.clone();
    let sampling_rate_hz: f64 = get("sampling_rate_hz")?
        .parse()
        .map_err(|e| bad("sampling_rate_hz", format!("{e}")))?;
    if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
        return Err(bad("sampling_rate_hz", "must be positive".into()));
    }
    let sample_count: usize = get("sample_count")?
        .parse()
        .map_err(|e| bad("sample_count", format!("{e}")))?;
    let scale: f32 = match fields.get("scale") {
        Some(v) => v.parse().map_err(|e| bad("scale", format!("{e}")))?,
        None => 1.0,
    };
    Ok(Header {
        record_id,
        sampling_rate_hz,
        sample_count,
        scale,
    })
}

fn parse_annotations(text: &str, len: usize) -> Result<Vec<BeatAnnotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("record_id")) {
            continue;
        }
        let row = out.len();
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(Error::MalformedAnnotation {
                row,
                reason: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let num = |i: usize, name: &str| -> Result<usize> {
            cols[i].parse().map_err(|e| Error::MalformedAnnotation {
                row,
                reason: format!("{name}: {e}"),
            })
        };
        let a = BeatAnnotation {
            start_index: num(1, "start")?,
            end_index: num(2, "end")?,
            qrs_start: num(3, "qrs_start")?,
            qrs_end: num(4, "qrs_end")?,
            category: cols[5].parse()?,
        };
        check_annotation(row, &a, len)?;
        out.push(a);
    }
    Ok(out)
}

/// Reads a record from its sample file and header; a sibling `.ann.csv`, when
/// present, is parsed and attached.
pub fn load_record(path: &Path, header_path: &Path) -> Result<EcgRecord> {
    let header_text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_header(&header_text)?;

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != header.sample_count {
        return Err(Error::SampleCountMismatch {
            declared: header.sample_count,
            actual: bytes.len() / 4,
        });
    }
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let ann_path = annotation_path_for(path);
    let annotations = if ann_path.exists() {
        let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        parse_annotations(&text, samples.len())?
    } else {
        Vec::new()
    };

    let record = EcgRecord {
        record_id: header.record_id,
        sampling_rate_hz: header.sampling_rate_hz,
        samples,
        scale: header.scale,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

/// Writes `record` to `path` (samples), plus the header and, when the record has
/// annotations, the annotation CSV next to it.
pub fn save_record(record: &EcgRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let mut bytes = Vec::with_capacity(record.samples.len() * 4);
    for s in &record.samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let header = format!(
        "record_id: {}\nsampling_rate_hz: {}\nsample_count: {}\nscale: {}\n",
        record.record_id,
        record.sampling_rate_hz,
        record.samples.len(),
        record.scale
    );
    let header_path = header_path_for(path);
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;

    let ann_path = annotation_path_for(path);
    if record.annotations.is_empty() {
        if ann_path.exists() {
            fs::remove_file(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        }
    } else {
        let mut csv = String::from(ANNOTATION_COLUMNS);
        csv.push('\n');
        for a in &record.annotations {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                record.record_id, a.start_index, a.end_index, a.qrs_start, a.qrs_end, a.category
            ));
        }
        fs::write(&ann_path, csv).map_err(|e| Error::io(&ann_path, e))?;
    }
    Ok(())
}
