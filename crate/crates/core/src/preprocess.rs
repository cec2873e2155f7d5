//! Segment preparation: QRS-anchored sliding windows, denoising,
//! standardization, class balancing and train/test splitting.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::signal::{BeatAnnotation, Dataset, EcgRecord, LabeledSegment, Provenance, RhythmCategory};
use crate::wavelet::{self, WaveletSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// Window length in samples.
    pub window_size: usize,
    /// Offset between consecutive window starts.
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 600,
            step: 20,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::config("window.step", "must be positive"));
        }
        if self.window_size <= self.step {
            return Err(Error::config("window.size", "must exceed window.step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    /// Keep every record's segments on one side of the split.
    pub record_disjoint: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
            record_disjoint: false,
        }
    }
}

/// Zero mean, unit population standard deviation.
pub fn standardize(segment: &[f64]) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let n = segment.len() as f64;
    let mean = segment.iter().sum::<f64>() / n;
    let var = segment.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // relative floor: rounding noise on a constant must not count as signal
    if !(var.is_finite() && var > 1e-24 * (1.0 + mean * mean)) {
        return Err(Error::ZeroVariance);
    }
    let inv_std = 1.0 / var.sqrt();
    Ok(segment.iter().map(|v| (v - mean) * inv_std).collect())
}

/// Window start offsets that fully contain the annotation's QRS interval.
///
/// Starts lie on the lattice `qrs_end - N + i*n` (the first window ends exactly
/// on the QRS end), limited to `s <= qrs_start`, `s >= 0` and `s + N <= len`.
pub fn window_starts(record_len: usize, annotation: &BeatAnnotation, config: &WindowConfig) -> Vec<usize> {
    let n = config.window_size as i64;
    let step = config.step as i64;
    let lb = annotation.qrs_start as i64;
    let ub = annotation.qrs_end as i64;
    let anchor = ub - n;
    let hi = lb.min(record_len as i64 - n);
    if anchor > lb || hi < 0 {
        return Vec::new();
    }
    // first lattice point at or after 0
    let first_i = if anchor >= 0 { 0 } else { (-anchor + step - 1) / step };
    let mut starts = Vec::new();
    let mut s = anchor + first_i * step;
    while s <= hi {
        starts.push(s as usize);
        s += step;
    }
    starts
}

pub fn slide_windows(record: &EcgRecord, annotation: &BeatAnnotation, config: &WindowConfig) -> Vec<LabeledSegment> {
    let starts = window_starts(record.len(), annotation, config);
    if starts.is_empty() {
        return Vec::new();
    }
    let physical = record.physical();
    starts
        .into_iter()
        .map(|s| LabeledSegment {
            samples: physical[s..s + config.window_size].to_vec(),
            category: annotation.category,
            source_record: record.record_id.clone(),
            provenance: Provenance::WindowAugmented,
        })
        .collect()
}

/// Denoising applied to each window before standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub wavelet: WaveletSpec,
    pub zero_levels: Vec<usize>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            wavelet: WaveletSpec::default(),
            zero_levels: vec![1, 2],
        }
    }
}

/// Window every annotation of `record`, denoise each window, then standardize.
/// Windows with zero variance after denoising are dropped.
pub fn enlarge_record(record: &EcgRecord, window: &WindowConfig, denoise: Option<&DenoiseConfig>) -> Result<Dataset> {
    window.validate()?;
    let mut ds = Dataset::new(window.window_size);
    for annotation in &record.annotations {
        for mut seg in slide_windows(record, annotation, window) {
            if let Some(cfg) = denoise {
                seg.samples = wavelet::denoise(&seg.samples, &cfg.wavelet, &cfg.zero_levels)?;
            }
            match standardize(&seg.samples) {
                Ok(s) => seg.samples = s,
                Err(Error::ZeroVariance) => continue,
                Err(e) => return Err(e),
            }
            ds.push(seg)?;
        }
    }
    Ok(ds)
}

/// Indices drawing exactly `per_class` members of every category, sampled
/// uniformly without replacement; returned in ascending order.
pub fn balanced_indices(labels: &[RhythmCategory], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; RhythmCategory::COUNT] = Default::default();
    for (i, c) in labels.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    for c in RhythmCategory::ALL {
        let available = by_class[c.index()].len();
        if available < per_class {
            return Err(Error::UnderPopulated {
                category: c.symbol(),
                available,
                requested: per_class,
            });
        }
    }
    let mut rng = rng::stream(seed, Stream::Balance);
    let mut chosen = Vec::with_capacity(per_class * RhythmCategory::COUNT);
    for members in &by_class {
        let picks = index::sample(&mut rng, members.len(), per_class);
        chosen.extend(picks.iter().map(|p| members[p]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn balance_classes(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    let labels: Vec<RhythmCategory> = dataset.iter().map(|s| s.category).collect();
    let chosen = balanced_indices(&labels, per_class, seed)?;
    Ok(dataset.subset(&chosen))
}

/// Index partition behind [`split`]; both halves ascending.
pub fn split_indices(dataset: &Dataset, config: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::config("split.train_fraction", "must lie in (0, 1)"));
    }
    let total = dataset.len();
    let target = (config.train_fraction * total as f64).round() as usize;
    let mut rng = rng::stream(config.seed, Stream::Split);
    let (mut train, mut test) = if config.record_disjoint {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in dataset.iter().enumerate() {
            groups.entry(s.source_record.as_str()).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
        groups.shuffle(&mut rng);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for g in groups {
            // take the group when it moves the train size closer to the target
            let with = (train.len() + g.len()).abs_diff(target);
            let without = train.len().abs_diff(target);
            if with < without {
                train.extend(g);
            } else {
                test.extend(g);
            }
        }
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        let test = order.split_off(target);
        (order, test)
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, config: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset, config)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
