//! Synthetic beats built from one Gaussian per named wave (P, Q, R, S, T),
//! with per-category morphology and rhythm, additive white noise and
//! controllable label corruption. Not clinically faithful.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::preprocess::standardize;
use crate::rng::{self, Rng, Stream};
use crate::signal::{BeatAnnotation, Dataset, EcgRecord, LabeledSegment, Provenance, RhythmCategory};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sampling_rate_hz: f64,
    pub beats_per_category: usize,
    pub segment_length: usize,
    /// `f64::INFINITY` disables noise.
    pub noise_snr_db: f64,
    pub label_corruption_rate: f64,
    /// Relative spread of wave amplitudes and widths between beats.
    pub morphology_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sampling_rate_hz: 360.0,
            beats_per_category: 200,
            segment_length: 600,
            noise_snr_db: 20.0,
            label_corruption_rate: 0.0,
            morphology_jitter: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(Error::config("synth.sampling_rate_hz", "must be positive"));
        }
        if self.beats_per_category == 0 {
            return Err(Error::config("synth.beats_per_category", "must be at least 1"));
        }
        if self.segment_length < 2 {
            return Err(Error::config("synth.segment_length", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.label_corruption_rate) {
            return Err(Error::config("synth.label_corruption_rate", "must lie in [0, 1)"));
        }
        if self.noise_snr_db.is_nan() {
            return Err(Error::config("synth.noise_snr_db", "must be a number"));
        }
        if !(0.0..1.0).contains(&self.morphology_jitter) {
            return Err(Error::config("synth.morphology_jitter", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KvMap, prefix: &str) {
        kv.set(format!("{prefix}sampling_rate_hz"), self.sampling_rate_hz);
        kv.set(format!("{prefix}beats_per_category"), self.beats_per_category);
        kv.set(format!("{prefix}segment_length"), self.segment_length);
        kv.set(format!("{prefix}noise_snr_db"), self.noise_snr_db);
        kv.set(format!("{prefix}label_corruption_rate"), self.label_corruption_rate);
        kv.set(format!("{prefix}morphology_jitter"), self.morphology_jitter);
    }

    pub fn update_from_kv(&mut self, kv: &KvMap, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}{k}");
        if let Some(v) = kv.get(&key("sampling_rate_hz"))? {
            self.sampling_rate_hz = v;
        }
        if let Some(v) = kv.get(&key("beats_per_category"))? {
            self.beats_per_category = v;
        }
        if let Some(v) = kv.get(&key("segment_length"))? {
            self.segment_length = v;
        }
        if let Some(v) = kv.get(&key("noise_snr_db"))? {
            self.noise_snr_db = v;
        }
        if let Some(v) = kv.get(&key("label_corruption_rate"))? {
            self.label_corruption_rate = v;
        }
        if let Some(v) = kv.get(&key("morphology_jitter"))? {
            self.morphology_jitter = v;
        }
        Ok(())
    }
}

/// One Gaussian deflection: offset from the R peak (s), amplitude (mV), width (s).
#[derive(Debug, Clone, Copy)]
struct Wave {
    offset: f64,
    amplitude: f64,
    width: f64,
}

const fn wave(offset: f64, amplitude: f64, width: f64) -> Wave {
    Wave { offset, amplitude, width }
}

const P_WAVE: Wave = wave(-0.20, 0.15, 0.025);
const QRS_NARROW: [Wave; 3] = [wave(-0.035, -0.12, 0.010), wave(0.0, 1.0, 0.012), wave(0.035, -0.25, 0.012)];
const T_WAVE: Wave = wave(0.28, 0.30, 0.050);
const ECTOPIC_P: Wave = wave(-0.15, -0.10, 0.020);
const QRS_WIDE: [Wave; 3] = [wave(-0.06, -0.20, 0.025), wave(0.0, 1.3, 0.035), wave(0.07, -0.40, 0.030)];
const T_DISCORDANT: Wave = wave(0.35, -0.40, 0.070);

fn normal_beat() -> Vec<Wave> {
    let mut w = vec![P_WAVE];
    w.extend(QRS_NARROW);
    w.push(T_WAVE);
    w
}

fn no_p_beat() -> Vec<Wave> {
    let mut w = QRS_NARROW.to_vec();
    w.push(T_WAVE);
    w
}

fn random_beat(rng: &mut Rng) -> Vec<Wave> {
    vec![
        wave(rng.random_range(-0.25..-0.12), rng.random_range(-0.2..0.2), rng.random_range(0.015..0.04)),
        wave(rng.random_range(-0.06..-0.02), rng.random_range(-0.4..0.0), rng.random_range(0.006..0.03)),
        wave(0.0, rng.random_range(0.3..1.5) * if rng.random_bool(0.3) { -1.0 } else { 1.0 }, rng.random_range(0.008..0.05)),
        wave(rng.random_range(0.02..0.08), rng.random_range(-0.5..0.1), rng.random_range(0.006..0.03)),
        wave(rng.random_range(0.2..0.4), rng.random_range(-0.5..0.5), rng.random_range(0.03..0.09)),
    ]
}

/// Beat templates and R-peak times (s) relative to the centre beat.
fn rhythm(category: RhythmCategory, rng: &mut Rng) -> (Vec<(f64, Vec<Wave>)>, bool) {
    let base = 60.0 / rng.random_range(60.0..90.0);
    let (prev, next, centre, neighbour, fibrillation) = match category {
        RhythmCategory::N => (
            base * rng.random_range(0.95..1.05),
            base * rng.random_range(0.95..1.05),
            normal_beat(),
            normal_beat(),
            false,
        ),
        RhythmCategory::S => {
            let mut c = vec![ECTOPIC_P];
            c.extend(QRS_NARROW);
            c.push(T_WAVE);
            (
                base * rng.random_range(0.55..0.75),
                base * rng.random_range(1.1..1.3),
                c,
                normal_beat(),
                false,
            )
        }
        RhythmCategory::V => {
            let mut c = QRS_WIDE.to_vec();
            c.push(T_DISCORDANT);
            (
                base * rng.random_range(0.55..0.75),
                base * rng.random_range(1.25..1.5),
                c,
                normal_beat(),
                false,
            )
        }
        RhythmCategory::A => (
            base * rng.random_range(0.6..1.3),
            base * rng.random_range(0.6..1.3),
            no_p_beat(),
            no_p_beat(),
            true,
        ),
        RhythmCategory::Q => (
            base * rng.random_range(0.7..1.3),
            base * rng.random_range(0.7..1.3),
            random_beat(rng),
            normal_beat(),
            false,
        ),
    };
    let outer = |rng: &mut Rng| base * if fibrillation { rng.random_range(0.6..1.3) } else { rng.random_range(0.95..1.05) };
    let before = prev + outer(rng);
    let after = next + outer(rng);
    let beats = vec![
        (-before, neighbour.clone()),
        (-prev, neighbour.clone()),
        (0.0, centre),
        (next, neighbour.clone()),
        (after, neighbour),
    ];
    (beats, fibrillation)
}

/// A clean beat segment (centre R peak at the middle sample) and its noisy copy.
pub fn synth_beat_pair(category: RhythmCategory, config: &SynthConfig, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let fs = config.sampling_rate_hz;
    let len = config.segment_length;
    let centre = (len / 2) as f64 / fs;
    let (beats, fibrillation) = rhythm(category, rng);
    let jitter = config.morphology_jitter;
    let gain = 1.0 + jitter * rng.random_range(-1.0..1.0);
    let mut clean = vec![0.0; len];
    for (r_time, waves) in beats {
        for w in waves {
            let amp = gain * w.amplitude * (1.0 + jitter * rng.random_range(-1.0..1.0));
            let width = w.width * (1.0 + jitter * rng.random_range(-1.0..1.0));
            let at = centre + r_time + w.offset;
            for (i, v) in clean.iter_mut().enumerate() {
                let z = (i as f64 / fs - at) / width;
                if z.abs() < 8.0 {
                    *v += amp * (-0.5 * z * z).exp();
                }
            }
        }
    }
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wander_amp = 0.1 * rng.random_range(0.0..1.0);
    let (f_freq, f_phase) = (rng.random_range(5.0..7.0), rng.random_range(0.0..std::f64::consts::TAU));
    for (i, v) in clean.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += wander_amp * (std::f64::consts::TAU * 0.3 * t + wander_phase).sin();
        if fibrillation {
            *v += 0.05 * (std::f64::consts::TAU * f_freq * t + f_phase).sin();
        }
    }
    let mut noisy = clean.clone();
    if config.noise_snr_db.is_finite() {
        let power = clean.iter().map(|v| v * v).sum::<f64>() / len as f64;
        let sigma = (power / 10f64.powf(config.noise_snr_db / 10.0)).sqrt();
        for v in &mut noisy {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    (clean, noisy)
}

/// One noisy beat segment in millivolts.
pub fn synth_beat(category: RhythmCategory, config: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    synth_beat_pair(category, config, rng).1
}

/// `beats_per_category` standardized beats per category, grouped by category.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, Stream::Synth);
    let mut ds = Dataset::new(config.segment_length);
    for category in RhythmCategory::ALL {
        for _ in 0..config.beats_per_category {
            let samples = standardize(&synth_beat(category, config, &mut rng))?;
            ds.push(LabeledSegment {
                samples,
                category,
                source_record: "synth".into(),
                provenance: Provenance::Original,
            })?;
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Segments carrying their given (possibly corrupted) labels.
    pub dataset: Dataset,
    pub true_labels: Vec<RhythmCategory>,
    pub corruption_mask: Vec<bool>,
}

impl SynthDataset {
    pub fn corrupted_fraction(&self) -> f64 {
        if self.corruption_mask.is_empty() {
            return 0.0;
        }
        self.corruption_mask.iter().filter(|&&m| m).count() as f64 / self.corruption_mask.len() as f64
    }

    pub fn true_label_indices(&self) -> Vec<usize> {
        self.true_labels.iter().map(|c| c.index()).collect()
    }

    /// Rows `index,true,given,corrupted_flag`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("index,true,given,corrupted_flag\n");
        for (i, (seg, (t, m))) in self
            .dataset
            .iter()
            .zip(self.true_labels.iter().zip(&self.corruption_mask))
            .enumerate()
        {
            let _ = writeln!(out, "{i},{t},{},{}", seg.category, u8::from(*m));
        }
        out
    }

    /// Keeps the rows at `indices` in all three parallel fields.
    pub fn subset(&self, indices: &[usize]) -> SynthDataset {
        SynthDataset {
            dataset: self.dataset.subset(indices),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            corruption_mask: indices.iter().map(|&i| self.corruption_mask[i]).collect(),
        }
    }
}

/// Replaces each label independently with probability `rate` by a uniformly
/// drawn different category.
pub fn corrupt_labels(dataset: &Dataset, rate: f64, rng: &mut Rng) -> Result<SynthDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("synth.label_corruption_rate", "must lie in [0, 1)"));
    }
    let mut out = dataset.clone();
    let true_labels: Vec<RhythmCategory> = dataset.iter().map(|s| s.category).collect();
    let mut mask = vec![false; dataset.len()];
    for (i, &truth) in true_labels.iter().enumerate() {
        if rng.random_bool(rate) {
            let shift = rng.random_range(1..RhythmCategory::COUNT);
            let given = RhythmCategory::from_index((truth.index() + shift) % RhythmCategory::COUNT).expect("index in range");
            out.relabel(i, given);
            mask[i] = true;
        }
    }
    Ok(SynthDataset {
        dataset: out,
        true_labels,
        corruption_mask: mask,
    })
}

/// Generates the dataset and applies the configured corruption.
pub fn synth_noisy_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    let clean = synth_dataset(config)?;
    let mut rng = rng::stream(config.seed, Stream::Corruption);
    corrupt_labels(&clean, config.label_corruption_rate, &mut rng)
}

/// Concatenates segments into one record annotated with the given labels.
/// Each segment becomes one beat whose QRS spans ±40 ms around its centre.
pub fn to_record(dataset: &Dataset, record_id: &str, sampling_rate_hz: f64) -> Result<EcgRecord> {
    let len = dataset.segment_length();
    let half_qrs = ((0.04 * sampling_rate_hz).round() as usize).clamp(1, len / 2);
    let mut samples = Vec::with_capacity(dataset.len() * len);
    let mut annotations = Vec::with_capacity(dataset.len());
    for (i, seg) in dataset.iter().enumerate() {
        samples.extend(seg.samples.iter().map(|&v| v as f32));
        let centre = i * len + len / 2;
        annotations.push(BeatAnnotation {
            start_index: i * len,
            end_index: (i + 1) * len,
            category: seg.category,
            qrs_start: centre.saturating_sub(half_qrs).max(i * len),
            qrs_end: (centre + half_qrs).min((i + 1) * len),
        });
    }
    EcgRecord::new(record_id, sampling_rate_hz, samples, annotations)
}
