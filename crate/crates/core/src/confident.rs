//! Two-stage confidence-based training: a first-stage network scores how much
//! it agrees with every training label, low-scoring samples are dropped, and
//! the residual network is trained on what remains.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, ConfusionMatrix};
use crate::nn::{BackboneConfig, Layer, Model, ModelConfig, PlainCnnConfig};
use crate::optim::{argmax, predict, predict_probabilities, train, TrainAbort, TrainConfig, TrainReport};
use crate::preprocess::{split_indices, SplitConfig};
use crate::rng::{child_seed, Stream};
use crate::signal::{Dataset, RhythmCategory};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// Probability assigned to the segment's given label.
    LabelProbability,
    /// Probability of the most likely category.
    MaxProbability,
}

impl ScoreRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreRule::LabelProbability => "label_probability",
            ScoreRule::MaxProbability => "max_probability",
        }
    }
}

impl std::str::FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_probability" => Ok(ScoreRule::LabelProbability),
            "max_probability" => Ok(ScoreRule::MaxProbability),
            other => Err(Error::config("confident.score_rule", format!("unknown rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceConfig {
    pub threshold: f64,
    pub score_rule: ScoreRule,
    /// Keep only scores strictly above the threshold.
    pub strict: bool,
    /// Fraction of the raw training set kept for training; the rest validates.
    pub train_fraction: f64,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Root seed; the split and both stages derive their own streams from it.
    pub seed: u64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            threshold: 0.8,
            score_rule: ScoreRule::LabelProbability,
            strict: false,
            train_fraction: 0.9,
            stage1: StageConfig {
                model: ModelConfig::PlainCnn(PlainCnnConfig::default()),
                train: TrainConfig::default(),
            },
            stage2: StageConfig {
                model: ModelConfig::ResNet(BackboneConfig::default()),
                train: TrainConfig::default(),
            },
            seed: 0,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.threshold)?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("confident.train_fraction", "must lie in (0, 1]"));
        }
        self.stage1.train.validate()?;
        self.stage2.train.validate()
    }
}

fn validate_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::config("confident.threshold", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Scores from precomputed class probabilities.
pub fn scores_from_probabilities(probs: &[Vec<f64>], labels: &[usize], rule: ScoreRule) -> Vec<f64> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| match rule {
            ScoreRule::LabelProbability => p[l],
            ScoreRule::MaxProbability => p[argmax(p)],
        })
        .collect()
}

/// One eval-mode score per segment.
pub fn confidence_scores<L: Layer + ?Sized>(model: &mut L, dataset: &Dataset, rule: ScoreRule) -> Result<Vec<f64>> {
    let probs = predict_probabilities(model, dataset, 256)?;
    Ok(scores_from_probabilities(&probs, &dataset.labels(), rule))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub threshold: f64,
    pub strict: bool,
    pub kept_per_category: [usize; RhythmCategory::COUNT],
    pub dropped_per_category: [usize; RhythmCategory::COUNT],
    /// Score counts over `[0, 1]` in equal bins; 1.0 falls in the last bin.
    pub histogram: [usize; HISTOGRAM_BINS],
    /// Input positions of the kept segments, ascending.
    pub kept_indices: Vec<usize>,
}

impl FilterReport {
    pub fn kept(&self) -> usize {
        self.kept_per_category.iter().sum()
    }

    pub fn dropped(&self) -> usize {
        self.dropped_per_category.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.kept() + self.dropped()
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.kept() as f64 / self.total() as f64
        }
    }

    /// Input positions that were dropped, ascending.
    pub fn dropped_indices(&self) -> Vec<usize> {
        let mut kept = self.kept_indices.iter().peekable();
        (0..self.total())
            .filter(|i| {
                if kept.peek() == Some(&i) {
                    kept.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rule = if self.strict { ">" } else { ">=" };
        let _ = writeln!(out, "threshold {rule} {}", self.threshold);
        let _ = writeln!(out, "kept {} of {} ({:.4})", self.kept(), self.total(), self.kept_fraction());
        for c in RhythmCategory::ALL {
            let _ = writeln!(
                out,
                "{c}: kept {} dropped {}",
                self.kept_per_category[c.index()],
                self.dropped_per_category[c.index()]
            );
        }
        out.push_str("score histogram\n");
        for (b, n) in self.histogram.iter().enumerate() {
            let lo = b as f64 / HISTOGRAM_BINS as f64;
            let _ = writeln!(out, "[{lo:.2}, {:.2}{} {n}", lo + 1.0 / HISTOGRAM_BINS as f64, if b + 1 == HISTOGRAM_BINS { "]" } else { ")" });
        }
        out
    }
}

fn histogram(scores: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut h = [0; HISTOGRAM_BINS];
    for &s in scores {
        let b = ((s * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1;
    }
    h
}

/// Keeps segments whose score meets the threshold (`>=`, or `>` when `strict`),
/// preserving order.
pub fn filter_clean(dataset: &Dataset, scores: &[f64], threshold: f64, strict: bool) -> Result<(Dataset, FilterReport)> {
    if scores.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} segments",
            scores.len(),
            dataset.len()
        )));
    }
    let keep = |s: f64| if strict { s > threshold } else { s >= threshold };
    let mut report = FilterReport {
        threshold,
        strict,
        kept_per_category: [0; RhythmCategory::COUNT],
        dropped_per_category: [0; RhythmCategory::COUNT],
        histogram: histogram(scores),
        kept_indices: Vec::new(),
    };
    for (i, (seg, &s)) in dataset.iter().zip(scores).enumerate() {
        if keep(s) {
            report.kept_indices.push(i);
            report.kept_per_category[seg.category.index()] += 1;
        } else {
            report.dropped_per_category[seg.category.index()] += 1;
        }
    }
    if report.kept_indices.is_empty() && !dataset.is_empty() {
        let max_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::ThresholdTooHigh { max_score });
    }
    Ok((dataset.subset(&report.kept_indices), report))
}

/// Stage-1 artefacts reused across thresholds.
#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    pub model: Model,
    pub report: TrainReport,
    /// Scores for every raw training segment.
    pub scores: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_confusion: ConfusionMatrix,
}

impl Stage1Outcome {
    pub fn test_accuracy(&self) -> f64 {
        metrics(&self.test_confusion).accuracy
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub stage1_architecture: String,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
    pub filter: FilterReport,
    pub stage1_test: ConfusionMatrix,
    pub stage2_test: ConfusionMatrix,
    /// Size of the stage-2 training split after filtering.
    pub stage2_train_len: usize,
}

impl PipelineReport {
    pub fn stage1_accuracy(&self) -> f64 {
        metrics(&self.stage1_test).accuracy
    }

    pub fn stage2_accuracy(&self) -> f64 {
        metrics(&self.stage2_test).accuracy
    }
}

fn test_confusion(model: &mut Model, test: &Dataset) -> Result<ConfusionMatrix> {
    let k = model.config().num_categories();
    let preds = predict(model, test, 256)?;
    confusion(&preds, &test.labels(), k)
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..train.clone() }
}

/// Splits the raw set, trains the first stage on the training part and scores
/// every raw segment.
pub fn run_stage1(raw_train: &Dataset, test: &Dataset, config: &ConfidenceConfig) -> Result<Stage1Outcome> {
    config.validate()?;
    if raw_train.is_empty() {
        return Err(Error::EmptyDataset("raw training set"));
    }
    let (train_indices, val_indices) = if config.train_fraction < 1.0 {
        split_indices(
            raw_train,
            &SplitConfig {
                train_fraction: config.train_fraction,
                seed: config.seed,
                record_disjoint: false,
            },
        )?
    } else {
        ((0..raw_train.len()).collect(), Vec::new())
    };
    let seed = child_seed(config.seed, Stream::Stage1);
    let mut model = Model::build(&config.stage1.model, seed)?;
    let report = train(
        &mut model,
        &raw_train.subset(&train_indices),
        &raw_train.subset(&val_indices),
        &seeded(&config.stage1.train, seed),
    )
    .map_err(Error::from)?;
    let scores = confidence_scores(&mut model, raw_train, config.score_rule)?;
    let test_confusion = test_confusion(&mut model, test)?;
    Ok(Stage1Outcome {
        model,
        report,
        scores,
        train_indices,
        val_indices,
        test_confusion,
    })
}

/// Filters with `threshold` and trains the residual network on the kept part
/// of each split.
pub fn run_stage2(
    raw_train: &Dataset,
    test: &Dataset,
    stage1: &Stage1Outcome,
    threshold: f64,
    config: &ConfidenceConfig,
) -> Result<(Model, PipelineReport), TrainAbort> {
    validate_threshold(threshold)?;
    let (_, filter) = filter_clean(raw_train, &stage1.scores, threshold, config.strict)?;
    let mut kept = vec![false; raw_train.len()];
    for &i in &filter.kept_indices {
        kept[i] = true;
    }
    let pick = |idx: &[usize]| idx.iter().copied().filter(|&i| kept[i]).collect::<Vec<_>>();
    let clean_train = raw_train.subset(&pick(&stage1.train_indices));
    let clean_val = raw_train.subset(&pick(&stage1.val_indices));
    if clean_train.is_empty() {
        let max_score = stage1.train_indices.iter().map(|&i| stage1.scores[i]).fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::ThresholdTooHigh { max_score }.into());
    }
    let seed = child_seed(config.seed, Stream::Stage2);
    let mut model = Model::build(&config.stage2.model, seed)?;
    let stage2 = train(&mut model, &clean_train, &clean_val, &seeded(&config.stage2.train, seed))?;
    let stage2_test = test_confusion(&mut model, test)?;
    let report = PipelineReport {
        stage1_architecture: config.stage1.model.architecture().to_string(),
        stage1: stage1.report.clone(),
        stage2,
        filter,
        stage1_test: stage1.test_confusion.clone(),
        stage2_test,
        stage2_train_len: clean_train.len(),
    };
    Ok((model, report))
}

/// Stage-1 training, scoring, filtering and stage-2 training. `test` carries
/// the labels the reported test metrics are measured against.
pub fn confident_pipeline(raw_train: &Dataset, test: &Dataset, config: &ConfidenceConfig) -> Result<(Model, PipelineReport)> {
    let stage1 = run_stage1(raw_train, test, config)?;
    Ok(run_stage2(raw_train, test, &stage1, config.threshold, config)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Done { accuracy: f64, kept_fraction: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub stage1_accuracy: f64,
    pub outcome: SweepOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `threshold,accuracy,kept_fraction,stage1_accuracy`; failed thresholds
    /// leave the accuracy and kept-fraction fields empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,accuracy,kept_fraction,stage1_accuracy\n");
        for r in &self.rows {
            match &r.outcome {
                SweepOutcome::Done { accuracy, kept_fraction } => {
                    let _ = writeln!(out, "{},{accuracy:.6},{kept_fraction:.6},{:.6}", r.threshold, r.stage1_accuracy);
                }
                SweepOutcome::Failed(_) => {
                    let _ = writeln!(out, "{},,,{:.6}", r.threshold, r.stage1_accuracy);
                }
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<(f64, &str)> {
        self.rows
            .iter()
            .filter_map(|r| match &r.outcome {
                SweepOutcome::Failed(reason) => Some((r.threshold, reason.as_str())),
                SweepOutcome::Done { .. } => None,
            })
            .collect()
    }

    pub fn accuracies(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| match r.outcome {
                SweepOutcome::Done { accuracy, .. } => Some(accuracy),
                SweepOutcome::Failed(_) => None,
            })
            .collect()
    }
}

/// Runs the pipeline once per threshold, in the given order. Stage 1 depends
/// only on the seed, so it is trained once and shared. A failing threshold is
/// recorded and the sweep continues, except for divergence, which aborts.
pub fn threshold_sweep(raw_train: &Dataset, test: &Dataset, thresholds: &[f64], config: &ConfidenceConfig) -> Result<SweepTable> {
    if thresholds.is_empty() {
        return Err(Error::config("sweep.thresholds", "at least one threshold is required"));
    }
    for &t in thresholds {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::config("sweep.thresholds", format!("{t} is outside (0, 1]")));
        }
    }
    let stage1 = run_stage1(raw_train, test, config)?;
    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let outcome = match run_stage2(raw_train, test, &stage1, threshold, config) {
            Ok((_, report)) => SweepOutcome::Done {
                accuracy: report.stage2_accuracy(),
                kept_fraction: report.filter.kept_fraction(),
            },
            Err(TrainAbort { error: e @ Error::Divergence(_), .. }) => return Err(e),
            Err(abort) => SweepOutcome::Failed(abort.error.to_string()),
        };
        rows.push(SweepRow {
            threshold,
            stage1_accuracy: stage1.test_accuracy(),
            outcome,
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NumericBatch, Param};
    use crate::rng::Rng;
    use crate::signal::{LabeledSegment, Provenance};
    use proptest::prelude::*;

    fn seg(c: RhythmCategory, v: f64) -> LabeledSegment {
        LabeledSegment {
            samples: vec![v, -v],
            category: c,
            source_record: "r".into(),
            provenance: Provenance::Original,
        }
    }

    fn dataset(cats: &[RhythmCategory]) -> Dataset {
        Dataset::from_segments(2, cats.iter().enumerate().map(|(i, &c)| seg(c, i as f64 + 1.0)).collect()).unwrap()
    }

    /// Emits fixed logits regardless of input.
    struct FixedLogits(Vec<f64>);

    impl Layer for FixedLogits {
        fn forward(&mut self, x: &NumericBatch, _: crate::nn::Mode, _: &mut Rng) -> Result<NumericBatch> {
            let b = x.batch();
            NumericBatch::from_vec([b, self.0.len(), 1], self.0.repeat(b))
        }

        fn backward(&mut self, g: &NumericBatch) -> Result<NumericBatch> {
            Ok(g.clone())
        }

        fn params(&self) -> Vec<&Param> {
            Vec::new()
        }
    }

    #[test]
    fn score_rules() {
        let probs: [f64; 5] = [0.7, 0.1, 0.1, 0.05, 0.05];
        let mut model = FixedLogits(probs.iter().map(|p| p.ln()).collect());
        let ds = dataset(&[RhythmCategory::N, RhythmCategory::V]);
        let label = confidence_scores(&mut model, &ds, ScoreRule::LabelProbability).unwrap();
        let max = confidence_scores(&mut model, &ds, ScoreRule::MaxProbability).unwrap();
        assert!((label[0] - 0.7).abs() < 1e-12);
        assert!((label[1] - 0.1).abs() < 1e-12);
        assert!((max[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ties_are_kept() {
        let ds = dataset(&[RhythmCategory::N, RhythmCategory::V, RhythmCategory::S]);
        let (clean, report) = filter_clean(&ds, &[0.85, 0.80, 0.79], 0.8, false).unwrap();
        assert_eq!(clean.len(), 2);
        assert_eq!(report.kept_indices, vec![0, 1]);
        assert_eq!(report.dropped_indices(), vec![2]);
        assert_eq!(report.kept_per_category[RhythmCategory::V.index()], 1);
        let (strict, _) = filter_clean(&ds, &[0.85, 0.80, 0.79], 0.8, true).unwrap();
        assert_eq!(strict.len(), 1);
        let (all, _) = filter_clean(&ds, &[0.85, 0.0, 0.79], 0.0, false).unwrap();
        assert_eq!(all, ds);
    }

    #[test]
    fn empty_selection_reports_max_score() {
        let ds = dataset(&[RhythmCategory::N, RhythmCategory::V]);
        let err = filter_clean(&ds, &[0.3, 0.6], 0.9, false).unwrap_err();
        assert!(matches!(err, Error::ThresholdTooHigh { max_score } if max_score == 0.6));
        assert!(err.to_string().contains("threshold too high"));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.049, 0.05, 0.999, 1.0]);
        assert_eq!((h[0], h[1], h[19]), (2, 1, 2));
        assert_eq!(h.iter().sum::<usize>(), 5);
    }

    proptest! {
        #[test]
        fn filtering_is_a_monotone_partition(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..60),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let cats: Vec<RhythmCategory> = (0..scores.len()).map(|i| RhythmCategory::ALL[i % 5]).collect();
            let ds = dataset(&cats);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let low = filter_clean(&ds, &scores, lo, false);
            let high = filter_clean(&ds, &scores, hi, false);
            if let Ok((_, high)) = &high {
                let (_, low) = low.as_ref().expect("lower threshold keeps a superset");
                prop_assert!(high.kept_indices.iter().all(|i| low.kept_indices.contains(i)));
            }
            if let Ok((clean, r)) = low {
                prop_assert_eq!(r.total(), ds.len());
                let dropped = r.dropped_indices();
                prop_assert_eq!(r.kept_indices.len() + dropped.len(), ds.len());
                prop_assert!(r.kept_indices.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(r.kept_indices.iter().all(|i| !dropped.contains(i)));
                for (j, &i) in r.kept_indices.iter().enumerate() {
                    prop_assert_eq!(clean.get(j), ds.get(i));
                }
            }
        }

        #[test]
        fn max_rule_bounds_label_rule(
            rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 5), 1..20),
            labels in proptest::collection::vec(0usize..5, 20),
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let labels = &labels[..probs.len()];
            let a = scores_from_probabilities(&probs, labels, ScoreRule::LabelProbability);
            let b = scores_from_probabilities(&probs, labels, ScoreRule::MaxProbability);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        }
    }
}
