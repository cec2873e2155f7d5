//! Loss, Adam, the plateau learning-rate rule and the epoch training loop.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::nn::{Checkpoint, Layer, Mode, Model, NamedTensor, NumericBatch, Param};
use crate::rng::{self, Stream};
use crate::signal::Dataset;

/// Row-wise softmax of `[B, K, 1]` logits.
pub fn softmax(logits: &NumericBatch) -> Vec<Vec<f64>> {
    let k = logits.channels();
    (0..logits.batch())
        .map(|b| {
            let row = logits.sample(b);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            debug_assert_eq!(exps.len(), k);
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean cross-entropy of `[B, K, 1]` logits against integer labels, and its
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &NumericBatch, labels: &[usize]) -> Result<(f64, NumericBatch)> {
    let [b, k, t] = logits.shape();
    if t != 1 || labels.len() != b {
        return Err(Error::Shape(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut grad = NumericBatch::zeros(b, k, 1);
    let mut loss = 0.0;
    for (bi, &label) in labels.iter().enumerate() {
        let row = logits.sample(bi);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[bi * k..(bi + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn for_model<L: Layer + ?Sized>(model: &L) -> Self {
        Self::new(&model.params())
    }

    /// Moments as checkpoint tensors named `adam.m/<param>` and `adam.v/<param>`.
    pub fn to_tensors(&self, params: &[&Param]) -> Vec<NamedTensor> {
        let mut out = vec![NamedTensor {
            name: "adam.t".into(),
            shape: vec![1],
            values: vec![self.t as f64],
        }];
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            for (kind, values) in [("m", m), ("v", v)] {
                out.push(NamedTensor {
                    name: format!("adam.{kind}/{}", p.name),
                    shape: p.shape.clone(),
                    values: values.clone(),
                });
            }
        }
        out
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint, params: &[&Param]) -> Result<Self> {
        let mut state = Self::new(params);
        let t = checkpoint
            .tensor("adam.t")
            .ok_or_else(|| Error::Checkpoint("no optimizer state".into()))?;
        state.t = t.values[0] as u64;
        for (i, p) in params.iter().enumerate() {
            for (kind, slot) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let name = format!("adam.{kind}/{}", p.name);
                let tensor = checkpoint
                    .tensor(&name)
                    .filter(|t| t.values.len() == p.len())
                    .ok_or_else(|| Error::Checkpoint(format!("missing or malformed `{name}`")))?;
                slot.clone_from(&tensor.values);
            }
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update over `params` using their accumulated gradients.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.len() != state.m[i].len() {
            return Err(Error::Shape(format!("optimizer moment shape mismatch for `{}`", p.name)));
        }
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(p.name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let Param { value, grad, .. } = &mut **p;
        for (((w, &g), mi), vi) in value.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub lr_floor: f64,
    pub seed: u64,
    /// Write a checkpoint every N epochs (0 disables) and at each new best validation accuracy.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            epochs: 100,
            batch_size: 128,
            shuffle: true,
            plateau_patience: 5,
            plateau_factor: 0.5,
            lr_floor: 1e-6,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters under `prefix`; the seed and checkpoint directory are
    /// supplied by the caller and not serialised.
    pub fn to_kv(&self, kv: &mut KvMap, prefix: &str) {
        kv.set(format!("{prefix}learning_rate"), self.learning_rate);
        kv.set(format!("{prefix}epochs"), self.epochs);
        kv.set(format!("{prefix}batch_size"), self.batch_size);
        kv.set(format!("{prefix}shuffle"), self.shuffle);
        kv.set(format!("{prefix}plateau_patience"), self.plateau_patience);
        kv.set(format!("{prefix}plateau_factor"), self.plateau_factor);
        kv.set(format!("{prefix}lr_floor"), self.lr_floor);
        kv.set(format!("{prefix}checkpoint_every"), self.checkpoint_every);
    }

    pub fn update_from_kv(&mut self, kv: &KvMap, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}{k}");
        if let Some(v) = kv.get(&key("learning_rate"))? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.get(&key("epochs"))? {
            self.epochs = v;
        }
        if let Some(v) = kv.get(&key("batch_size"))? {
            self.batch_size = v;
        }
        if let Some(v) = kv.get(&key("shuffle"))? {
            self.shuffle = v;
        }
        if let Some(v) = kv.get(&key("plateau_patience"))? {
            self.plateau_patience = v;
        }
        if let Some(v) = kv.get(&key("plateau_factor"))? {
            self.plateau_factor = v;
        }
        if let Some(v) = kv.get(&key("lr_floor"))? {
            self.lr_floor = v;
        }
        if let Some(v) = kv.get(&key("checkpoint_every"))? {
            self.checkpoint_every = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("train.plateau_factor", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("train.plateau_patience", "must be positive"));
        }
        Ok(())
    }
}

/// Reduce-on-plateau rule over validation accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    best: Option<f64>,
    stale: usize,
    patience: usize,
    factor: f64,
    floor: f64,
}

impl PlateauScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        PlateauScheduler {
            lr: config.learning_rate,
            best: None,
            stale: 0,
            patience: config.plateau_patience,
            factor: config.plateau_factor,
            floor: config.lr_floor,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation accuracy; returns the rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(best) if metric <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.floor);
                    self.stale = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Learning rate in effect after observing `history` (one entry per epoch).
pub fn plateau_lr(history: &[f64], config: &TrainConfig) -> f64 {
    let mut s = PlateauScheduler::new(config);
    for &h in history {
        s.step(h);
    }
    s.lr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRow>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc,lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:e}", r.epoch, r.loss, r.train_acc, r.val_acc, r.lr);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.epochs.last()
    }
}

/// Training stopped early; `partial` holds the completed epochs.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub partial: TrainReport,
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        a.error
    }
}

impl From<Error> for TrainAbort {
    fn from(error: Error) -> Self {
        TrainAbort {
            error,
            partial: TrainReport::default(),
        }
    }
}

/// Single-channel batch of the segments at `indices`.
pub fn gather_batch(dataset: &Dataset, indices: &[usize]) -> Result<NumericBatch> {
    NumericBatch::from_rows(
        indices.iter().map(|&i| dataset.segments()[i].samples.as_slice()),
        dataset.segment_length(),
    )
}

/// Eval-mode class probabilities for every segment, in dataset order.
pub fn predict_probabilities<L: Layer + ?Sized>(model: &mut L, dataset: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(dataset.len());
    // eval mode never draws from the generator
    let mut rng = rng::stream(0, Stream::Dropout);
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let x = gather_batch(dataset, chunk)?;
        let logits = model.forward(&x, Mode::Eval, &mut rng)?;
        out.extend(softmax(&logits));
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn predict<L: Layer + ?Sized>(model: &mut L, dataset: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    Ok(predict_probabilities(model, dataset, batch_size)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

pub fn accuracy_against(preds: &[usize], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64
}

fn save_model_checkpoint(model: &Model, state: &AdamState, path: PathBuf) -> Result<()> {
    let mut ckpt = Checkpoint::capture(model);
    for t in state.to_tensors(&model.params()) {
        ckpt.push(t);
    }
    ckpt.save(&path)
}

/// Mini-batch training with Adam and the plateau schedule. The model is
/// updated in place. Validation accuracy (eval mode, against the dataset's
/// labels) drives the schedule; an empty validation set falls back to training
/// accuracy.
pub fn train(model: &mut Model, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainReport, TrainAbort> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set").into());
    }
    model.config().accepts_len(train_set.segment_length())?;
    let started = Instant::now();
    let mut report = TrainReport::default();
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout);
    let mut state = AdamState::for_model(model);
    let mut scheduler = PlateauScheduler::new(config);
    let labels = train_set.labels();
    let val_labels = val_set.labels();
    let mut best_val = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let abort = |error: Error, report: &TrainReport, started: &Instant| TrainAbort {
        error,
        partial: TrainReport {
            epochs: report.epochs.clone(),
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    };

    for epoch in 0..config.epochs {
        let lr = scheduler.lr();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let step = (|| -> Result<(f64, usize)> {
                let x = gather_batch(train_set, chunk)?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                model.zero_grad();
                let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
                let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence("loss".into()));
                }
                let hits = (0..y.len()).filter(|&b| argmax(logits.sample(b)) == y[b]).count();
                model.backward(&grad)?;
                adam_step(&mut model.params_mut(), &mut state, lr)?;
                Ok((loss, hits))
            })();
            match step {
                Ok((loss, hits)) => {
                    loss_sum += loss * chunk.len() as f64;
                    correct += hits;
                }
                Err(e) => return Err(abort(e, &report, &started)),
            }
        }
        let train_acc = correct as f64 / train_set.len() as f64;
        let val_acc = if val_set.is_empty() {
            train_acc
        } else {
            let preds = predict(model, val_set, config.batch_size).map_err(|e| abort(e, &report, &started))?;
            accuracy_against(&preds, &val_labels)
        };
        scheduler.step(val_acc);
        report.epochs.push(EpochRow {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc,
            val_acc,
            lr,
        });
        if let Some(dir) = &config.checkpoint_dir {
            let save = |name: String| save_model_checkpoint(model, &state, dir.join(name));
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save(format!("epoch{:04}.ckpt", epoch + 1)).map_err(|e| abort(e, &report, &started))?;
            }
            if val_acc > best_val {
                save("best.ckpt".into()).map_err(|e| abort(e, &report, &started))?;
            }
        }
        best_val = best_val.max(val_acc);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BackboneConfig, ModelConfig, PlainCnnConfig};
    use crate::signal::{LabeledSegment, Provenance, RhythmCategory};
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(rows: &[&[f64]]) -> NumericBatch {
        let k = rows[0].len();
        NumericBatch::from_vec([rows.len(), k, 1], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln5() {
        let (loss, _) = softmax_cross_entropy(&logits(&[&[0.0; 5]]), &[3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.609438).abs() < 1e-6);
    }

    #[test]
    fn huge_true_logit_is_stable() {
        let (loss, grad) = softmax_cross_entropy(&logits(&[&[0.0, 1e4, 0.0, 0.0, 0.0]]), &[1]).unwrap();
        assert!(loss < 1e-6 && loss.is_finite());
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&logits(&[&[0.0; 5]]), &[5]),
            Err(Error::LabelOutOfRange { label: 5, classes: 5 })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let x = logits(&refs);
        let labels = [0, 4, 2, 2];
        let (_, grad) = softmax_cross_entropy(&x, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let numeric = (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0) / (2.0 * eps);
            assert!(crate::nn::relative_error(grad.data()[i], numeric) < 1e-6, "coord {i}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&logits(&[&[1.0, -2.0, 30.0], &[0.5, 0.5, 0.5]]));
        for row in p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = Param::new("w", vec![1], vec![0.0]);
        p.grad[0] = 1.0;
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &mut state, 0.002).unwrap();
        assert!((p.value[0] + 0.002 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradients_leave_params() {
        let mut p = Param::new("w", vec![3], vec![1.0, -2.0, 0.5]);
        let mut state = AdamState::new(&[&p]);
        for _ in 0..50 {
            adam_step(&mut [&mut p], &mut state, 0.01).unwrap();
        }
        assert_eq!(p.value, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = Param::new("block1.conv1.weight", vec![1], vec![0.0]);
        p.grad[0] = f64::NAN;
        let mut state = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &mut state, 0.01).unwrap_err();
        assert!(matches!(&err, Error::Divergence(name) if name == "block1.conv1.weight"));
        assert!(err.to_string().contains("divergence detected"));
    }

    #[test]
    fn adam_minimises_square() {
        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=100 {
            let g = 2.0 * w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            reference.push(w_ref);
        }

        let mut p = Param::new("w", vec![1], vec![1.0]);
        let mut state = AdamState::new(&[&p]);
        let mut path = vec![1.0];
        for want in &reference {
            p.grad[0] = 2.0 * p.value[0];
            adam_step(&mut [&mut p], &mut state, 0.1).unwrap();
            assert!((p.value[0] - want).abs() < 1e-12);
            path.push(p.value[0]);
        }
        let first_below = path.iter().position(|w| w.abs() < 0.1).unwrap();
        assert!(path[..=first_below].windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!(p.value[0].abs() < 0.1);
    }

    #[test]
    fn plateau_rules() {
        let cfg = TrainConfig::default();
        let improving: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        assert_eq!(plateau_lr(&improving, &cfg), 0.002);

        let flat = vec![0.5; 21];
        let mut s = PlateauScheduler::new(&cfg);
        let mut halvings = Vec::new();
        for (epoch, &v) in flat.iter().enumerate() {
            let before = s.lr();
            if s.step(v) < before {
                halvings.push(epoch);
            }
        }
        assert_eq!(halvings, vec![5, 10, 15, 20]);

        let long_flat = vec![0.1; 1000];
        let mut s = PlateauScheduler::new(&cfg);
        let mut prev = s.lr();
        for &v in &long_flat {
            let lr = s.step(v);
            assert!(lr <= prev && lr >= 1e-6);
            prev = lr;
        }
        assert_eq!(prev, 1e-6);
    }

    fn toy_dataset(n_per_class: usize, len: usize, seed: u64) -> Dataset {
        // sine (category N) against square wave (category V) with random phase
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(len);
        for i in 0..2 * n_per_class {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let square = i % 2 == 1;
            let samples = (0..len)
                .map(|t| {
                    let s = (t as f64 * 0.4 + phase).sin();
                    if square { s.signum() } else { s }
                })
                .collect();
            ds.push(LabeledSegment {
                samples,
                category: if square { RhythmCategory::V } else { RhythmCategory::N },
                source_record: "toy".into(),
                provenance: Provenance::Original,
            })
            .unwrap();
        }
        ds
    }

    fn tiny_resnet() -> ModelConfig {
        ModelConfig::ResNet(BackboneConfig {
            stem_filters: 4,
            num_blocks: 2,
            filter_schedule: vec![4, 8],
            kernel_size: 3,
            pool_every: 2,
            dropout_keep_train: 1.0,
            num_categories: 5,
        })
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let ds = toy_dataset(16, 32, 1);
        let mut model = Model::build(&tiny_resnet(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &ds, &Dataset::new(32), &cfg).unwrap();
        assert_eq!(report.epochs.len(), 20);
        assert_eq!(report.last().unwrap().train_acc, 1.0);
        let lrs: Vec<f64> = report.epochs.iter().map(|r| r.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_dataset(8, 32, 4);
        let val = toy_dataset(4, 32, 5);
        let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 9, ..TrainConfig::default() };
        let config = ModelConfig::PlainCnn(PlainCnnConfig {
            filters: vec![4, 4],
            kernel_size: 3,
            input_len: 32,
            num_categories: 5,
        });
        let run = || {
            let mut m = Model::build(&config, 1).unwrap();
            let r = train(&mut m, &ds, &val, &cfg).unwrap();
            let bits: Vec<u64> = m.params().iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect();
            (r.to_csv(), bits)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = toy_dataset(4, 32, 4);
        let mut model = Model::build(&tiny_resnet(), 3).unwrap();
        let before: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        let report = train(&mut model, &ds, &ds, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert!(report.epochs.is_empty());
        let after: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn overfits_one_batch() {
        let ds = toy_dataset(4, 32, 6);
        let mut model = Model::build(&tiny_resnet(), 8).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let x = gather_batch(&ds, &idx).unwrap();
        let y = ds.labels();
        let mut state = AdamState::for_model(&model);
        let mut rng = rng::stream(0, Stream::Dropout);
        let mut losses = Vec::new();
        for _ in 0..10 {
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train, &mut rng).unwrap();
            let (loss, grad) = softmax_cross_entropy(&logits, &y).unwrap();
            losses.push(loss);
            model.backward(&grad).unwrap();
            adam_step(&mut model.params_mut(), &mut state, 1e-3).unwrap();
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn checkpoints_written_with_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(4, 32, 4);
        let mut model = Model::build(&tiny_resnet(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            checkpoint_every: 1,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        train(&mut model, &ds, &ds, &cfg).unwrap();
        assert!(dir.path().join("epoch0002.ckpt").exists());
        let ckpt = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
        let restored = ckpt.restore().unwrap();
        let state = AdamState::from_checkpoint(&ckpt, &restored.params()).unwrap();
        assert!(state.t > 0);
    }
}
