//! Finite-difference verification of the hand-written backward passes.
//!
//! Every loss evaluation runs in training mode with a freshly seeded dropout
//! stream, so the masks are identical across evaluations and the network is a
//! fixed differentiable function of its parameters.

use rand::seq::index;
use rand::Rng as _;

use super::layers::{Layer, Mode};
use super::tensor::NumericBatch;
use crate::error::Result;
use crate::optim::softmax_cross_entropy;
use crate::rng::{self, Stream};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per parameter tensor (and `input` for layer checks).
    pub per_tensor: Vec<(String, f64)>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, err: f64) {
        self.coordinates_checked += 1;
        self.max_relative_error = self.max_relative_error.max(err);
        match self.per_tensor.iter_mut().find(|(n, _)| n == name) {
            Some((_, e)) => *e = e.max(err),
            None => self.per_tensor.push((name.to_string(), err)),
        }
    }

    fn new() -> Self {
        GradCheckReport {
            max_relative_error: 0.0,
            per_tensor: Vec::new(),
            coordinates_checked: 0,
        }
    }
}

fn sample_coords(len: usize, fraction: f64, rng: &mut crate::rng::Rng) -> Vec<usize> {
    let n = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
    let mut picks = index::sample(rng, len, n).into_vec();
    picks.sort_unstable();
    picks
}

/// End-to-end check of the softmax cross-entropy loss gradient with respect to
/// a sampled `fraction` of every parameter tensor.
pub fn gradient_check<L: Layer + ?Sized>(
    net: &mut L,
    batch: &NumericBatch,
    labels: &[usize],
    epsilon: f64,
    fraction: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let loss_at = |net: &mut L| -> Result<f64> {
        let mut drop_rng = rng::stream(seed, Stream::Dropout);
        let logits = net.forward(batch, Mode::Train, &mut drop_rng)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    };

    for p in net.params_mut() {
        p.zero_grad();
    }
    let mut drop_rng = rng::stream(seed, Stream::Dropout);
    let logits = net.forward(batch, Mode::Train, &mut drop_rng)?;
    let (_, grad) = softmax_cross_entropy(&logits, labels)?;
    net.backward(&grad)?;
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut pick_rng = rng::stream(seed, Stream::Init);
    let mut report = GradCheckReport::new();
    let n_params = analytic.len();
    for pi in 0..n_params {
        let (name, len) = {
            let params = net.params();
            (params[pi].name.clone(), params[pi].len())
        };
        for idx in sample_coords(len, fraction, &mut pick_rng) {
            let original = net.params()[pi].value[idx];
            net.params_mut()[pi].value[idx] = original + epsilon;
            let plus = loss_at(net)?;
            net.params_mut()[pi].value[idx] = original - epsilon;
            let minus = loss_at(net)?;
            net.params_mut()[pi].value[idx] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            report.record(&name, relative_error(analytic[pi][idx], numeric));
        }
    }
    Ok(report)
}

/// Checks one layer against the scalar objective `sum(w ⊙ layer(x))` with a
/// fixed random `w`, covering the input gradient and every parameter.
pub fn check_layer<L: Layer + ?Sized>(
    layer: &mut L,
    input: &NumericBatch,
    mode: Mode,
    epsilon: f64,
    fraction: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let probe = |layer: &mut L, x: &NumericBatch| -> Result<NumericBatch> {
        let mut drop_rng = rng::stream(seed, Stream::Dropout);
        layer.forward(x, mode, &mut drop_rng)
    };
    let out = probe(layer, input)?;
    let mut wrng = rng::stream(seed, Stream::Shuffle);
    let weights: Vec<f64> = (0..out.len()).map(|_| wrng.random_range(-1.0..1.0)).collect();
    let objective = |o: &NumericBatch| o.data().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
    let upstream = NumericBatch::from_vec(out.shape(), weights.clone())?;

    for p in layer.params_mut() {
        p.zero_grad();
    }
    let grad_in = layer.backward(&upstream)?;
    let analytic: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::new();
    let mut pick_rng = rng::stream(seed, Stream::Init);
    let mut x = input.clone();
    for idx in sample_coords(x.len(), fraction, &mut pick_rng) {
        let original = x.data()[idx];
        x.data_mut()[idx] = original + epsilon;
        let plus = objective(&probe(layer, &x)?);
        x.data_mut()[idx] = original - epsilon;
        let minus = objective(&probe(layer, &x)?);
        x.data_mut()[idx] = original;
        report.record("input", relative_error(grad_in.data()[idx], (plus - minus) / (2.0 * epsilon)));
    }
    for (pi, grads) in analytic.iter().enumerate() {
        let name = layer.params()[pi].name.clone();
        for idx in sample_coords(grads.len(), fraction, &mut pick_rng) {
            let original = layer.params()[pi].value[idx];
            layer.params_mut()[pi].value[idx] = original + epsilon;
            let plus = objective(&probe(layer, input)?);
            layer.params_mut()[pi].value[idx] = original - epsilon;
            let minus = objective(&probe(layer, input)?);
            layer.params_mut()[pi].value[idx] = original;
            report.record(&name, relative_error(grads[idx], (plus - minus) / (2.0 * epsilon)));
        }
    }
    Ok(report)
}
