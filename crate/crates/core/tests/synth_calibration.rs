//! The generator must be learnable: a stage-1 CNN on clean labels separates the categories.

mod common;

use ecgcrn::nn::{Model, ModelConfig};
use ecgcrn::optim::{accuracy_against, predict, train};
use ecgcrn::rng::{child_seed, Stream};
use ecgcrn::signal::Dataset;
use ecgcrn::synth::{synth_dataset, SynthConfig};

#[test]
fn stage1_cnn_separates_clean_synthetic_beats() {
    let scale = common::Scale::acceptance();
    let train_set = synth_dataset(&SynthConfig {
        beats_per_category: 1000,
        ..scale.synth(21)
    })
    .unwrap();
    let test = synth_dataset(&SynthConfig {
        beats_per_category: 400,
        ..scale.synth(22)
    })
    .unwrap();
    let stage1 = scale.stage1();
    let mut model = Model::build(&stage1.model, child_seed(21, Stream::Init)).unwrap();
    train(&mut model, &train_set, &Dataset::new(train_set.segment_length()), &stage1.train).unwrap();
    let acc = accuracy_against(&predict(&mut model, &test, 256).unwrap(), &test.labels());
    println!("clean-label stage-1 test accuracy {acc:.4} (need > 0.95)");
    assert!(matches!(stage1.model, ModelConfig::PlainCnn(_)));
    assert!(acc > 0.95, "{acc}");
}
