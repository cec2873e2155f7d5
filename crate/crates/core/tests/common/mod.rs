#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

pub fn report(criterion: u32, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} : {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Runs the built binary and panics with its stderr on a nonzero exit.
pub fn cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ecgcrn")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ecgcrn {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn cli_status(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ecgcrn")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Relative paths of every file below `root`, sorted.
pub fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

/// Manifest text without the output-directory line, which differs between runs.
pub fn without_out(manifest: &[u8]) -> String {
    String::from_utf8_lossy(manifest)
        .lines()
        .filter(|l| !l.trim_start().starts_with("io.out"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Desk-scale experiment settings shared by the learning tests.
pub struct Scale {
    pub sampling_rate_hz: f64,
    pub segment_length: usize,
    pub snr_db: f64,
}

impl Scale {
    pub fn acceptance() -> Self {
        Scale {
            sampling_rate_hz: 90.0,
            segment_length: 128,
            snr_db: 10.0,
        }
    }

    pub fn synth(&self, seed: u64) -> ecgcrn::synth::SynthConfig {
        ecgcrn::synth::SynthConfig {
            sampling_rate_hz: self.sampling_rate_hz,
            segment_length: self.segment_length,
            noise_snr_db: self.snr_db,
            seed,
            ..Default::default()
        }
    }

    pub fn stage1(&self) -> ecgcrn::confident::StageConfig {
        use ecgcrn::nn::{ModelConfig, PlainCnnConfig};
        ecgcrn::confident::StageConfig {
            model: ModelConfig::PlainCnn(PlainCnnConfig {
                filters: vec![16, 32, 32],
                kernel_size: 5,
                input_len: self.segment_length,
                num_categories: 5,
            }),
            train: ecgcrn::optim::TrainConfig {
                epochs: 30,
                batch_size: 64,
                learning_rate: 0.005,
                ..Default::default()
            },
        }
    }

    pub fn stage2(&self) -> ecgcrn::confident::StageConfig {
        use ecgcrn::nn::{BackboneConfig, ModelConfig};
        ecgcrn::confident::StageConfig {
            model: ModelConfig::ResNet(BackboneConfig {
                stem_filters: 8,
                num_blocks: 4,
                filter_schedule: vec![8, 8, 16, 16],
                kernel_size: 3,
                pool_every: 2,
                dropout_keep_train: 1.0,
                num_categories: 5,
            }),
            train: ecgcrn::optim::TrainConfig {
                epochs: 16,
                batch_size: 64,
                learning_rate: 0.01,
                plateau_patience: 2,
                ..Default::default()
            },
        }
    }
}
