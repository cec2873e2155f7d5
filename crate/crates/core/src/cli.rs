//! Command-line entry point.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::archive::{load_dataset, save_dataset};
use crate::confident::{run_stage1, run_stage2, threshold_sweep, HISTOGRAM_BINS};
use crate::config::{parse_thresholds, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, metrics_csv, text_report};
use crate::kv::KvMap;
use crate::nn::{Checkpoint, Model};
use crate::optim::{predict, train};
use crate::preprocess::{balance_classes, enlarge_record, split};
use crate::rng::{child_seed, Stream};
use crate::signal::{header_path_for, load_record, save_record, Dataset, EcgRecord, RhythmCategory};
use crate::synth::{synth_noisy_dataset, to_record, SynthConfig};
use crate::wavelet;

#[derive(Debug, Parser)]
#[command(
    name = "ecgcrn",
    version,
    about = "ECG beat classification with confidence-based label filtering",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the deterministic reduction order.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic beat set with optional label corruption.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beats_per_category: Option<usize>,
        #[arg(long)]
        segment_length: Option<usize>,
        #[arg(long)]
        sampling_rate: Option<f64>,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        corruption_rate: Option<f64>,
    },
    /// Window, denoise, standardize, balance and split annotated records.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Record sample files (`.hdr` and `.ann.csv` siblings are read too).
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        window_size: Option<usize>,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        no_denoise: bool,
        #[arg(long)]
        balance_per_class: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Wavelet-denoise a whole record.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        /// Comma-separated detail levels to zero (1 = finest).
        #[arg(long)]
        zero_levels: Option<String>,
    },
    /// Train a single network on a segment set.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// `resnet` or `plain_cnn`.
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Two-stage training with confidence filtering.
    ConfidentTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// `label_probability` or `max_probability`.
        #[arg(long)]
        score_rule: Option<String>,
        /// Keep only scores strictly above the threshold.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Run the two-stage pipeline for several thresholds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// `lo..hi[:step]` or a comma-separated list.
        #[arg(long)]
        thresholds: Option<String>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Evaluate a checkpoint on a segment set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training segment directory.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test segment directory.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Denoise { .. } => "denoise",
            Command::Train { .. } => "train",
            Command::ConfidentTrain { .. } => "confident-train",
            Command::Sweep { .. } => "sweep",
            Command::Eval { .. } => "eval",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Preprocess { common, .. }
            | Command::Denoise { common, .. }
            | Command::Train { common, .. }
            | Command::ConfidentTrain { common, .. }
            | Command::Sweep { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    /// Flag values as configuration keys.
    fn flag_kv(&self) -> Result<KvMap> {
        let mut kv = KvMap::new();
        let c = self.common();
        for item in &c.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::config(item.as_str(), "expected KEY=VALUE"))?;
            kv.set(k.trim(), v.trim());
        }
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(key, v);
            }
        };
        put("seed", s(&c.seed));
        put("threads", s(&c.threads));
        put("io.out", p(&c.out));
        let hyper = |put: &mut dyn FnMut(&str, Option<String>), h: &HyperArgs| {
            put("train.epochs", s(&h.epochs));
            put("stage1.train.epochs", s(&h.stage1_epochs));
            put("train.batch_size", s(&h.batch_size));
            put("stage1.train.batch_size", s(&h.batch_size));
            put("train.learning_rate", s(&h.lr));
        };
        match self {
            Command::Synth {
                beats_per_category,
                segment_length,
                sampling_rate,
                snr_db,
                corruption_rate,
                ..
            } => {
                put("synth.beats_per_category", s(beats_per_category));
                put("synth.segment_length", s(segment_length));
                put("synth.sampling_rate_hz", s(sampling_rate));
                put("synth.noise_snr_db", s(snr_db));
                put("synth.label_corruption_rate", s(corruption_rate));
            }
            Command::Preprocess {
                input,
                window_size,
                step,
                no_denoise,
                balance_per_class,
                train_fraction,
                ..
            } => {
                if !input.is_empty() {
                    let joined = input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
                    put("io.input", Some(joined));
                }
                put("window.size", s(window_size));
                put("window.step", s(step));
                if *no_denoise {
                    put("denoise.enabled", Some("false".into()));
                }
                put("balance.per_class", s(balance_per_class));
                put("split.train_fraction", s(train_fraction));
            }
            Command::Denoise {
                input,
                order,
                levels,
                zero_levels,
                ..
            } => {
                put("io.input", p(input));
                put("wavelet.order", s(order));
                put("wavelet.levels", s(levels));
                put("denoise.zero_levels", zero_levels.clone());
            }
            Command::Train { data, arch, hyper: h, .. } => {
                put("io.train", p(&data.train));
                put("io.test", p(&data.test));
                put("model.architecture", arch.clone());
                hyper(&mut put, h);
            }
            Command::ConfidentTrain {
                data,
                threshold,
                score_rule,
                strict,
                hyper: h,
                ..
            } => {
                put("io.train", p(&data.train));
                put("io.test", p(&data.test));
                put("confident.threshold", s(threshold));
                put("confident.score_rule", score_rule.clone());
                if *strict {
                    put("confident.strict", Some("true".into()));
                }
                hyper(&mut put, h);
            }
            Command::Sweep {
                data, thresholds, hyper: h, ..
            } => {
                put("io.train", p(&data.train));
                put("io.test", p(&data.test));
                if let Some(t) = thresholds {
                    let list = parse_thresholds(t)?;
                    put("sweep.thresholds", Some(list.iter().map(f64::to_string).collect::<Vec<_>>().join(",")));
                }
                hyper(&mut put, h);
            }
            Command::Eval { checkpoint, test, .. } => {
                put("io.checkpoint", p(checkpoint));
                put("io.test", p(test));
            }
        }
        Ok(kv)
    }
}

/// Defaults, then the config file, then flags.
fn resolve(command: &Command) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &command.common().config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = KvMap::parse(&text)?;
        if let Some(cmd) = file.get_str("command") {
            if cmd != command.name() {
                return Err(Error::config("command", format!("file is for `{cmd}`, running `{}`", command.name())));
            }
        }
        config.update_from_kv(&file)?;
    }
    config.update_from_kv(&command.flag_kv()?)?;
    config.validate()?;
    Ok(config)
}

struct OutDir {
    root: PathBuf,
}

impl OutDir {
    fn create(config: &RunConfig) -> Result<Self> {
        let root = config.out.clone().ok_or_else(|| Error::config("io.out", "an output directory is required (--out)"))?;
        for dir in [root.clone(), root.join("checkpoints"), root.join("figures-data")] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(OutDir { root })
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn manifest(&self, command: &str, config: &RunConfig) -> Result<()> {
        let mut kv = config.to_kv();
        kv.set("command", command);
        self.write("manifest.txt", kv.to_text())?;
        Ok(())
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(key, "missing input path"))
}

fn load_any_record(path: &Path) -> Result<EcgRecord> {
    load_record(path, &header_path_for(path))
}

fn counts_csv(rows: &[(&str, &Dataset)]) -> String {
    let mut out = String::from("split,N,V,S,A,Q,total\n");
    for (name, ds) in rows {
        let _ = write!(out, "{name}");
        for c in RhythmCategory::ALL {
            let _ = write!(out, ",{}", ds.count(c));
        }
        let _ = writeln!(out, ",{}", ds.len());
    }
    out
}

fn cmd_synth(config: &RunConfig, out: &OutDir) -> Result<()> {
    let cfg = SynthConfig {
        seed: config.seed,
        ..config.synth.clone()
    };
    let noisy = synth_noisy_dataset(&cfg)?;
    save_dataset(&noisy.dataset, &out.root.join("segments"))?;
    out.write("truth.csv", noisy.truth_csv())?;
    save_record(&to_record(&noisy.dataset, "synth", cfg.sampling_rate_hz)?, &out.root.join("record.dat"))?;
    let mut report = String::from("category,given,true\n");
    for c in RhythmCategory::ALL {
        let truth = noisy.true_labels.iter().filter(|&&t| t == c).count();
        let _ = writeln!(report, "{c},{},{truth}", noisy.dataset.count(c));
    }
    out.write("report.csv", report)?;
    let mut beats = String::from("t,N,V,S,A,Q\n");
    let firsts: Vec<&[f64]> = RhythmCategory::ALL
        .iter()
        .map(|&c| noisy.true_labels.iter().position(|&t| t == c).map(|i| noisy.dataset.segments()[i].samples.as_slice()).unwrap_or(&[]))
        .collect();
    for t in 0..cfg.segment_length {
        let _ = write!(beats, "{t}");
        for f in &firsts {
            let _ = write!(beats, ",{}", f.get(t).copied().unwrap_or(f64::NAN));
        }
        beats.push('\n');
    }
    out.write("figures-data/example_beats.csv", beats)?;
    println!(
        "wrote {} segments ({:.1}% labels corrupted) to {}",
        noisy.dataset.len(),
        100.0 * noisy.corrupted_fraction(),
        out.root.display()
    );
    Ok(())
}

fn cmd_preprocess(config: &RunConfig, out: &OutDir) -> Result<()> {
    if config.input.is_empty() {
        return Err(Error::config("io.input", "at least one record is required (--input)"));
    }
    let mut all = Dataset::new(config.window.window_size);
    let denoise = config.denoise_enabled.then_some(&config.denoise);
    for path in &config.input {
        let record = load_any_record(path)?;
        for seg in enlarge_record(&record, &config.window, denoise)?.iter() {
            all.push(seg.clone())?;
        }
    }
    if config.balance_per_class > 0 {
        all = balance_classes(&all, config.balance_per_class, child_seed(config.seed, Stream::Balance))?;
    }
    let (train_set, test_set) = split(&all, &config.split_config())?;
    save_dataset(&train_set, &out.root.join("train"))?;
    save_dataset(&test_set, &out.root.join("test"))?;
    out.write("report.csv", counts_csv(&[("all", &all), ("train", &train_set), ("test", &test_set)]))?;
    println!("{} segments: {} train, {} test", all.len(), train_set.len(), test_set.len());
    Ok(())
}

fn cmd_denoise(config: &RunConfig, out: &OutDir) -> Result<()> {
    let input = config
        .input
        .first()
        .ok_or_else(|| Error::config("io.input", "a record is required (--input)"))?;
    let record = load_any_record(input)?;
    let raw = record.physical();
    let clean = wavelet::denoise(&raw, &config.wavelet(), &config.denoise.zero_levels)?;
    let denoised = EcgRecord::new(
        record.record_id.clone(),
        record.sampling_rate_hz,
        clean.iter().map(|&v| v as f32).collect(),
        record.annotations.clone(),
    )?;
    save_record(&denoised, &out.root.join("denoised.dat"))?;
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    out.write(
        "report.csv",
        format!(
            "record_id,samples,input_energy,output_energy\n{},{},{:.6},{:.6}\n",
            record.record_id,
            raw.len(),
            energy(&raw),
            energy(&clean)
        ),
    )?;
    let mut series = String::from("index,raw,denoised\n");
    for (i, (r, c)) in raw.iter().zip(&clean).take(2000).enumerate() {
        let _ = writeln!(series, "{i},{r},{c}");
    }
    out.write("figures-data/denoise.csv", series)?;
    println!("denoised {} samples of {}", raw.len(), record.record_id);
    Ok(())
}

fn write_eval(out: &OutDir, stem: &str, model: &mut Model, test: &Dataset) -> Result<f64> {
    let preds = predict(model, test, 256)?;
    let m = confusion(&preds, &test.labels(), model.config().num_categories())?;
    out.write(&format!("figures-data/{stem}confusion.csv"), m.to_csv())?;
    out.write(&format!("{stem}metrics.csv"), metrics_csv(&metrics(&m)))?;
    print!("{}", text_report(&m));
    Ok(metrics(&m).accuracy)
}

fn cmd_train(config: &RunConfig, out: &OutDir) -> Result<()> {
    let data = load_dataset(require(&config.train_path, "io.train")?)?;
    let model_config = config.model_config(data.segment_length());
    let (train_idx, val_idx) = if config.val_fraction > 0.0 {
        crate::preprocess::split_indices(
            &data,
            &crate::preprocess::SplitConfig {
                train_fraction: 1.0 - config.val_fraction,
                seed: child_seed(config.seed, Stream::Split),
                record_disjoint: false,
            },
        )?
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let mut model = Model::build(&model_config, child_seed(config.seed, Stream::Init))?;
    let report = train(
        &mut model,
        &data.subset(&train_idx),
        &data.subset(&val_idx),
        &config.train_config(Some(out.checkpoints())),
    );
    let report = match report {
        Ok(r) => r,
        Err(abort) => {
            out.write("report.csv", abort.partial.to_csv())?;
            return Err(abort.error);
        }
    };
    out.write("report.csv", report.to_csv())?;
    out.write("figures-data/training_curve.csv", report.to_csv())?;
    Checkpoint::capture(&model).save(&out.checkpoints().join("final.ckpt"))?;
    if let Some(test) = &config.test_path {
        write_eval(out, "", &mut model, &load_dataset(test)?)?;
    }
    Ok(())
}

fn histogram_csv(hist: &[usize; HISTOGRAM_BINS]) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (b, n) in hist.iter().enumerate() {
        let lo = b as f64 / HISTOGRAM_BINS as f64;
        let _ = writeln!(out, "{lo:.2},{:.2},{n}", lo + 1.0 / HISTOGRAM_BINS as f64);
    }
    out
}

fn cmd_confident(config: &RunConfig, out: &OutDir) -> Result<()> {
    let raw = load_dataset(require(&config.train_path, "io.train")?)?;
    let test = load_dataset(require(&config.test_path, "io.test")?)?;
    let cc = config.confidence_config(raw.segment_length());
    let stage1 = run_stage1(&raw, &test, &cc)?;
    out.write("figures-data/stage1_training.csv", stage1.report.to_csv())?;
    Checkpoint::capture(&stage1.model).save(&out.checkpoints().join("stage1.ckpt"))?;
    let (model, report) = match run_stage2(&raw, &test, &stage1, cc.threshold, &cc) {
        Ok(r) => r,
        Err(abort) => {
            out.write("figures-data/stage2_training.csv", abort.partial.to_csv())?;
            return Err(abort.error);
        }
    };
    Checkpoint::capture(&model).save(&out.checkpoints().join("stage2.ckpt"))?;
    out.write("figures-data/stage2_training.csv", report.stage2.to_csv())?;
    out.write("figures-data/stage1_confusion.csv", report.stage1_test.to_csv())?;
    out.write("figures-data/stage2_confusion.csv", report.stage2_test.to_csv())?;
    out.write("figures-data/score_histogram.csv", histogram_csv(&report.filter.histogram))?;
    out.write("filter_report.txt", report.filter.to_text())?;
    let mut csv = String::from("stage,architecture,train_size,test_accuracy\n");
    let _ = writeln!(
        csv,
        "1,{},{},{:.6}",
        report.stage1_architecture,
        stage1.train_indices.len(),
        report.stage1_accuracy()
    );
    let _ = writeln!(csv, "2,resnet,{},{:.6}", report.stage2_train_len, report.stage2_accuracy());
    out.write("report.csv", csv)?;
    print!("{}", report.filter.to_text());
    println!("stage 1 test accuracy {:.4}", report.stage1_accuracy());
    println!("stage 2 test accuracy {:.4}", report.stage2_accuracy());
    Ok(())
}

fn cmd_sweep(config: &RunConfig, out: &OutDir) -> Result<()> {
    let raw = load_dataset(require(&config.train_path, "io.train")?)?;
    let test = load_dataset(require(&config.test_path, "io.test")?)?;
    let cc = config.confidence_config(raw.segment_length());
    let table = threshold_sweep(&raw, &test, &config.sweep_thresholds, &cc)?;
    out.write("report.csv", table.to_csv())?;
    let mut failures = String::new();
    for (t, reason) in table.failures() {
        let _ = writeln!(failures, "{t}: {reason}");
    }
    out.write("sweep_failures.txt", failures)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_eval(config: &RunConfig, out: &OutDir) -> Result<()> {
    let mut model = Checkpoint::load(require(&config.checkpoint, "io.checkpoint")?)?.restore()?;
    let test = load_dataset(require(&config.test_path, "io.test")?)?;
    model.config().accepts_len(test.segment_length())?;
    let preds = predict(&mut model, &test, 256)?;
    let m = confusion(&preds, &test.labels(), model.config().num_categories())?;
    out.write("report.csv", metrics_csv(&metrics(&m)))?;
    out.write("figures-data/confusion.csv", m.to_csv())?;
    out.write("summary.txt", text_report(&m))?;
    print!("{}", text_report(&m));
    Ok(())
}

fn execute(command: &Command) -> Result<()> {
    let config = resolve(command)?;
    let out = OutDir::create(&config)?;
    out.manifest(command.name(), &config)?;
    match command {
        Command::Synth { .. } => cmd_synth(&config, &out),
        Command::Preprocess { .. } => cmd_preprocess(&config, &out),
        Command::Denoise { .. } => cmd_denoise(&config, &out),
        Command::Train { .. } => cmd_train(&config, &out),
        Command::ConfidentTrain { .. } => cmd_confident(&config, &out),
        Command::Sweep { .. } => cmd_sweep(&config, &out),
        Command::Eval { .. } => cmd_eval(&config, &out),
    }
}

/// Exit code 0 on success, 2 for usage or configuration errors, 3 for I/O
/// failures, 4 for numerical divergence and 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_arguments_is_a_usage_error() {
        assert_eq!(run(["ecgcrn"]), 2);
        assert_eq!(run(["ecgcrn", "bogus"]), 2);
        assert_eq!(run(["ecgcrn", "synth", "--no-such-flag"]), 2);
        assert_eq!(run(["ecgcrn", "--help"]), 0);
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "train.epochs = 7\ntrain.batch_size = 16\nseed = 3\n").unwrap();
        let file_arg = file.display().to_string();
        let cli = Cli::try_parse_from(["ecgcrn", "train", "--config", &file_arg, "--epochs", "2"]).unwrap();
        let c = resolve(&cli.command).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.learning_rate, 0.002);
        let cli = Cli::try_parse_from(["ecgcrn", "train", "--config", &file_arg, "--set", "seed=11"]).unwrap();
        assert_eq!(resolve(&cli.command).unwrap().seed, 11);
    }

    #[test]
    fn bad_config_reports_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "train.epochz = 7\n").unwrap();
        let cli = Cli::try_parse_from(["ecgcrn", "train", "--config", &file.display().to_string()]).unwrap();
        assert!(resolve(&cli.command).unwrap_err().to_string().contains("train.epochz"));
        let out = dir.path().join("o").display().to_string();
        assert_eq!(run(["ecgcrn", "train", "--out", &out, "--set", "train.lr=1"]), 2);
        assert_eq!(run(["ecgcrn", "train", "--out", &out]), 2);
        assert_eq!(run(["ecgcrn", "train", "--out", &out, "--train", "/nonexistent/dir"]), 3);
    }
}
