//! `stdpnet train-classifier`: supervised readout over cached feature
//! vectors, with a repeat-and-average protocol for reporting mean and max
//! test accuracy over independent runs.

use std::path::{Path, PathBuf};

use stdpnet::classifier::{train_classifier, Mode, TrainConfig};
use stdpnet::persist::{read_feature_cache, sha256_files, write_model};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Training feature cache.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation feature cache (optional; best-epoch selection needs it).
    #[arg(long)]
    val: Option<PathBuf>,
    /// Test feature cache.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    /// surrogate1 | surrogate2 | exact-relu
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    tau_sat: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Independent training repeats; the summary reports mean and max test
    /// accuracy and the saved model is the best repeat.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output model snapshot path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn parse_mode(s: &str) -> Result<Mode, CliError> {
    match s {
        "surrogate1" => Ok(Mode::Surrogate1),
        "surrogate2" => Ok(Mode::Surrogate2),
        "exact-relu" => Ok(Mode::ExactRelu),
        other => Err(CliError::Usage(format!(
            "unknown mode {other}; expected surrogate1 | surrogate2 | exact-relu"
        ))),
    }
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let train_path = PathBuf::from(r.get(
        "classifier.train",
        args.train.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let val_path = r.get(
        "classifier.val",
        args.val.map(|p| p.display().to_string()),
        String::new(),
    )?;
    let test_path = PathBuf::from(r.get(
        "classifier.test",
        args.test.map(|p| p.display().to_string()),
        String::new(),
    )?);
    if train_path.as_os_str().is_empty() || test_path.as_os_str().is_empty() {
        return Err(CliError::Usage("train-classifier needs --train and --test".into()));
    }
    require_file(&train_path, "training feature cache")?;
    require_file(&test_path, "test feature cache")?;

    let hidden = r.get("classifier.hidden", args.hidden, 900usize)?;
    let mode_s = r.get("classifier.mode", args.mode, "surrogate1".to_string())?;
    let mode = parse_mode(&mode_s)?;
    let tau_sat = r.get("classifier.tau_sat", args.tau_sat, 0.125)?;
    let eta = r.get("classifier.eta", args.eta, 0.01)?;
    let dropout = r.get("classifier.dropout", args.dropout, 0.5)?;
    let batch = r.get("classifier.batch", args.batch, 5usize)?;
    let epochs = r.get("classifier.epochs", args.epochs, 30usize)?;
    let repeats = r.get("classifier.repeats", args.repeats, 1usize).map(|v| v.max(1))?;
    let seed = r.get("seed", args.seed, 0u64)?;
    let run_id = r.get("run_id", args.run_id, "classifier".to_string())?;

    let train_cache = read_feature_cache(&train_path)?;
    let val_features = if val_path.is_empty() {
        Vec::new()
    } else {
        let p = PathBuf::from(&val_path);
        require_file(&p, "validation feature cache")?;
        read_feature_cache(&p)?.features
    };
    let test_cache = read_feature_cache(&test_path)?;
    let num_classes = train_cache.header.num_classes;

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(stdpnet::Error::from)?;
    let out = args.out.unwrap_or_else(|| out_dir.join(format!("{run_id}_model.spkm")));

    let mut accuracies: Vec<f64> = Vec::with_capacity(repeats);
    let mut best: Option<(f64, stdpnet::classifier::MlpState, u64)> = None;
    for rep in 0..repeats {
        let rep_seed = seed.wrapping_add(rep as u64);
        let cfg = TrainConfig {
            hidden,
            num_classes,
            mode,
            tau_sat,
            eta,
            dropout_p: dropout,
            batch_size: batch,
            epochs,
            seed: rep_seed,
        };
        let t0 = std::time::Instant::now();
        let (state, report, curves) =
            train_classifier(&train_cache.features, &val_features, &test_cache.features, &cfg)?;
        eprintln!(
            "repeat {rep}: test accuracy {:.4} (best epoch {}) in {:.1?}",
            report.accuracy,
            curves.best_epoch,
            t0.elapsed()
        );
        let curves_path = out_dir.join(format!("{run_id}_rep{rep}_curves.csv"));
        std::fs::write(&curves_path, curves.to_csv()).map_err(stdpnet::Error::from)?;
        if best.as_ref().map_or(true, |(acc, _, _)| report.accuracy > *acc) {
            best = Some((report.accuracy, state, rep_seed));
        }
        accuracies.push(report.accuracy);
    }

    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut summary = String::new();
    summary.push_str(&format!("repeats={repeats}\n"));
    summary.push_str(&format!("mean_test_accuracy={mean}\n"));
    summary.push_str(&format!("max_test_accuracy={max}\n"));
    for (rep, acc) in accuracies.iter().enumerate() {
        summary.push_str(&format!("repeat_{rep}_test_accuracy={acc}\n"));
    }
    let summary_path = out_dir.join(format!("{run_id}_summary.txt"));
    std::fs::write(&summary_path, &summary).map_err(stdpnet::Error::from)?;

    let (_, state, best_seed) = best.expect("at least one repeat");
    let source_hash = sha256_files(&[&train_path])?;
    crate::commands::ensure_parent(&out).map_err(stdpnet::Error::from)?;
    write_model(&out, &state, best_seed, &source_hash)?;

    r.note("classifier.train", train_path.display());
    r.note("classifier.test", test_path.display());
    r.note("classifier.out", out.display());
    r.write_resolved(&out_dir, &run_id).map_err(stdpnet::Error::from)?;
    eprintln!("mean test accuracy {mean:.4}, max {max:.4}");
    eprintln!("model: {}", out.display());
    Ok(())
}
