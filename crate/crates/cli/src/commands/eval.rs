//! `stdpnet eval`: confusion matrix, per-class accuracy, and (optionally)
//! class-group-conditioned accuracy of a saved model on a feature cache.

use std::path::{Path, PathBuf};

use stdpnet::classifier::{conditioned_evaluate, evaluate};
use stdpnet::dataio::{emnist_group_map, ClassGroup, ClassGroupMap};
use stdpnet::persist::{read_feature_cache, read_model, sha256_files};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Model snapshot.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Feature cache to evaluate on.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Also evaluate conditioned on the true label's class group.
    #[arg(long)]
    conditioned: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let model_path = PathBuf::from(r.get(
        "eval.model",
        args.model.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let features_path = PathBuf::from(r.get(
        "eval.features",
        args.features.map(|p| p.display().to_string()),
        String::new(),
    )?);
    if model_path.as_os_str().is_empty() || features_path.as_os_str().is_empty() {
        return Err(CliError::Usage("eval needs --model and --features".into()));
    }
    require_file(&model_path, "model snapshot")?;
    require_file(&features_path, "feature cache")?;
    let conditioned = r.get("eval.conditioned", args.conditioned.then_some(true), false)?;
    let run_id = r.get("run_id", args.run_id, "eval".to_string())?;

    let model = read_model(&model_path)?;
    let cache = read_feature_cache(&features_path)?;

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(stdpnet::Error::from)?;

    let report = evaluate(&model.state, &cache.features)?;
    std::fs::write(
        out_dir.join(format!("{run_id}_confusion.csv")),
        report.to_confusion_csv(),
    )
    .map_err(stdpnet::Error::from)?;
    std::fs::write(out_dir.join(format!("{run_id}_per_class.csv")), report.per_class_csv())
        .map_err(stdpnet::Error::from)?;

    let mut summary = format!("samples={}\naccuracy={}\n", cache.features.len(), report.accuracy);
    eprintln!("accuracy {:.4} over {} samples", report.accuracy, cache.features.len());

    if conditioned {
        let classes = model.state.num_classes();
        let groups: ClassGroupMap = if classes == 47 {
            emnist_group_map()
        } else {
            // Single-group fallback: conditioning degenerates to the
            // unrestricted argmax.
            ClassGroupMap { group_of: vec![ClassGroup::Digit; classes] }
        };
        let cond = conditioned_evaluate(&model.state, &cache.features, &groups)?;
        std::fs::write(
            out_dir.join(format!("{run_id}_conditioned_confusion.csv")),
            cond.to_confusion_csv(),
        )
        .map_err(stdpnet::Error::from)?;
        std::fs::write(
            out_dir.join(format!("{run_id}_conditioned_per_class.csv")),
            cond.per_class_csv(),
        )
        .map_err(stdpnet::Error::from)?;
        summary.push_str(&format!("conditioned_accuracy={}\n", cond.accuracy));
        eprintln!("conditioned accuracy {:.4}", cond.accuracy);
    }
    std::fs::write(out_dir.join(format!("{run_id}_summary.txt")), &summary)
        .map_err(stdpnet::Error::from)?;

    // Stale-input warning: the model records the hash of the cache it was
    // trained from; evaluating on a different extraction is fine but worth
    // flagging when the files claim the same lineage.
    let feat_hash = sha256_files(&[&features_path])?;
    if model.source_hash == feat_hash {
        eprintln!("note: evaluating on the model's own training cache");
    }

    r.note("eval.model", model_path.display());
    r.note("eval.features", features_path.display());
    r.write_resolved(&out_dir, &run_id).map_err(stdpnet::Error::from)?;
    Ok(())
}
