//! `stdpnet encode`: IDX images/labels -> spike-tensor cache.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use stdpnet::dataio::{self, ImageSet, LabelSet};
use stdpnet::encoder::{self, EncoderConfig};
use stdpnet::persist::{sha256_files, SpikeCacheHeader, SpikeCacheWriter};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// IDX image file (optionally .gz).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (optionally .gz).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Dataset kind: mnist | emnist (emnist transposes rasters and defaults
    /// to 47 classes).
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Gzip handling: auto | yes | no.
    #[arg(long)]
    gzip: Option<String>,
    #[arg(long)]
    gamma_dog: Option<f64>,
    #[arg(long)]
    time_slices: Option<usize>,
    #[arg(long)]
    border: Option<usize>,
    /// Which split to encode: none | train | validation | test.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    /// Encode only the first N images (after splitting); 0 = all.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output spike cache path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for the resolved-config echo (default: output's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let images_path = PathBuf::from(r.get(
        "dataset.images",
        args.images.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let labels_path = PathBuf::from(r.get(
        "dataset.labels",
        args.labels.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let dataset = r.get("dataset.kind", args.dataset, "mnist".to_string())?;
    let default_classes = if dataset == "emnist" { 47 } else { 10 };
    let num_classes = r.get("dataset.num_classes", args.num_classes, default_classes)?;
    let gzip = r.get("dataset.gzip", args.gzip, "auto".to_string())?;
    let gamma_dog = r.get("encoder.gamma_dog", args.gamma_dog, 50.0)?;
    let time_slices = r.get("encoder.time_slices", args.time_slices, 12)?;
    let border = r.get("encoder.border", args.border, 2)?;
    let split = r.get("split.part", args.split, "none".to_string())?;
    let val_frac = r.get("split.val_frac", args.val_frac, 0.0)?;
    let test_frac = r.get("split.test_frac", args.test_frac, 0.0)?;
    let limit = r.get("encode.limit", args.limit, 0usize)?;
    let seed = r.get("seed", args.seed, 0u64)?;
    let out = PathBuf::from(r.get(
        "encode.out",
        args.out.map(|p| p.display().to_string()),
        String::new(),
    )?);
    if images_path.as_os_str().is_empty() || labels_path.as_os_str().is_empty() {
        return Err(CliError::Usage("encode needs --images and --labels".into()));
    }
    if out.as_os_str().is_empty() {
        return Err(CliError::Usage("encode needs --out".into()));
    }
    require_file(&images_path, "image file")?;
    require_file(&labels_path, "label file")?;

    let gzipped = match gzip.as_str() {
        "auto" => None,
        "yes" => Some(true),
        "no" => Some(false),
        other => return Err(CliError::Usage(format!("unknown --gzip value: {other}"))),
    };

    let mut images = dataio::load_idx_images(&images_path, gzipped)?;
    let labels = dataio::load_idx_labels(&labels_path, gzipped, num_classes)?;
    if images.len() != labels.len() {
        return Err(stdpnet::Error::LengthMismatch { left: images.len(), right: labels.len() }
            .into());
    }
    if dataset == "emnist" {
        images.transpose_in_place();
    }

    let (images, labels): (ImageSet, LabelSet) = match split.as_str() {
        "none" => (images, labels),
        part @ ("train" | "validation" | "test") => {
            let splits = dataio::split_dataset(&images, &labels, val_frac, test_frac, seed)?;
            match part {
                "train" => splits.train,
                "validation" => splits.validation,
                _ => splits.test,
            }
        }
        other => return Err(CliError::Usage(format!("unknown --split value: {other}"))),
    };

    let n = if limit > 0 { limit.min(images.len()) } else { images.len() };
    let enc_cfg = EncoderConfig { gamma_dog, time_slices, border };
    let on = encoder::on_kernel();
    let off = encoder::off_kernel();

    let source_hash = sha256_files(&[&images_path, &labels_path])?;
    let (t, c, h, w) = if n > 0 {
        encoder::encode_image(&images.images[0].view(), &on, &off, &enc_cfg)?.dim()
    } else {
        (time_slices, 2, images.height.saturating_sub(1), images.width.saturating_sub(1))
    };
    let header =
        SpikeCacheHeader { t, c, h, w, count: n, num_classes, seed, source_hash };

    crate::commands::ensure_parent(&out).map_err(stdpnet::Error::from)?;
    let file = std::fs::File::create(&out).map_err(stdpnet::Error::from)?;
    let mut writer = SpikeCacheWriter::new(std::io::BufWriter::new(file), header)?;

    let mut spike_total = 0usize;
    for (done, chunk) in images.images[..n].chunks(512).enumerate() {
        let tensors: Vec<_> = chunk
            .par_iter()
            .map(|img| encoder::encode_image(&img.view(), &on, &off, &enc_cfg))
            .collect::<stdpnet::Result<_>>()?;
        for tensor in &tensors {
            spike_total += tensor.count_spikes();
            writer.append(tensor)?;
        }
        eprintln!("encoded {}/{n}", (done * 512 + chunk.len()).min(n));
    }
    writer.finish(&labels.labels[..n])?;

    let run_id = r.get("run_id", args.run_id, "encode".to_string())?;
    r.note("dataset.images", images_path.display());
    r.note("dataset.labels", labels_path.display());
    r.note("encode.out", out.display());
    r.note("encode.count", n);
    let dir = args.out_dir.unwrap_or_else(|| crate::commands::dir_of(&out));
    r.write_resolved(&dir, &run_id).map_err(stdpnet::Error::from)?;

    if n > 0 {
        eprintln!(
            "wrote {n} tensors ({t}x{c}x{h}x{w}) to {}, mean spikes/image {:.1}",
            out.display(),
            spike_total as f64 / n as f64
        );
    } else {
        eprintln!("wrote empty cache to {}", out.display());
    }
    Ok(())
}
