//! `stdpnet extract`: fixed-weight conv/pool pass producing binary feature
//! vectors, optional pooled spike tensors for the next conv layer, and the
//! spikes-per-map-per-class tally.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use stdpnet::features::{flatten_pooled, spikes_per_map_per_class, FeatureVector};
use stdpnet::persist::{
    read_conv_snapshot, sha256_files, write_feature_cache, FeatureCacheHeader, SpikeCache,
    SpikeCacheHeader, SpikeCacheWriter,
};
use stdpnet::snncore::{run_inference, PoolConfig};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Input spike cache.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Trained conv weight snapshot.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    pool_gamma: Option<f64>,
    /// Enable lateral inhibition in the pooling layer.
    #[arg(long)]
    pool_lateral_inh: bool,
    /// Let pooled neurons spike more than once per image. Incompatible with
    /// binary feature vectors, so this mode writes only --pool-cache.
    #[arg(long)]
    pool_accum: bool,
    /// Output feature cache path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write pooled spike tensors (input for train-conv --layer 2).
    #[arg(long)]
    pool_cache: Option<PathBuf>,
    /// Write the spikes-per-map-per-class CSV.
    #[arg(long)]
    class_csv: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let cache_path = PathBuf::from(r.get(
        "extract.cache",
        args.cache.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let snapshot_path = PathBuf::from(r.get(
        "extract.snapshot",
        args.snapshot.map(|p| p.display().to_string()),
        String::new(),
    )?);
    let out = PathBuf::from(r.get(
        "extract.out",
        args.out.map(|p| p.display().to_string()),
        String::new(),
    )?);
    if cache_path.as_os_str().is_empty() || snapshot_path.as_os_str().is_empty() {
        return Err(CliError::Usage("extract needs --cache and --snapshot".into()));
    }
    if out.as_os_str().is_empty() {
        return Err(CliError::Usage("extract needs --out".into()));
    }
    require_file(&cache_path, "spike cache")?;
    require_file(&snapshot_path, "weight snapshot")?;
    let pool_gamma = r.get("pool.gamma", args.pool_gamma, 15.0)?;
    let pool_lateral_inh =
        r.get("pool.lateral_inh", args.pool_lateral_inh.then_some(true), false)?;
    let limit = r.get("extract.limit", args.limit, 0usize)?;
    let run_id = r.get("run_id", args.run_id, "extract".to_string())?;

    let cache = SpikeCache::load(&cache_path)?;
    let snap = read_conv_snapshot(&snapshot_path)?;
    let cache_hash = sha256_files(&[&cache_path])?;
    crate::commands::warn_if_stale(
        "snapshot was trained on different encoder output",
        &snap.source_hash,
        &cache_hash,
    );

    let pool = PoolConfig { gamma: pool_gamma, lateral_inh: pool_lateral_inh, accumulate: false };
    let state = &snap.state;
    let n = if limit > 0 { limit.min(cache.len()) } else { cache.len() };

    // Pooled geometry from the layer and input dims.
    let conv_side = state.out_side(cache.header.h)?;
    let conv_side_w = state.out_side(cache.header.w)?;
    let (ph, pw) = (conv_side / 2, conv_side_w / 2);
    let maps = state.maps();
    let dim = maps * ph * pw;

    let source_hash = sha256_files(&[&cache_path, &snapshot_path])?;
    let mut pool_writer = match &args.pool_cache {
        Some(path) => {
            crate::commands::ensure_parent(path).map_err(stdpnet::Error::from)?;
            let header = SpikeCacheHeader {
                t: cache.header.t,
                c: maps,
                h: ph,
                w: pw,
                count: n,
                num_classes: cache.header.num_classes,
                seed: cache.header.seed,
                source_hash,
            };
            let file = std::fs::File::create(path).map_err(stdpnet::Error::from)?;
            Some(SpikeCacheWriter::new(std::io::BufWriter::new(file), header)?)
        }
        None => None,
    };

    let t0 = std::time::Instant::now();
    let mut features: Vec<FeatureVector> = Vec::with_capacity(n);
    let mut popcount_total = 0usize;
    for start in (0..n).step_by(512) {
        let end = (start + 512).min(n);
        let pooled: Vec<_> = (start..end)
            .into_par_iter()
            .map(|i| run_inference(state, &cache.tensor(i), &pool))
            .collect::<stdpnet::Result<_>>()?;
        for (offset, tensor) in pooled.iter().enumerate() {
            if let Some(w) = pool_writer.as_mut() {
                w.append(tensor)?;
            }
            let f = flatten_pooled(tensor, cache.labels[start + offset]);
            popcount_total += f.popcount();
            features.push(f);
        }
        eprintln!("extracted {end}/{n}");
    }
    if let Some(w) = pool_writer {
        w.finish(&cache.labels[..n])?;
        eprintln!("pooled spike cache: {}", args.pool_cache.as_ref().unwrap().display());
    }

    let header = FeatureCacheHeader {
        dim,
        maps,
        ph,
        pw,
        count: n,
        num_classes: cache.header.num_classes,
        seed: cache.header.seed,
        source_hash,
    };
    crate::commands::ensure_parent(&out).map_err(stdpnet::Error::from)?;
    write_feature_cache(&out, &header, &features)?;

    let out_dir = args.out_dir.unwrap_or_else(|| crate::commands::dir_of(&out));
    std::fs::create_dir_all(&out_dir).map_err(stdpnet::Error::from)?;
    let matrix = spikes_per_map_per_class(&features, maps, ph * pw, cache.header.num_classes)?;
    let class_csv =
        args.class_csv.unwrap_or_else(|| out_dir.join(format!("{run_id}_spikes_per_map_per_class.csv")));
    crate::commands::ensure_parent(&class_csv).map_err(stdpnet::Error::from)?;
    std::fs::write(&class_csv, matrix.to_csv()).map_err(stdpnet::Error::from)?;

    r.note("extract.cache", cache_path.display());
    r.note("extract.snapshot", snapshot_path.display());
    r.note("extract.out", out.display());
    r.note("extract.count", n);
    r.write_resolved(&out_dir, &run_id).map_err(stdpnet::Error::from)?;

    eprintln!(
        "extracted {n} vectors of length {dim} in {:.1?}; mean popcount {:.1}",
        t0.elapsed(),
        if n > 0 { popcount_total as f64 / n as f64 } else { 0.0 }
    );
    eprintln!("feature cache: {}", out.display());
    Ok(())
}
