//! `stdpnet train-conv`: STDP training of Conv1 (from a spike cache) or
//! Conv2 (from a pooled spike cache).

use std::path::{Path, PathBuf};

use stdpnet::diagnostics::{export_curves, RunReport};
use stdpnet::persist::{sha256_files, write_conv_snapshot, write_trace, SpikeCache};
use stdpnet::snncore::{train_conv, ConvLayerState, StopReason, TrainSchedule};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Input spike cache (layer 1) or Pool1 spike cache (layer 2).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Which convolution layer to train: 1 | 2.
    #[arg(long)]
    layer: Option<u32>,
    #[arg(long)]
    maps: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    inh_radius: Option<usize>,
    #[arg(long)]
    a_plus: Option<f64>,
    #[arg(long)]
    a_minus: Option<f64>,
    #[arg(long)]
    lr_double_every: Option<usize>,
    /// Images to train on.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    sample_interval: Option<usize>,
    #[arg(long)]
    stop_low: Option<f64>,
    #[arg(long)]
    stop_high: Option<f64>,
    /// Stop early once the convergence factor enters the stopping band.
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output weight snapshot path.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Output weight trace path.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let layer = r.get("conv.layer", args.layer, 1u32)?;
    if layer != 1 && layer != 2 {
        return Err(CliError::Usage(format!("--layer must be 1 or 2, got {layer}")));
    }
    let prefix = format!("conv{layer}");
    let cache_path = PathBuf::from(r.get(
        &format!("{prefix}.cache"),
        args.cache.map(|p| p.display().to_string()),
        String::new(),
    )?);
    if cache_path.as_os_str().is_empty() {
        return Err(CliError::Usage("train-conv needs --cache".into()));
    }
    if layer == 2 {
        // Layer 2 trains on pooled Conv1 spikes; a missing cache usually
        // means extract was not run with --pool-cache.
        require_file(&cache_path, "Pool1 spike cache")?;
    } else {
        require_file(&cache_path, "spike cache")?;
    }

    let (d_maps, d_radius, d_ap, d_am) =
        if layer == 1 { (30, 11, 0.004, 0.003) } else { (200, 3, 0.0002, 0.00015) };
    let maps = r.get(&format!("{prefix}.maps"), args.maps, d_maps)?;
    let kernel = r.get(&format!("{prefix}.kernel"), args.kernel, 5usize)?;
    let threshold = r.get(&format!("{prefix}.threshold"), args.threshold, 15.0)?;
    let inh_radius = r.get(&format!("{prefix}.inh_radius"), args.inh_radius, d_radius)?;
    let a_plus = r.get(&format!("{prefix}.a_plus"), args.a_plus, d_ap)?;
    let a_minus = r.get(&format!("{prefix}.a_minus"), args.a_minus, d_am)?;
    let lr_double_every =
        r.get(&format!("{prefix}.lr_double_every"), args.lr_double_every, 1500usize)?;
    let images = r.get("train.images", args.images, 6000usize)?;
    let sample_interval = r.get("train.sample_interval", args.sample_interval, 200usize)?;
    let stop_low = r.get("train.stop_low", args.stop_low, 0.01)?;
    let stop_high = r.get("train.stop_high", args.stop_high, 0.02)?;
    let early_stop = r.get("train.early_stop", args.early_stop.then_some(true), false)?;
    let seed = r.get("seed", args.seed, 0u64)?;
    let run_id = r.get("run_id", args.run_id, format!("conv{layer}"))?;

    let cache = SpikeCache::load(&cache_path)?;
    if inh_radius % 2 == 0 {
        return Err(CliError::Usage(format!("--inh-radius must be odd, got {inh_radius}")));
    }
    let mut state = ConvLayerState::new(
        maps,
        cache.header.c,
        kernel,
        threshold,
        inh_radius,
        a_plus,
        a_minus,
        seed,
    );
    state.lr_double_every = lr_double_every;

    let schedule = TrainSchedule { images, sample_interval, stop_low, stop_high, early_stop };
    eprintln!(
        "training conv{layer}: {maps} maps over {} channels, {} images from {}",
        cache.header.c,
        images.min(cache.len()),
        cache_path.display()
    );
    let t0 = std::time::Instant::now();
    let stream = (0..cache.len()).map(|i| cache.tensor(i));
    let (state, trace) = train_conv(state, stream, &schedule)?;
    match trace.stop {
        StopReason::CompletedSchedule => eprintln!("completed {images} images"),
        StopReason::ConvergenceBand { image, c_l } => {
            eprintln!("early stop at image {image}: C_l = {c_l:.5} inside stopping band")
        }
        StopReason::StreamExhausted { image } => {
            eprintln!("cache exhausted at image {image} (schedule asked for {images})")
        }
    }
    eprintln!(
        "trained in {:.1?}: mean STDP spikes/image {:.2}, final C_l {:.5}",
        t0.elapsed(),
        trace.mean_spikes_per_image(),
        trace.final_convergence()
    );

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(stdpnet::Error::from)?;
    let snapshot_out =
        args.snapshot_out.unwrap_or_else(|| out_dir.join(format!("{run_id}_weights.spkw")));
    let trace_out = args.trace_out.unwrap_or_else(|| out_dir.join(format!("{run_id}_trace.spkr")));

    let source_hash = sha256_files(&[&cache_path])?;
    crate::commands::ensure_parent(&snapshot_out).map_err(stdpnet::Error::from)?;
    write_conv_snapshot(&snapshot_out, &state, seed, &source_hash)?;
    crate::commands::ensure_parent(&trace_out).map_err(stdpnet::Error::from)?;
    write_trace(&trace_out, &trace)?;
    export_curves(&RunReport::from_trace(&trace), &out_dir, &run_id)?;

    r.note(&format!("{prefix}.cache"), cache_path.display());
    r.note("out.snapshot", snapshot_out.display());
    r.note("out.trace", trace_out.display());
    r.write_resolved(&out_dir, &run_id).map_err(stdpnet::Error::from)?;
    eprintln!("snapshot: {}", snapshot_out.display());
    Ok(())
}
