//! `stdpnet stats`: diagnostic exports — weight-evolution frames, convergence
//! curves, receptive-field composites, spike-cache statistics.

use std::path::{Path, PathBuf};

use stdpnet::diagnostics::{
    export_curves, receptive_field_composite, render_feature_frames, save_frames, tile_sheet,
    RunReport,
};
use stdpnet::persist::{read_conv_snapshot, read_trace, SpikeCache};

use crate::config::Resolver;
use crate::{require_file, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Weight trace to render curves and evolution frames from.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Tiling columns for frame sheets.
    #[arg(long)]
    plotx: Option<usize>,
    /// Tiling rows for frame sheets.
    #[arg(long)]
    ploty: Option<usize>,
    /// Upper-layer snapshot for receptive-field composites (e.g. Conv2).
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Base-layer snapshot (Conv1) the composites project through.
    #[arg(long)]
    base_snapshot: Option<PathBuf>,
    /// Cumulative stride between the layers (2 for Conv1 -> Pool1 -> Conv2).
    #[arg(long)]
    stride: Option<usize>,
    /// Spike cache to report statistics for.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(args: Args, config: Option<&Path>) -> CliResult {
    let mut r = Resolver::new(config)?;
    let plotx = r.get("stats.plotx", args.plotx, 5usize)?;
    let ploty = r.get("stats.ploty", args.ploty, 6usize)?;
    let stride = r.get("stats.stride", args.stride, 2usize)?;
    let run_id = r.get("run_id", args.run_id, "stats".to_string())?;
    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(stdpnet::Error::from)?;

    let mut did_anything = false;

    if let Some(trace_path) = &args.trace {
        require_file(trace_path, "weight trace")?;
        let trace = read_trace(trace_path)?;
        export_curves(&RunReport::from_trace(&trace), &out_dir, &run_id)?;
        eprintln!(
            "trace: {} snapshots, mean STDP spikes/image {:.2}, final C_l {:.5}",
            trace.snapshots.len(),
            trace.mean_spikes_per_image(),
            trace.final_convergence()
        );
        // Evolution sheets only make sense for two-channel (ON/OFF) layers.
        if trace.snapshots[0].1.dim().1 == 2 {
            let frames = render_feature_frames(&trace, plotx, ploty)?;
            let paths = save_frames(&frames, &out_dir, &run_id, "features")?;
            eprintln!("wrote {} evolution sheets", paths.len());
        } else {
            eprintln!("skipping evolution sheets: layer is not ON/OFF (2-channel)");
        }
        did_anything = true;
    }

    if let Some(upper_path) = &args.snapshot {
        let base_path = args
            .base_snapshot
            .as_ref()
            .ok_or_else(|| CliError::Usage("--snapshot needs --base-snapshot".into()))?;
        require_file(upper_path, "upper snapshot")?;
        require_file(base_path, "base snapshot")?;
        let upper = read_conv_snapshot(upper_path)?;
        let base = read_conv_snapshot(base_path)?;
        let composites =
            receptive_field_composite(&upper.state.weights, &base.state.weights, stride)?;
        // One sheet tiling as many composites as fit the grid.
        let sheet = tile_sheet(&composites, plotx, ploty)?;
        let path = out_dir.join(format!("{run_id}_receptive_fields_0.pgm"));
        sheet.write(&path)?;
        eprintln!("wrote receptive-field composite sheet for {} maps: {}",
            composites.len().min(plotx * ploty), path.display());
        did_anything = true;
    }

    if let Some(cache_path) = &args.cache {
        require_file(cache_path, "spike cache")?;
        let cache = SpikeCache::load(cache_path)?;
        let mut total = 0usize;
        for i in 0..cache.len() {
            total += cache.tensor(i).count_spikes();
        }
        let mean = if cache.is_empty() { 0.0 } else { total as f64 / cache.len() as f64 };
        eprintln!(
            "cache {}: {} tensors {}x{}x{}x{}, {} classes, mean spikes/image {:.1}",
            cache_path.display(),
            cache.len(),
            cache.header.t,
            cache.header.c,
            cache.header.h,
            cache.header.w,
            cache.header.num_classes,
            mean
        );
        did_anything = true;
    }

    if !did_anything {
        return Err(CliError::Usage(
            "stats needs at least one of --trace, --snapshot, --cache".into(),
        ));
    }
    r.write_resolved(&out_dir, &run_id).map_err(stdpnet::Error::from)?;
    Ok(())
}
