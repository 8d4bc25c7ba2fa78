//! Diagnostic artifact export: weight-evolution frames, receptive-field
//! composites, convergence/temporal-difference/spike-statistics curves.
//!
//! Images are written as binary PGM (P5); curves as CSV with a header row.
//! Everything here is a pure function of its inputs, so repeated exports are
//! byte-identical.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};

use crate::classifier::EvalReport;
use crate::error::{Error, Result};
use crate::snncore::WeightTrace;

/// 8-bit grayscale raster with a PGM writer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

/// Scale a real-valued frame to `[0, 255]`: min to 0, max to 255, constant
/// frames to mid-gray 128.
pub fn normalize_frame(frame: &Array2<f64>) -> Array2<u8> {
    let min = frame.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = frame.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Array2::from_elem(frame.dim(), 128);
    }
    frame.mapv(|v| ((v - min) / (max - min) * 255.0).round() as u8)
}

/// ON minus OFF taps of one map's kernel; requires a two-channel layer.
pub fn render_kernel(weights: &Array4<f64>, map: usize) -> Result<Array2<f64>> {
    let (m, c, kh, kw) = weights.dim();
    if c != 2 {
        return Err(Error::GeometryMismatch(format!(
            "ON-OFF rendering needs 2 channels, kernel has {c}"
        )));
    }
    if map >= m {
        return Err(Error::GeometryMismatch(format!("map {map} out of {m}")));
    }
    Ok(Array2::from_shape_fn((kh, kw), |(i, j)| {
        weights[[map, 0, i, j]] - weights[[map, 1, i, j]]
    }))
}

const TILE_GAP: usize = 1;
const TILE_GAP_VALUE: u8 = 32;

/// Tile per-map frames into a `ploty` rows x `plotx` cols sheet, normalizing
/// each cell independently. Missing cells stay at the gap value.
pub fn tile_sheet(frames: &[Array2<f64>], plotx: usize, ploty: usize) -> Result<Pgm> {
    if frames.is_empty() || plotx == 0 || ploty == 0 {
        return Err(Error::EmptyTrace);
    }
    let (kh, kw) = frames[0].dim();
    if frames.iter().any(|f| f.dim() != (kh, kw)) {
        return Err(Error::ShapeMismatch("tile frames differ in size".into()));
    }
    let height = ploty * kh + (ploty + 1) * TILE_GAP;
    let width = plotx * kw + (plotx + 1) * TILE_GAP;
    let mut pixels = vec![TILE_GAP_VALUE; width * height];
    for (idx, frame) in frames.iter().take(plotx * ploty).enumerate() {
        let (row, col) = (idx / plotx, idx % plotx);
        let top = TILE_GAP + row * (kh + TILE_GAP);
        let left = TILE_GAP + col * (kw + TILE_GAP);
        let cell = normalize_frame(frame);
        for i in 0..kh {
            for j in 0..kw {
                pixels[(top + i) * width + left + j] = cell[[i, j]];
            }
        }
    }
    Ok(Pgm { width, height, pixels })
}

/// One tiled sheet per weight snapshot, each cell showing a map's ON-OFF
/// kernel.
pub fn render_feature_frames(trace: &WeightTrace, plotx: usize, ploty: usize) -> Result<Vec<Pgm>> {
    if trace.snapshots.is_empty() {
        return Err(Error::EmptyTrace);
    }
    trace
        .snapshots
        .iter()
        .map(|(_, weights)| {
            let maps = weights.dim().0;
            let frames: Vec<Array2<f64>> =
                (0..maps).map(|m| render_kernel(weights, m)).collect::<Result<_>>()?;
            tile_sheet(&frames, plotx, ploty)
        })
        .collect()
}

/// Back-project each upper-layer kernel through the pooling stride onto
/// input space: the composite is the stride-placed weighted sum of the base
/// layer's ON-OFF kernels,
/// `canvas += upper(w, m, i, j) * base_kernel(m)` at offset `(i*stride, j*stride)`.
pub fn receptive_field_composite(
    upper_weights: &Array4<f64>,
    base_weights: &Array4<f64>,
    stride: usize,
) -> Result<Vec<Array2<f64>>> {
    let (upper_maps, upper_ch, k2h, k2w) = upper_weights.dim();
    let base_maps = base_weights.dim().0;
    let base_k = base_weights.dim().2;
    if upper_ch != base_maps {
        return Err(Error::GeometryMismatch(format!(
            "upper layer has {upper_ch} input channels, base layer has {base_maps} maps"
        )));
    }
    if stride == 0 {
        return Err(Error::GeometryMismatch("stride must be >= 1".into()));
    }
    let base_rendered: Vec<Array2<f64>> =
        (0..base_maps).map(|m| render_kernel(base_weights, m)).collect::<Result<_>>()?;
    let height = (k2h - 1) * stride + base_k;
    let width = (k2w - 1) * stride + base_k;
    let mut out = Vec::with_capacity(upper_maps);
    for w in 0..upper_maps {
        let mut canvas = Array2::<f64>::zeros((height, width));
        for m in 0..base_maps {
            for i in 0..k2h {
                for j in 0..k2w {
                    let coeff = upper_weights[[w, m, i, j]];
                    if coeff == 0.0 {
                        continue;
                    }
                    for a in 0..base_k {
                        for b in 0..base_k {
                            canvas[[i * stride + a, j * stride + b]] +=
                                coeff * base_rendered[m][[a, b]];
                        }
                    }
                }
            }
        }
        out.push(canvas);
    }
    Ok(out)
}

/// Curves and statistics gathered from a training run.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// `(image index, C_l)`, sorted by image index.
    pub convergence_curve: Vec<(usize, f64)>,
    /// `(image index, temporal difference)`.
    pub td_curve: Vec<(usize, f64)>,
    pub per_map_updates: Vec<u64>,
    pub spikes_per_image: Vec<u32>,
    pub eval: Option<EvalReport>,
}

impl RunReport {
    pub fn from_trace(trace: &WeightTrace) -> Self {
        RunReport {
            convergence_curve: trace.convergence.clone(),
            td_curve: trace.temporal_diffs.clone(),
            per_map_updates: trace.per_map_updates.clone(),
            spikes_per_image: trace.spikes_per_image.clone(),
            eval: None,
        }
    }
}

fn write_csv(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content.as_bytes())?;
    Ok(())
}

/// Write one CSV per curve under `dir`, named `<run_id>_<artifact>.csv`.
/// Returns the paths written.
pub fn export_curves(report: &RunReport, dir: &Path, run_id: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut convergence = String::from("image_index,c_l\n");
    for (i, c) in &report.convergence_curve {
        convergence.push_str(&format!("{i},{c}\n"));
    }
    let mut td = String::from("image_index,temporal_difference\n");
    for (i, t) in &report.td_curve {
        td.push_str(&format!("{i},{t}\n"));
    }
    let mut updates = String::from("map,stdp_updates\n");
    for (m, u) in report.per_map_updates.iter().enumerate() {
        updates.push_str(&format!("{m},{u}\n"));
    }
    let mut spikes = String::from("image_index,stdp_spikes\n");
    for (i, s) in report.spikes_per_image.iter().enumerate() {
        spikes.push_str(&format!("{i},{s}\n"));
    }

    for (artifact, content) in [
        ("convergence", convergence),
        ("temporal_difference", td),
        ("map_updates", updates),
        ("spikes_per_image", spikes),
    ] {
        let path = dir.join(format!("{run_id}_{artifact}.csv"));
        write_csv(&path, &content)?;
        written.push(path);
    }
    Ok(written)
}

/// Write tiled frames under `dir` as `<run_id>_<artifact>_<index>.pgm`.
pub fn save_frames(frames: &[Pgm], dir: &Path, run_id: &str, artifact: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("{run_id}_{artifact}_{i}.pgm"));
        frame.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snncore::{train_conv, ConvLayerState, TrainSchedule};

    fn trace_with_snapshots(n_images: usize) -> WeightTrace {
        let state = ConvLayerState::conv1_defaults(3);
        let stream = (0..n_images).map(|_| crate::encoder::SpikeTensor::zeros(2, 2, 27, 27));
        let schedule = TrainSchedule {
            images: n_images,
            sample_interval: 10,
            ..TrainSchedule::default()
        };
        train_conv(state, stream, &schedule).unwrap().1
    }

    #[test]
    fn one_sheet_per_snapshot_with_expected_dims() {
        let trace = trace_with_snapshots(20);
        let frames = render_feature_frames(&trace, 5, 6).unwrap();
        assert_eq!(frames.len(), trace.snapshots.len());
        // 5 columns of 5-wide cells + 6 gaps; 6 rows of 5-high cells + 7 gaps.
        assert_eq!(frames[0].width, 5 * 5 + 6);
        assert_eq!(frames[0].height, 6 * 5 + 7);
    }

    #[test]
    fn constant_on_off_renders_mid_gray() {
        let mut trace = trace_with_snapshots(0);
        for (_, w) in trace.snapshots.iter_mut() {
            w.fill(0.8);
        }
        let frames = render_feature_frames(&trace, 5, 6).unwrap();
        // Every non-gap pixel is 128.
        let interior: Vec<u8> =
            frames[0].pixels.iter().cloned().filter(|&p| p != TILE_GAP_VALUE).collect();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|&p| p == 128));
    }

    #[test]
    fn empty_trace_is_rejected() {
        let mut trace = trace_with_snapshots(0);
        trace.snapshots.clear();
        assert!(matches!(render_feature_frames(&trace, 5, 6), Err(Error::EmptyTrace)));
    }

    #[test]
    fn normalization_hits_full_range() {
        let frame = ndarray::arr2(&[[1.0, 2.0], [3.0, 5.0]]);
        let n = normalize_frame(&frame);
        assert_eq!(n[[0, 0]], 0);
        assert_eq!(n[[1, 1]], 255);
    }

    #[test]
    fn curves_export_is_deterministic_and_counts_rows() {
        let report = RunReport {
            convergence_curve: vec![(0, 0.16), (200, 0.11), (400, 0.07)],
            td_curve: vec![(200, 1e-4), (400, 2e-5)],
            per_map_updates: vec![3, 0, 7],
            spikes_per_image: vec![5, 6, 6, 4],
            eval: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = export_curves(&report, dir.path(), "run1").unwrap();
        assert_eq!(paths.len(), 4);
        let conv = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(conv.lines().count(), 4, "header + 3 points");
        assert!(conv.starts_with("image_index,c_l\n"));
        let first = std::fs::read(&paths[0]).unwrap();
        export_curves(&report, dir.path(), "run1").unwrap();
        assert_eq!(std::fs::read(&paths[0]).unwrap(), first, "re-export is byte-identical");
    }

    #[test]
    fn empty_curves_export_headers_only() {
        let report = RunReport {
            convergence_curve: vec![],
            td_curve: vec![],
            per_map_updates: vec![],
            spikes_per_image: vec![],
            eval: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = export_curves(&report, dir.path(), "empty").unwrap();
        for p in paths {
            let text = std::fs::read_to_string(p).unwrap();
            assert_eq!(text.lines().count(), 1);
        }
    }

    #[test]
    fn identity_chain_composite_reproduces_base_rendering() {
        let base = ConvLayerState::conv1_defaults(5).weights;
        let maps = base.dim().0;
        // 1x1 identity taps select each base map once, stride 1.
        let upper = Array4::from_shape_fn((maps, maps, 1, 1), |(w, m, _, _)| {
            if w == m {
                1.0
            } else {
                0.0
            }
        });
        let composites = receptive_field_composite(&upper, &base, 1).unwrap();
        assert_eq!(composites.len(), maps);
        for (m, canvas) in composites.iter().enumerate() {
            assert_eq!(canvas, &render_kernel(&base, m).unwrap());
        }
    }

    #[test]
    fn single_tap_projects_one_base_kernel_at_its_offset() {
        // Single-tap projection oracle: only tap (m0=2, i0=1, j0=3) set, so
        // the composite is v * base kernel 2 placed at (2*1, 2*3).
        let base = ConvLayerState::conv1_defaults(5).weights;
        let mut upper = Array4::<f64>::zeros((1, base.dim().0, 5, 5));
        let v = 0.7;
        upper[[0, 2, 1, 3]] = v;
        let composites = receptive_field_composite(&upper, &base, 2).unwrap();
        assert_eq!(composites.len(), 1);
        let canvas = &composites[0];
        assert_eq!(canvas.dim(), (4 * 2 + 5, 4 * 2 + 5));
        let k2 = render_kernel(&base, 2).unwrap();
        for i in 0..canvas.dim().0 {
            for j in 0..canvas.dim().1 {
                let inside = (2..7).contains(&i) && (6..11).contains(&j);
                let expected = if inside { v * k2[[i - 2, j - 6]] } else { 0.0 };
                assert_eq!(canvas[[i, j]], expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let base = ConvLayerState::conv1_defaults(5).weights;
        let upper = Array4::<f64>::zeros((4, 7, 5, 5));
        assert!(matches!(
            receptive_field_composite(&upper, &base, 2),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn pgm_encoding_has_p5_header() {
        let pgm = Pgm { width: 3, height: 2, pixels: vec![0, 128, 255, 1, 2, 3] };
        let bytes = pgm.encode();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
    }
}
