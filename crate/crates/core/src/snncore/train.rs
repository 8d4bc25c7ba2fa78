//! STDP training loop over a stream of encoded images.
//!
//! Per time slice: accumulate potentials, find threshold crossings, apply
//! lateral inhibition, run STDP competition, update the winners' kernels.
//! All ledgers and potentials reset at image boundaries; learning rates
//! double on the layer's schedule; weights are snapshotted every
//! `sample_interval` images.

use ndarray::{Array3, Array4};

use crate::encoder::SpikeTensor;
use crate::error::{Error, Result};

use super::{
    accumulate_potentials, convergence_factor, lateral_inhibition, stdp_competition, stdp_update,
    temporal_difference, threshold_crossings, Candidate, ConvLayerState, InhibitionLedger,
    PotentialVolume,
};

/// How long to train and when to sample or stop.
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    /// Number of images to consume from the stream.
    pub images: usize,
    /// Images between weight snapshots.
    pub sample_interval: usize,
    /// Lower edge of the convergence stopping band.
    pub stop_low: f64,
    /// Upper edge of the convergence stopping band.
    pub stop_high: f64,
    /// Stop once `stop_low < C_l < stop_high` at a snapshot.
    pub early_stop: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            images: 6000,
            sample_interval: 200,
            stop_low: 0.01,
            stop_high: 0.02,
            early_stop: false,
        }
    }
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    CompletedSchedule,
    /// The convergence factor entered the stopping band.
    ConvergenceBand { image: usize, c_l: f64 },
    /// The stream ran out before the schedule was filled.
    StreamExhausted { image: usize },
}

/// Everything recorded while training: weight snapshots, per-map update
/// counts, per-image STDP spike counts, and the convergence curves.
#[derive(Debug, Clone)]
pub struct WeightTrace {
    /// `(images_seen, weights)` pairs, strictly increasing indices; the first
    /// entry is the initial state and the last the final state.
    pub snapshots: Vec<(usize, Array4<f64>)>,
    pub per_map_updates: Vec<u64>,
    pub spikes_per_image: Vec<u32>,
    /// `(images_seen, C_l)` at every snapshot.
    pub convergence: Vec<(usize, f64)>,
    /// `(images_seen, mean squared weight change)` between consecutive snapshots.
    pub temporal_diffs: Vec<(usize, f64)>,
    pub stop: StopReason,
}

impl WeightTrace {
    pub fn mean_spikes_per_image(&self) -> f64 {
        if self.spikes_per_image.is_empty() {
            return 0.0;
        }
        self.spikes_per_image.iter().map(|&s| s as f64).sum::<f64>()
            / self.spikes_per_image.len() as f64
    }

    pub fn final_convergence(&self) -> f64 {
        self.convergence.last().map(|&(_, c)| c).unwrap_or(f64::NAN)
    }
}

/// Train a convolution layer on a stream of spike tensors.
///
/// Panics if two STDP winners ever share an r x r area within one image; the
/// competition bookkeeping makes that impossible, and the check is cheap
/// enough to keep on permanently.
pub fn train_conv<I>(
    mut state: ConvLayerState,
    stream: I,
    schedule: &TrainSchedule,
) -> Result<(ConvLayerState, WeightTrace)>
where
    I: IntoIterator<Item = SpikeTensor>,
{
    let mut trace = WeightTrace {
        snapshots: vec![(state.images_seen, state.weights.clone())],
        per_map_updates: vec![0; state.maps()],
        spikes_per_image: Vec::new(),
        convergence: vec![(state.images_seen, convergence_factor(&state.weights))],
        temporal_diffs: Vec::new(),
        stop: StopReason::CompletedSchedule,
    };
    if schedule.images == 0 {
        return Ok((state, trace));
    }

    let k = state.kernel();
    let half = state.inhibition_radius / 2;
    let mut geometry: Option<(usize, usize, usize, usize)> = None;
    let mut ledger = InhibitionLedger::new(0, 0, 0);
    let mut volume: PotentialVolume = Array3::zeros((0, 0, 0));
    let mut input_cum: Array3<u8> = Array3::zeros((0, 0, 0));

    let mut processed = 0usize;
    let mut stream = stream.into_iter();
    'images: while processed < schedule.images {
        let tensor = match stream.next() {
            Some(t) => t,
            None => {
                if processed == 0 {
                    return Err(Error::EmptyStream);
                }
                trace.stop = StopReason::StreamExhausted { image: state.images_seen };
                break 'images;
            }
        };
        let dim = tensor.dim();
        match geometry {
            None => {
                let (_, c, h, w) = dim;
                if c != state.in_channels() {
                    return Err(Error::ShapeMismatch(format!(
                        "stream has {c} channels, layer expects {}",
                        state.in_channels()
                    )));
                }
                let oh = state.out_side(h)?;
                let ow = state.out_side(w)?;
                ledger = InhibitionLedger::new(state.maps(), oh, ow);
                volume = Array3::zeros((state.maps(), oh, ow));
                input_cum = Array3::zeros((c, h, w));
                geometry = Some(dim);
            }
            Some(g) if g != dim => {
                return Err(Error::ShapeMismatch(format!("tensor {dim:?} after {g:?}")));
            }
            Some(_) => {}
        }

        ledger.reset();
        volume.fill(0.0);
        input_cum.fill(0);
        let mut image_winners: Vec<Candidate> = Vec::new();

        for t in 0..dim.0 {
            let slice = tensor.slice(t);
            input_cum.zip_mut_with(&slice, |cum, &s| *cum |= s);
            accumulate_potentials(&state, &slice, &mut volume)?;
            let crossings = threshold_crossings(&volume, state.threshold, &ledger);
            let survivors = lateral_inhibition(&crossings, &mut ledger);
            let winners = stdp_competition(&survivors, &mut ledger, state.inhibition_radius);

            for winner in &winners {
                for prev in &image_winners {
                    let dr = winner.row.abs_diff(prev.row);
                    let dc = winner.col.abs_diff(prev.col);
                    assert!(
                        dr > half || dc > half,
                        "two STDP winners inside one {r}x{r} area: \
                         ({},{},{}) and ({},{},{})",
                        prev.map,
                        prev.row,
                        prev.col,
                        winner.map,
                        winner.row,
                        winner.col,
                        r = state.inhibition_radius,
                    );
                }
                let mask = input_cum.slice(ndarray::s![
                    ..,
                    winner.row..winner.row + k,
                    winner.col..winner.col + k
                ]);
                stdp_update(&mut state, winner, &mask);
                trace.per_map_updates[winner.map] += 1;
            }
            image_winners.extend(winners);
        }

        trace.spikes_per_image.push(image_winners.len() as u32);
        state.images_seen += 1;
        processed += 1;

        if processed % schedule.sample_interval == 0 {
            let stop = record_snapshot(&state, &mut trace, schedule)?;
            if stop {
                trace.stop = StopReason::ConvergenceBand {
                    image: state.images_seen,
                    c_l: trace.final_convergence(),
                };
                break 'images;
            }
        }
    }

    if trace.snapshots.last().map(|&(i, _)| i) != Some(state.images_seen) {
        record_snapshot(&state, &mut trace, schedule)?;
    }
    Ok((state, trace))
}

fn record_snapshot(
    state: &ConvLayerState,
    trace: &mut WeightTrace,
    schedule: &TrainSchedule,
) -> Result<bool> {
    let (prev_idx, prev_weights) = trace.snapshots.last().expect("initial snapshot present");
    debug_assert!(*prev_idx < state.images_seen);
    let td = temporal_difference(prev_weights, &state.weights)?;
    trace.temporal_diffs.push((state.images_seen, td));
    let c_l = convergence_factor(&state.weights);
    trace.convergence.push((state.images_seen, c_l));
    trace.snapshots.push((state.images_seen, state.weights.clone()));
    Ok(schedule.early_stop && schedule.stop_low < c_l && c_l < schedule.stop_high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::SpikeTensor;

    fn schedule(images: usize) -> TrainSchedule {
        TrainSchedule { images, sample_interval: 200, ..TrainSchedule::default() }
    }

    #[test]
    fn zero_image_schedule_leaves_state_unchanged() {
        let state = ConvLayerState::conv1_defaults(1);
        let before = state.weights.clone();
        let (after, trace) = train_conv(state, std::iter::empty(), &schedule(0)).unwrap();
        assert_eq!(after.weights, before);
        assert_eq!(trace.snapshots.len(), 1);
        assert_eq!(trace.spikes_per_image.len(), 0);
    }

    #[test]
    fn empty_stream_with_nonzero_schedule_errors() {
        let state = ConvLayerState::conv1_defaults(1);
        assert!(matches!(
            train_conv(state, std::iter::empty(), &schedule(10)),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn all_zero_tensors_cause_no_updates() {
        let state = ConvLayerState::conv1_defaults(2);
        let before = state.weights.clone();
        let stream = (0..30).map(|_| SpikeTensor::zeros(12, 2, 27, 27));
        let (after, trace) = train_conv(state, stream, &schedule(30)).unwrap();
        assert_eq!(after.weights, before);
        assert!(trace.spikes_per_image.iter().all(|&s| s == 0));
        assert!(trace.per_map_updates.iter().all(|&u| u == 0));
        // C_l constant across the whole trace.
        let c0 = trace.convergence[0].1;
        assert!(trace.convergence.iter().all(|&(_, c)| c == c0));
    }

    #[test]
    fn stream_exhaustion_is_reported() {
        let state = ConvLayerState::conv1_defaults(2);
        let stream = (0..5).map(|_| SpikeTensor::zeros(12, 2, 27, 27));
        let (after, trace) = train_conv(state, stream, &schedule(50)).unwrap();
        assert_eq!(after.images_seen, 5);
        assert!(matches!(trace.stop, StopReason::StreamExhausted { image: 5 }));
    }

    /// A dense synthetic image drives real winner dynamics.
    fn dense_tensor(phase: usize) -> SpikeTensor {
        let mut t = SpikeTensor::zeros(12, 2, 27, 27);
        for u in 0..27 {
            for v in 0..27 {
                let c = (u + v + phase) % 2;
                let slice = (u * 31 + v * 17 + phase * 7) % 12;
                t.spikes[[slice, c, u, v]] = 1;
            }
        }
        t
    }

    #[test]
    fn training_is_deterministic_and_keeps_weights_in_unit_interval() {
        let run = || {
            let state = ConvLayerState::conv1_defaults(3);
            let stream = (0..40).map(dense_tensor);
            train_conv(state, stream, &schedule(40)).unwrap()
        };
        let (a, trace_a) = run();
        let (b, trace_b) = run();
        assert_eq!(a.weights, b.weights);
        assert_eq!(trace_a.spikes_per_image, trace_b.spikes_per_image);
        assert!(a.weights.iter().all(|&w| w > 0.0 && w < 1.0));
        assert!(trace_a.spikes_per_image.iter().any(|&s| s > 0), "dynamics actually fired");
    }

    #[test]
    fn snapshots_are_strictly_increasing_and_include_final() {
        let state = ConvLayerState::conv1_defaults(3);
        let stream = (0..250).map(dense_tensor);
        let (after, trace) = train_conv(state, stream, &schedule(250)).unwrap();
        let indices: Vec<usize> = trace.snapshots.iter().map(|&(i, _)| i).collect();
        assert!(indices.windows(2).all(|w| w[0] < w[1]), "{indices:?}");
        assert_eq!(indices.first(), Some(&0));
        assert_eq!(indices.last(), Some(&after.images_seen));
        assert_eq!(trace.temporal_diffs.len(), trace.snapshots.len() - 1);
    }
}
