//! Threshold-max pooling over 2x2 windows with stride 2, and the fixed-weight
//! inference pass (convolution with lateral inhibition, no STDP competition)
//! that feeds it.

use ndarray::{Array2, Array3};

use crate::encoder::SpikeTensor;
use crate::error::{Error, Result};

use super::{
    accumulate_potentials, lateral_inhibition, threshold_crossings, Candidate, ConvLayerState,
    InhibitionLedger, PotentialVolume,
};

/// Pooling behavior flags.
#[derive(Debug, Clone)]
pub struct PoolConfig {
    /// A window's spike propagates only if its potential strictly exceeds this.
    pub gamma: f64,
    /// Cross-map winner-take-all per pooled location, mirroring the conv rule.
    pub lateral_inh: bool,
    /// When false, a pooled neuron that fired is barred for the rest of the
    /// image, making time-summed pooled spikes binary.
    pub accumulate: bool,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { gamma: 15.0, lateral_inh: false, accumulate: false }
    }
}

/// Pool a per-slice sequence of surviving conv spikes (with their potentials)
/// into a `T x maps x H'/2 x W'/2` spike tensor.
///
/// Per 2x2 window and slice, the highest-potential spike propagates (ties:
/// smallest row, then column). Odd trailing rows/columns are dropped by the
/// floor division.
pub fn pool_sequence(
    slices: &[Vec<Candidate>],
    maps: usize,
    conv_h: usize,
    conv_w: usize,
    cfg: &PoolConfig,
) -> Result<SpikeTensor> {
    let (hp, wp) = (conv_h / 2, conv_w / 2);
    if hp == 0 || wp == 0 {
        return Err(Error::GeometryMismatch(format!(
            "conv grid {conv_h}x{conv_w} leaves no complete 2x2 pooling window"
        )));
    }
    let mut out = SpikeTensor::zeros(slices.len(), maps, hp, wp);
    let mut fired: Array3<bool> = Array3::from_elem((maps, hp, wp), false);
    let mut location_winner: Array2<i32> = Array2::from_elem((hp, wp), -1);

    // Scratch grids reused across slices: index of the best candidate per
    // pooled cell, and per location when lateral inhibition is on.
    let mut best_cell: Array3<i32> = Array3::from_elem((maps, hp, wp), -1);

    for (t, spikes) in slices.iter().enumerate() {
        best_cell.fill(-1);
        for (idx, s) in spikes.iter().enumerate() {
            let (up, vp) = (s.row / 2, s.col / 2);
            if up >= hp || vp >= wp {
                continue; // trailing row/col of an odd grid
            }
            let cell = &mut best_cell[[s.map, up, vp]];
            let better = match *cell {
                -1 => true,
                prev => {
                    let p = &spikes[prev as usize];
                    s.potential > p.potential
                        || (s.potential == p.potential && (s.row, s.col) < (p.row, p.col))
                }
            };
            if better {
                *cell = idx as i32;
            }
        }

        for up in 0..hp {
            for vp in 0..wp {
                // Gather this location's per-map winners, apply the fire-once
                // rule, then (optionally) cross-map inhibition.
                let mut chosen: Option<Candidate> = None;
                for m in 0..maps {
                    let idx = best_cell[[m, up, vp]];
                    if idx < 0 {
                        continue;
                    }
                    let cand = spikes[idx as usize];
                    if cand.potential <= cfg.gamma {
                        continue;
                    }
                    if !cfg.accumulate && fired[[m, up, vp]] {
                        continue;
                    }
                    if cfg.lateral_inh {
                        let lw = location_winner[[up, vp]];
                        if lw >= 0 && lw as usize != m {
                            continue;
                        }
                        match chosen {
                            Some(c) if cand.potential <= c.potential => {}
                            _ => chosen = Some(cand),
                        }
                    } else {
                        out.spikes[[t, m, up, vp]] = 1;
                        if !cfg.accumulate {
                            fired[[m, up, vp]] = true;
                        }
                    }
                }
                if cfg.lateral_inh {
                    if let Some(c) = chosen {
                        out.spikes[[t, c.map, up, vp]] = 1;
                        location_winner[[up, vp]] = c.map as i32;
                        if !cfg.accumulate {
                            fired[[c.map, up, vp]] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fixed-weight pass of one encoded image through conv (lateral inhibition
/// on, no STDP competition) and pooling. Returns the pooled spike tensor,
/// `T x maps x H'/2 x W'/2`.
pub fn run_inference(
    state: &ConvLayerState,
    input: &SpikeTensor,
    cfg: &PoolConfig,
) -> Result<SpikeTensor> {
    let (t_slices, c, h, w) = input.dim();
    if c != state.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels, layer expects {}",
            state.in_channels()
        )));
    }
    let oh = state.out_side(h)?;
    let ow = state.out_side(w)?;
    let mut ledger = InhibitionLedger::new(state.maps(), oh, ow);
    let mut volume: PotentialVolume = Array3::zeros((state.maps(), oh, ow));

    let mut conv_spikes: Vec<Vec<Candidate>> = Vec::with_capacity(t_slices);
    for t in 0..t_slices {
        accumulate_potentials(state, &input.slice(t), &mut volume)?;
        let crossings = threshold_crossings(&volume, state.threshold, &ledger);
        conv_spikes.push(lateral_inhibition(&crossings, &mut ledger));
    }
    pool_sequence(&conv_spikes, state.maps(), oh, ow, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_conv_spikes_pool_to_nothing() {
        let slices: Vec<Vec<Candidate>> = vec![Vec::new(); 4];
        let out = pool_sequence(&slices, 3, 10, 10, &PoolConfig::default()).unwrap();
        assert_eq!(out.count_spikes(), 0);
        assert_eq!(out.dim(), (4, 3, 5, 5));
    }

    #[test]
    fn single_spike_pools_to_halved_coordinates() {
        let slices = vec![vec![Candidate { map: 1, row: 7, col: 4, potential: 16.0 }]];
        let out = pool_sequence(&slices, 3, 10, 10, &PoolConfig::default()).unwrap();
        assert_eq!(out.count_spikes(), 1);
        assert_eq!(out.spikes[[0, 1, 3, 2]], 1);
    }

    #[test]
    fn fired_pooled_neuron_stays_silent_without_accumulate() {
        // Two-slice replay: same pooled cell eligible at t=3 and t=7.
        let mut slices: Vec<Vec<Candidate>> = vec![Vec::new(); 8];
        slices[3] = vec![Candidate { map: 0, row: 4, col: 4, potential: 16.0 }];
        slices[7] = vec![Candidate { map: 0, row: 5, col: 5, potential: 18.0 }];
        let cfg = PoolConfig { accumulate: false, ..PoolConfig::default() };
        let out = pool_sequence(&slices, 1, 10, 10, &cfg).unwrap();
        assert_eq!(out.spikes[[3, 0, 2, 2]], 1);
        assert_eq!(out.spikes[[7, 0, 2, 2]], 0);

        let cfg = PoolConfig { accumulate: true, ..PoolConfig::default() };
        let out = pool_sequence(&slices, 1, 10, 10, &cfg).unwrap();
        assert_eq!(out.spikes[[3, 0, 2, 2]], 1);
        assert_eq!(out.spikes[[7, 0, 2, 2]], 1);
    }

    #[test]
    fn window_max_propagates() {
        // Two spikes in the same 2x2 window at one slice: only the higher
        // potential one pools.
        let slices = vec![vec![
            Candidate { map: 0, row: 2, col: 2, potential: 16.0 },
            Candidate { map: 0, row: 3, col: 3, potential: 19.0 },
        ]];
        let out = pool_sequence(&slices, 1, 10, 10, &PoolConfig::default()).unwrap();
        assert_eq!(out.count_spikes(), 1);
        assert_eq!(out.spikes[[0, 0, 1, 1]], 1);
    }

    #[test]
    fn sub_threshold_potential_does_not_pool() {
        let slices = vec![vec![Candidate { map: 0, row: 0, col: 0, potential: 14.0 }]];
        let out = pool_sequence(&slices, 1, 10, 10, &PoolConfig::default()).unwrap();
        assert_eq!(out.count_spikes(), 0);
    }

    #[test]
    fn odd_trailing_row_is_dropped() {
        // 23x23 conv grid pools to 11x11; spikes in row/col 22 vanish.
        let slices = vec![vec![Candidate { map: 0, row: 22, col: 22, potential: 16.0 }]];
        let out = pool_sequence(&slices, 1, 23, 23, &PoolConfig::default()).unwrap();
        assert_eq!(out.dim(), (1, 1, 11, 11));
        assert_eq!(out.count_spikes(), 0);
    }

    #[test]
    fn pool_lateral_inhibition_keeps_best_map_and_location_claim() {
        let mut slices: Vec<Vec<Candidate>> = vec![Vec::new(); 2];
        slices[0] = vec![
            Candidate { map: 0, row: 0, col: 0, potential: 16.0 },
            Candidate { map: 1, row: 1, col: 1, potential: 18.0 },
        ];
        // Later slice: map 0 tries the same pooled location again.
        slices[1] = vec![Candidate { map: 0, row: 0, col: 1, potential: 30.0 }];
        let cfg = PoolConfig { lateral_inh: true, ..PoolConfig::default() };
        let out = pool_sequence(&slices, 2, 10, 10, &cfg).unwrap();
        assert_eq!(out.spikes[[0, 1, 0, 0]], 1, "higher-potential map wins the location");
        assert_eq!(out.spikes[[0, 0, 0, 0]], 0);
        assert_eq!(out.spikes[[1, 0, 0, 0]], 0, "location stays claimed by map 1");

        let cfg = PoolConfig { lateral_inh: false, ..PoolConfig::default() };
        let out = pool_sequence(&slices, 2, 10, 10, &cfg).unwrap();
        assert_eq!(out.spikes[[0, 1, 0, 0]], 1);
        assert_eq!(out.spikes[[0, 0, 0, 0]], 1, "without inhibition both maps pool");
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        let slices = vec![Vec::new()];
        assert!(matches!(
            pool_sequence(&slices, 1, 1, 8, &PoolConfig::default()),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn inference_on_blank_image_is_silent() {
        let state = ConvLayerState::conv1_defaults(5);
        let input = SpikeTensor::zeros(12, 2, 27, 27);
        let out = run_inference(&state, &input, &PoolConfig::default()).unwrap();
        assert_eq!(out.dim(), (12, 30, 11, 11));
        assert_eq!(out.count_spikes(), 0);
    }

    #[test]
    fn inference_time_sum_is_binary_without_accumulate() {
        let state = ConvLayerState::conv1_defaults(5);
        let mut input = SpikeTensor::zeros(12, 2, 27, 27);
        for u in 0..27 {
            for v in 0..27 {
                input.spikes[[(u * 5 + v) % 12, (u + v) % 2, u, v]] = 1;
            }
        }
        let out = run_inference(&state, &input, &PoolConfig::default()).unwrap();
        assert!(out.count_spikes() > 0, "dense input must drive some pooled spikes");
        assert!(out.time_summed().iter().all(|&s| s <= 1));
    }
}
