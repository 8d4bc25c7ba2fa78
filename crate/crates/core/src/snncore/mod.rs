//! Integrate-and-fire convolution layers trained by STDP, with lateral
//! inhibition, STDP competition, threshold-max pooling, and the convergence
//! metrics used as stopping criteria.
//!
//! All per-image bookkeeping (who fired, which maps and regions are muted)
//! lives in [`InhibitionLedger`] and is reset at image boundaries.

mod pool;
mod train;

pub use pool::{run_inference, PoolConfig};
pub use train::{train_conv, StopReason, TrainSchedule, WeightTrace};

use ndarray::{Array2, Array3, Array4, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Accumulated membrane potentials for the current image, `maps x H' x W'`.
pub type PotentialVolume = Array3<f64>;

/// An STDP-trainable bank of convolution kernels.
///
/// Weights stay strictly inside `(0, 1)`; the multiplicative STDP rule keeps
/// them there. `images_seen` drives the learning-rate doubling schedule and
/// persists across snapshot save/load.
#[derive(Debug, Clone)]
pub struct ConvLayerState {
    /// `maps x in_channels x kernel x kernel`, entries in `(0, 1)`.
    pub weights: Array4<f64>,
    /// Firing threshold; a neuron spikes iff its potential is strictly greater.
    pub threshold: f64,
    /// Side length of the square STDP-competition inhibition region (odd).
    pub inhibition_radius: usize,
    pub a_plus: f64,
    pub a_minus: f64,
    /// Double both learning rates every this many images.
    pub lr_double_every: usize,
    /// Images processed so far by training.
    pub images_seen: usize,
}

impl ConvLayerState {
    /// Fresh layer with weights drawn from a normal with mean 0.8 and
    /// variance 0.04 (standard deviation 0.2), clamped into
    /// `(0.001, 0.999)`; roughly a sixth of the raw draws land above 1 and
    /// get pinned near the upper bound.
    pub fn new(
        maps: usize,
        in_channels: usize,
        kernel: usize,
        threshold: f64,
        inhibition_radius: usize,
        a_plus: f64,
        a_minus: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::<f64>::new(0.8, 0.2).expect("valid std");
        let weights = Array4::from_shape_simple_fn((maps, in_channels, kernel, kernel), || {
            normal.sample(&mut rng).clamp(0.001, 0.999)
        });
        ConvLayerState {
            weights,
            threshold,
            inhibition_radius,
            a_plus,
            a_minus,
            lr_double_every: 1500,
            images_seen: 0,
        }
    }

    /// First convolution layer: 30 maps over the 2 ON/OFF channels.
    pub fn conv1_defaults(seed: u64) -> Self {
        Self::new(30, 2, 5, 15.0, 11, 0.004, 0.003, seed)
    }

    /// Second convolution layer: 200 maps over the 30 pooled Conv1 maps.
    /// a_minus keeps Conv1's 3/4 ratio to a_plus.
    pub fn conv2_defaults(seed: u64) -> Self {
        Self::new(200, 30, 5, 15.0, 3, 0.0002, 0.00015, seed)
    }

    pub fn maps(&self) -> usize {
        self.weights.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn kernel(&self) -> usize {
        self.weights.dim().2
    }

    /// Learning rates after doubling once per `lr_double_every` images,
    /// capped at 0.25 so a single update can never push a weight out of
    /// `(0, 1)`.
    pub fn effective_rates(&self) -> (f64, f64) {
        let doublings = (self.images_seen / self.lr_double_every) as i32;
        let factor = 2f64.powi(doublings);
        ((self.a_plus * factor).min(0.25), (self.a_minus * factor).min(0.25))
    }

    /// Output grid side length for an `input` x `input` spike slice.
    pub fn out_side(&self, input: usize) -> Result<usize> {
        if input < self.kernel() {
            return Err(Error::GeometryMismatch(format!(
                "input side {input} smaller than kernel {}",
                self.kernel()
            )));
        }
        Ok(input - self.kernel() + 1)
    }
}

/// A neuron that crossed threshold (or survived a selection stage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub map: usize,
    pub row: usize,
    pub col: usize,
    pub potential: f64,
}

/// Per-image mute/fire bookkeeping for one convolution layer.
///
/// `location_winner` records lateral-inhibition winners (one map owns each
/// location for the rest of the image), `map_muted` marks maps that already
/// produced an STDP winner, `region_muted` marks cells covered by some
/// winner's r x r inhibition area, and `fired` bars any neuron from spiking
/// twice within one image.
#[derive(Debug, Clone)]
pub struct InhibitionLedger {
    pub location_winner: Array2<i32>,
    pub map_muted: Vec<bool>,
    pub region_muted: Array2<bool>,
    pub fired: Array3<bool>,
}

impl InhibitionLedger {
    pub fn new(maps: usize, h: usize, w: usize) -> Self {
        InhibitionLedger {
            location_winner: Array2::from_elem((h, w), -1),
            map_muted: vec![false; maps],
            region_muted: Array2::from_elem((h, w), false),
            fired: Array3::from_elem((maps, h, w), false),
        }
    }

    /// Clear everything for the next image ("reset neurons").
    pub fn reset(&mut self) {
        self.location_winner.fill(-1);
        self.map_muted.iter_mut().for_each(|m| *m = false);
        self.region_muted.fill(false);
        self.fired.fill(false);
    }

    /// Whether neuron `(map, row, col)` may still spike.
    pub fn eligible(&self, map: usize, row: usize, col: usize) -> bool {
        if self.fired[[map, row, col]] || self.map_muted[map] || self.region_muted[[row, col]] {
            return false;
        }
        let lw = self.location_winner[[row, col]];
        lw < 0 || lw as usize == map
    }
}

/// Add one time slice's contribution to the accumulated potentials:
/// `volume(w,u,v) += sum spike(c,u+i,v+j) * weights(w,c,i,j)`.
///
/// The slice contribution is summed separately and added to `volume` with one
/// addition per cell, so applying the same slice twice yields exactly twice
/// the single contribution.
pub fn accumulate_potentials(
    state: &ConvLayerState,
    spike_slice: &ArrayView3<u8>,
    volume: &mut PotentialVolume,
) -> Result<()> {
    let (c_in, h, w) = spike_slice.dim();
    let k = state.kernel();
    if c_in != state.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "slice has {c_in} channels, layer expects {}",
            state.in_channels()
        )));
    }
    let (vh, vw) = (volume.dim().1, volume.dim().2);
    if volume.dim().0 != state.maps() || vh != h - k + 1 || vw != w - k + 1 {
        return Err(Error::ShapeMismatch(format!(
            "volume {:?} does not match maps {} and valid geometry {}x{}",
            volume.dim(),
            state.maps(),
            h - k + 1,
            w - k + 1
        )));
    }

    let mut contribution: Array3<f64> = Array3::zeros(volume.raw_dim());
    for c in 0..c_in {
        for x in 0..h {
            for y in 0..w {
                if spike_slice[[c, x, y]] == 0 {
                    continue;
                }
                let u_lo = x.saturating_sub(k - 1).min(vh);
                let u_hi = (x + 1).min(vh);
                let v_lo = y.saturating_sub(k - 1).min(vw);
                let v_hi = (y + 1).min(vw);
                for m in 0..state.maps() {
                    for u in u_lo..u_hi {
                        let i = x - u;
                        for v in v_lo..v_hi {
                            let j = y - v;
                            contribution[[m, u, v]] += state.weights[[m, c, i, j]];
                        }
                    }
                }
            }
        }
    }
    *volume += &contribution;
    Ok(())
}

/// Neurons whose potential strictly exceeds `gamma` and that the ledger still
/// allows to spike, in map-major row-major order.
pub fn threshold_crossings(
    volume: &PotentialVolume,
    gamma: f64,
    ledger: &InhibitionLedger,
) -> Vec<Candidate> {
    let (m, h, w) = volume.dim();
    let mut out = Vec::new();
    for map in 0..m {
        for row in 0..h {
            for col in 0..w {
                let p = volume[[map, row, col]];
                if p > gamma && ledger.eligible(map, row, col) {
                    out.push(Candidate { map, row, col, potential: p });
                }
            }
        }
    }
    out
}

/// Cross-map winner-take-all at each location.
///
/// At every `(u,v)` only the candidate with the highest potential survives
/// (ties: lowest map index). Winners are marked fired and claim the location
/// for the rest of the image, so later-slice challengers from other maps are
/// already filtered out by [`InhibitionLedger::eligible`].
pub fn lateral_inhibition(
    candidates: &[Candidate],
    ledger: &mut InhibitionLedger,
) -> Vec<Candidate> {
    let (h, w) = ledger.location_winner.dim();
    let mut best: Array2<i32> = Array2::from_elem((h, w), -1);
    for (idx, cand) in candidates.iter().enumerate() {
        let cell = &mut best[[cand.row, cand.col]];
        // Candidates arrive map-major, so strict > keeps the lowest map on ties.
        if *cell < 0 || cand.potential > candidates[*cell as usize].potential {
            *cell = idx as i32;
        }
    }
    let mut winners = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let idx = best[[row, col]];
            if idx >= 0 {
                let cand = candidates[idx as usize];
                ledger.fired[[cand.map, cand.row, cand.col]] = true;
                ledger.location_winner[[cand.row, cand.col]] = cand.map as i32;
                winners.push(cand);
            }
        }
    }
    winners
}

/// STDP competition: pick each map's single best survivor, then let them
/// inhibit one another in descending potential order over r x r areas.
///
/// Every accepted winner mutes its own map for the rest of the image and
/// mutes all maps inside the r x r region centered on it. At most one winner
/// per r x r area across all maps can result.
pub fn stdp_competition(
    survivors: &[Candidate],
    ledger: &mut InhibitionLedger,
    radius: usize,
) -> Vec<Candidate> {
    let maps = ledger.map_muted.len();
    let mut per_map: Vec<Option<Candidate>> = vec![None; maps];
    for cand in survivors {
        let slot = &mut per_map[cand.map];
        // Survivors arrive in row-major order; strict > keeps the first on ties.
        match slot {
            Some(best) if cand.potential <= best.potential => {}
            _ => *slot = Some(*cand),
        }
    }
    let mut reps: Vec<Candidate> = per_map.into_iter().flatten().collect();
    reps.sort_by(|a, b| {
        b.potential
            .partial_cmp(&a.potential)
            .expect("finite potentials")
            .then_with(|| (a.map, a.row, a.col).cmp(&(b.map, b.row, b.col)))
    });

    let (h, w) = ledger.region_muted.dim();
    let half = radius / 2;
    let mut winners = Vec::new();
    for rep in reps {
        if ledger.region_muted[[rep.row, rep.col]] || ledger.map_muted[rep.map] {
            continue;
        }
        ledger.map_muted[rep.map] = true;
        let r_lo = rep.row.saturating_sub(half);
        let r_hi = (rep.row + half + 1).min(h);
        let c_lo = rep.col.saturating_sub(half);
        let c_hi = (rep.col + half + 1).min(w);
        for r in r_lo..r_hi {
            for c in c_lo..c_hi {
                ledger.region_muted[[r, c]] = true;
            }
        }
        winners.push(rep);
    }
    winners
}

/// Apply the multiplicative STDP rule to the winner's kernel.
///
/// `fired_mask(c,i,j) = 1` iff the presynaptic neuron at `(c, row+i, col+j)`
/// spiked at or before the current slice; those synapses are potentiated,
/// all others depressed. `w(1-w)` scaling keeps weights strictly in `(0,1)`.
pub fn stdp_update(state: &mut ConvLayerState, winner: &Candidate, fired_mask: &ArrayView3<u8>) {
    let (a_plus, a_minus) = state.effective_rates();
    let (c_in, kh, kw) = fired_mask.dim();
    debug_assert_eq!((c_in, kh, kw), (state.in_channels(), state.kernel(), state.kernel()));
    for c in 0..c_in {
        for i in 0..kh {
            for j in 0..kw {
                let w = state.weights[[winner.map, c, i, j]];
                let dw = if fired_mask[[c, i, j]] != 0 {
                    a_plus * w * (1.0 - w)
                } else {
                    -a_minus * w * (1.0 - w)
                };
                state.weights[[winner.map, c, i, j]] = w + dw;
            }
        }
    }
}

/// Convergence factor `C_l = sum w(1-w) / n`: 0.25 iff all weights are 0.5,
/// 0 when all weights saturate at 0 or 1.
pub fn convergence_factor(weights: &Array4<f64>) -> f64 {
    let n = weights.len() as f64;
    weights.iter().map(|&w| w * (1.0 - w)).sum::<f64>() / n
}

/// Mean squared change between two weight snapshots.
pub fn temporal_difference(prev: &Array4<f64>, curr: &Array4<f64>) -> Result<f64> {
    if prev.dim() != curr.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", prev.dim(), curr.dim())));
    }
    let n = prev.len() as f64;
    Ok(prev
        .iter()
        .zip(curr.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}
