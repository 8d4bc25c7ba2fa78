//! Versioned binary containers for the pipeline's cached stages: spike
//! caches, conv weight snapshots, weight traces, feature caches, and
//! classifier snapshots.
//!
//! Layout conventions: a 4-byte ASCII magic, then a u32 version, then
//! fixed-order header fields, all multi-byte integers and floats
//! little-endian. Spike and feature payloads are bit-packed in flattening
//! order, least-significant bit first within each byte. Every header carries
//! the producing seed and a SHA-256 of the stage's inputs so downstream
//! stages can detect stale caches.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array4;
use sha2::{Digest, Sha256};

use crate::classifier::{MlpState, Mode};
use crate::encoder::SpikeTensor;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::snncore::{ConvLayerState, StopReason, WeightTrace};

pub const SPIKE_CACHE_MAGIC: &[u8; 4] = b"SPKC";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"SPKW";
pub const TRACE_MAGIC: &[u8; 4] = b"SPKR";
pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"SPKF";
pub const MODEL_MAGIC: &[u8; 4] = b"SPKM";
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// hashing

pub fn sha256_bytes(chunks: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
    }
    hasher.finalize().into()
}

/// Hash the raw bytes of `paths`, in order.
pub fn sha256_files<P: AsRef<Path>>(paths: &[P]) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    for p in paths {
        let mut f = std::fs::File::open(p.as_ref())?;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hasher.finalize().into())
}

// ---------------------------------------------------------------------------
// bit packing

pub fn packed_len(bits: usize) -> usize {
    (bits + 7) / 8
}

pub fn pack_bits(values: impl Iterator<Item = bool>, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(len)];
    for (i, v) in values.enumerate() {
        if v {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bit(packed: &[u8], index: usize) -> bool {
    packed[index / 8] & (1 << (index % 8)) != 0
}

// ---------------------------------------------------------------------------
// little-endian cursor helpers

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile { expected: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4], what: &str) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::Format(format!(
                "{what}: expected magic {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(m)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("{what}: unsupported version {version}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

// ---------------------------------------------------------------------------
// spike cache

/// Header of a spike cache: tensor geometry, image count, class count, the
/// producing seed, and the SHA-256 of the stage inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeCacheHeader {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub count: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub source_hash: [u8; 32],
}

impl SpikeCacheHeader {
    pub fn bits_per_image(&self) -> usize {
        self.t * self.c * self.h * self.w
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 4 * 5 + 8 * 2 + 32);
        out.extend_from_slice(SPIKE_CACHE_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for v in [self.t, self.c, self.h, self.w] {
            put_u32(&mut out, v as u32);
        }
        put_u64(&mut out, self.count as u64);
        put_u32(&mut out, self.num_classes as u32);
        put_u64(&mut out, self.seed);
        out.extend_from_slice(&self.source_hash);
        out
    }
}

/// Streaming writer: header first, one bit-packed tensor per image, labels
/// appended by [`SpikeCacheWriter::finish`].
pub struct SpikeCacheWriter<W: Write> {
    sink: W,
    header: SpikeCacheHeader,
    written: usize,
}

impl<W: Write> SpikeCacheWriter<W> {
    pub fn new(mut sink: W, header: SpikeCacheHeader) -> Result<Self> {
        sink.write_all(&header.encode())?;
        Ok(SpikeCacheWriter { sink, header, written: 0 })
    }

    pub fn append(&mut self, tensor: &SpikeTensor) -> Result<()> {
        let (t, c, h, w) = tensor.dim();
        if (t, c, h, w) != (self.header.t, self.header.c, self.header.h, self.header.w) {
            return Err(Error::ShapeMismatch(format!(
                "tensor {:?} vs cache geometry {}x{}x{}x{}",
                tensor.dim(),
                self.header.t,
                self.header.c,
                self.header.h,
                self.header.w
            )));
        }
        if self.written == self.header.count {
            return Err(Error::Format("cache already holds the declared image count".into()));
        }
        let packed =
            pack_bits(tensor.spikes.iter().map(|&s| s != 0), self.header.bits_per_image());
        self.sink.write_all(&packed)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self, labels: &[u8]) -> Result<()> {
        if self.written != self.header.count {
            return Err(Error::Format(format!(
                "declared {} images, wrote {}",
                self.header.count, self.written
            )));
        }
        if labels.len() != self.header.count {
            return Err(Error::LengthMismatch { left: labels.len(), right: self.header.count });
        }
        self.sink.write_all(labels)?;
        self.sink.flush()?;
        Ok(())
    }
}

/// In-memory view of a spike cache with random access decoding.
#[derive(Debug, Clone)]
pub struct SpikeCache {
    pub header: SpikeCacheHeader,
    payload: Vec<u8>,
    pub labels: Vec<u8>,
}

impl SpikeCache {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.magic(SPIKE_CACHE_MAGIC, "spike cache")?;
        let t = cur.u32()? as usize;
        let c = cur.u32()? as usize;
        let h = cur.u32()? as usize;
        let w = cur.u32()? as usize;
        let count = cur.u64()? as usize;
        let num_classes = cur.u32()? as usize;
        let seed = cur.u64()?;
        let source_hash = cur.hash()?;
        let header = SpikeCacheHeader { t, c, h, w, count, num_classes, seed, source_hash };
        let payload = cur.take(count * packed_len(header.bits_per_image()))?.to_vec();
        let labels = cur.take(count)?.to_vec();
        cur.done()?;
        Ok(SpikeCache { header, payload, labels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    /// Decode the `index`-th spike tensor.
    pub fn tensor(&self, index: usize) -> SpikeTensor {
        let bits = self.header.bits_per_image();
        let stride = packed_len(bits);
        let chunk = &self.payload[index * stride..(index + 1) * stride];
        let mut tensor =
            SpikeTensor::zeros(self.header.t, self.header.c, self.header.h, self.header.w);
        for (i, s) in tensor.spikes.iter_mut().enumerate() {
            *s = unpack_bit(chunk, i) as u8;
        }
        tensor
    }
}

/// One-shot convenience used by tests and small runs.
pub fn write_spike_cache(
    path: &Path,
    header: SpikeCacheHeader,
    tensors: &[SpikeTensor],
    labels: &[u8],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = SpikeCacheWriter::new(std::io::BufWriter::new(file), header)?;
    for t in tensors {
        writer.append(t)?;
    }
    writer.finish(labels)
}

// ---------------------------------------------------------------------------
// conv weight snapshot

fn encode_weights(weights: &Array4<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(weights.len() * 8);
    for &w in weights.iter() {
        put_f64(&mut out, w);
    }
    out
}

/// Write a conv layer snapshot: geometry, hyperparameters, image counter,
/// seed, input hash, then the kernels row-major.
pub fn write_conv_snapshot(
    path: &Path,
    state: &ConvLayerState,
    seed: u64,
    source_hash: &[u8; 32],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let (m, c, k, _) = state.weights.dim();
    for v in [m, c, k] {
        put_u32(&mut out, v as u32);
    }
    put_f64(&mut out, state.threshold);
    put_u32(&mut out, state.inhibition_radius as u32);
    put_f64(&mut out, state.a_plus);
    put_f64(&mut out, state.a_minus);
    put_u64(&mut out, state.lr_double_every as u64);
    put_u64(&mut out, state.images_seen as u64);
    put_u64(&mut out, seed);
    out.extend_from_slice(source_hash);
    out.extend_from_slice(&encode_weights(&state.weights));
    std::fs::write(path, out)?;
    Ok(())
}

pub struct ConvSnapshot {
    pub state: ConvLayerState,
    pub seed: u64,
    pub source_hash: [u8; 32],
}

pub fn read_conv_snapshot(path: &Path) -> Result<ConvSnapshot> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    cur.magic(WEIGHTS_MAGIC, "weight snapshot")?;
    let m = cur.u32()? as usize;
    let c = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let threshold = cur.f64()?;
    let inhibition_radius = cur.u32()? as usize;
    let a_plus = cur.f64()?;
    let a_minus = cur.f64()?;
    let lr_double_every = cur.u64()? as usize;
    let images_seen = cur.u64()? as usize;
    let seed = cur.u64()?;
    let source_hash = cur.hash()?;
    let flat = cur.f64_vec(m * c * k * k)?;
    cur.done()?;
    let weights = Array4::from_shape_vec((m, c, k, k), flat)
        .map_err(|e| Error::Format(format!("weight shape: {e}")))?;
    Ok(ConvSnapshot {
        state: ConvLayerState {
            weights,
            threshold,
            inhibition_radius,
            a_plus,
            a_minus,
            lr_double_every,
            images_seen,
        },
        seed,
        source_hash,
    })
}

// ---------------------------------------------------------------------------
// weight trace

pub fn write_trace(path: &Path, trace: &WeightTrace) -> Result<()> {
    let (m, c, k, _) = match trace.snapshots.first() {
        Some((_, w)) => w.dim(),
        None => return Err(Error::EmptyTrace),
    };
    let mut out = Vec::new();
    out.extend_from_slice(TRACE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [m, c, k] {
        put_u32(&mut out, v as u32);
    }
    let (tag, image, c_l) = match trace.stop {
        StopReason::CompletedSchedule => (0u8, 0u64, 0.0),
        StopReason::ConvergenceBand { image, c_l } => (1, image as u64, c_l),
        StopReason::StreamExhausted { image } => (2, image as u64, 0.0),
    };
    out.push(tag);
    put_u64(&mut out, image);
    put_f64(&mut out, c_l);

    put_u32(&mut out, trace.snapshots.len() as u32);
    for (idx, weights) in &trace.snapshots {
        put_u64(&mut out, *idx as u64);
        out.extend_from_slice(&encode_weights(weights));
    }
    put_u32(&mut out, trace.convergence.len() as u32);
    for (i, v) in &trace.convergence {
        put_u64(&mut out, *i as u64);
        put_f64(&mut out, *v);
    }
    put_u32(&mut out, trace.temporal_diffs.len() as u32);
    for (i, v) in &trace.temporal_diffs {
        put_u64(&mut out, *i as u64);
        put_f64(&mut out, *v);
    }
    put_u32(&mut out, trace.per_map_updates.len() as u32);
    for &u in &trace.per_map_updates {
        put_u64(&mut out, u);
    }
    put_u32(&mut out, trace.spikes_per_image.len() as u32);
    for &s in &trace.spikes_per_image {
        put_u32(&mut out, s);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<WeightTrace> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    cur.magic(TRACE_MAGIC, "weight trace")?;
    let m = cur.u32()? as usize;
    let c = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let tag = cur.u8()?;
    let image = cur.u64()? as usize;
    let c_l = cur.f64()?;
    let stop = match tag {
        0 => StopReason::CompletedSchedule,
        1 => StopReason::ConvergenceBand { image, c_l },
        2 => StopReason::StreamExhausted { image },
        other => return Err(Error::Format(format!("unknown stop reason {other}"))),
    };
    let n_snap = cur.u32()? as usize;
    let mut snapshots = Vec::with_capacity(n_snap);
    for _ in 0..n_snap {
        let idx = cur.u64()? as usize;
        let flat = cur.f64_vec(m * c * k * k)?;
        let weights = Array4::from_shape_vec((m, c, k, k), flat)
            .map_err(|e| Error::Format(format!("trace shape: {e}")))?;
        snapshots.push((idx, weights));
    }
    let n_conv = cur.u32()? as usize;
    let mut convergence = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        convergence.push((cur.u64()? as usize, cur.f64()?));
    }
    let n_td = cur.u32()? as usize;
    let mut temporal_diffs = Vec::with_capacity(n_td);
    for _ in 0..n_td {
        temporal_diffs.push((cur.u64()? as usize, cur.f64()?));
    }
    let n_maps = cur.u32()? as usize;
    let mut per_map_updates = Vec::with_capacity(n_maps);
    for _ in 0..n_maps {
        per_map_updates.push(cur.u64()?);
    }
    let n_spk = cur.u32()? as usize;
    let mut spikes_per_image = Vec::with_capacity(n_spk);
    for _ in 0..n_spk {
        spikes_per_image.push(cur.u32()?);
    }
    cur.done()?;
    Ok(WeightTrace {
        snapshots,
        per_map_updates,
        spikes_per_image,
        convergence,
        temporal_diffs,
        stop,
    })
}

// ---------------------------------------------------------------------------
// feature cache

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCacheHeader {
    /// Flattened vector length (`maps * ph * pw`).
    pub dim: usize,
    /// Flattening geometry, recorded so downstream consumers can reconstruct
    /// the map-major row-major order.
    pub maps: usize,
    pub ph: usize,
    pub pw: usize,
    pub count: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub source_hash: [u8; 32],
}

pub fn write_feature_cache(
    path: &Path,
    header: &FeatureCacheHeader,
    features: &[FeatureVector],
) -> Result<()> {
    if features.len() != header.count {
        return Err(Error::LengthMismatch { left: features.len(), right: header.count });
    }
    if header.dim != header.maps * header.ph * header.pw {
        return Err(Error::DimensionMismatch(format!(
            "dim {} != {}x{}x{}",
            header.dim, header.maps, header.ph, header.pw
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_CACHE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [header.dim, header.maps, header.ph, header.pw] {
        put_u32(&mut out, v as u32);
    }
    put_u64(&mut out, header.count as u64);
    put_u32(&mut out, header.num_classes as u32);
    put_u64(&mut out, header.seed);
    out.extend_from_slice(&header.source_hash);
    for f in features {
        if f.bits.len() != header.dim {
            return Err(Error::LengthMismatch { left: f.bits.len(), right: header.dim });
        }
        out.extend_from_slice(&pack_bits(f.bits.iter().map(|&b| b != 0), header.dim));
    }
    out.extend(features.iter().map(|f| f.label));
    std::fs::write(path, out)?;
    Ok(())
}

pub struct FeatureCache {
    pub header: FeatureCacheHeader,
    pub features: Vec<FeatureVector>,
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureCache> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    cur.magic(FEATURE_CACHE_MAGIC, "feature cache")?;
    let dim = cur.u32()? as usize;
    let maps = cur.u32()? as usize;
    let ph = cur.u32()? as usize;
    let pw = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let num_classes = cur.u32()? as usize;
    let seed = cur.u64()?;
    let source_hash = cur.hash()?;
    let header = FeatureCacheHeader { dim, maps, ph, pw, count, num_classes, seed, source_hash };
    let stride = packed_len(dim);
    let payload = cur.take(count * stride)?;
    let labels = cur.take(count)?;
    cur.done()?;
    let features = (0..count)
        .map(|i| {
            let chunk = &payload[i * stride..(i + 1) * stride];
            FeatureVector {
                bits: (0..dim).map(|b| unpack_bit(chunk, b) as u8).collect(),
                label: labels[i],
            }
        })
        .collect();
    Ok(FeatureCache { header, features })
}

// ---------------------------------------------------------------------------
// classifier snapshot

fn mode_tag(mode: Mode) -> u8 {
    match mode {
        Mode::ExactRelu => 0,
        Mode::Surrogate1 => 1,
        Mode::Surrogate2 => 2,
    }
}

pub fn write_model(path: &Path, state: &MlpState, seed: u64, source_hash: &[u8; 32]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for v in [state.input_dim(), state.hidden_dim(), state.num_classes()] {
        put_u32(&mut out, v as u32);
    }
    out.push(mode_tag(state.mode));
    put_f64(&mut out, state.tau_sat);
    put_f64(&mut out, state.eta);
    put_f64(&mut out, state.dropout_p);
    put_u32(&mut out, state.batch_size as u32);
    put_u64(&mut out, seed);
    out.extend_from_slice(source_hash);
    for &w in state.w_hidden_t.iter() {
        put_f64(&mut out, w);
    }
    for &b in &state.b_hidden {
        put_f64(&mut out, b);
    }
    for &w in state.w_out.iter() {
        put_f64(&mut out, w);
    }
    for &b in &state.b_out {
        put_f64(&mut out, b);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct ModelSnapshot {
    pub state: MlpState,
    pub seed: u64,
    pub source_hash: [u8; 32],
}

pub fn read_model(path: &Path) -> Result<ModelSnapshot> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    cur.magic(MODEL_MAGIC, "model snapshot")?;
    let input = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    let mode = match cur.u8()? {
        0 => Mode::ExactRelu,
        1 => Mode::Surrogate1,
        2 => Mode::Surrogate2,
        other => return Err(Error::Format(format!("unknown mode tag {other}"))),
    };
    let tau_sat = cur.f64()?;
    let eta = cur.f64()?;
    let dropout_p = cur.f64()?;
    let batch_size = cur.u32()? as usize;
    let seed = cur.u64()?;
    let source_hash = cur.hash()?;
    let w_hidden_t =
        ndarray::Array2::from_shape_vec((input, hidden), cur.f64_vec(input * hidden)?)
            .map_err(|e| Error::Format(format!("hidden weights: {e}")))?;
    let b_hidden = cur.f64_vec(hidden)?;
    let w_out = ndarray::Array2::from_shape_vec((classes, hidden), cur.f64_vec(classes * hidden)?)
        .map_err(|e| Error::Format(format!("output weights: {e}")))?;
    let b_out = cur.f64_vec(classes)?;
    cur.done()?;
    Ok(ModelSnapshot {
        state: MlpState {
            w_hidden_t,
            b_hidden,
            w_out,
            b_out,
            mode,
            tau_sat,
            eta,
            dropout_p,
            batch_size,
        },
        seed,
        source_hash,
    })
}
