//! IDX-format dataset ingestion, deterministic splits, and the
//! EMNIST-balanced class-group table used for conditioned evaluation.
//!
//! IDX layout (big-endian):
//! ```text
//! bytes 0-3:  magic — 0x00000803 for u8 rank-3 images, 0x00000801 for u8 labels
//! then:       one u32 per dimension (count, rows, cols for images; count for labels)
//! then:       raw u8 payload, row-major
//! ```
//! Files may be gzip-wrapped; detection is by `.gz` suffix unless overridden.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// A stack of same-sized grayscale rasters, pixels in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub images: Vec<Array2<u8>>,
    pub height: usize,
    pub width: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Transpose every raster in place. The raw EMNIST distribution stores
    /// images transposed relative to MNIST; applying this at load time lets
    /// the rest of the pipeline treat both datasets identically.
    pub fn transpose_in_place(&mut self) {
        for img in &mut self.images {
            *img = img.t().to_owned();
        }
        std::mem::swap(&mut self.height, &mut self.width);
    }
}

/// Class labels paired with an [`ImageSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Coarse class family for conditioned evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassGroup {
    Digit,
    Upper,
    Lower,
}

/// Total map from class index to its [`ClassGroup`].
#[derive(Debug, Clone)]
pub struct ClassGroupMap {
    pub group_of: Vec<ClassGroup>,
}

impl ClassGroupMap {
    pub fn group(&self, class: usize) -> ClassGroup {
        self.group_of[class]
    }

    pub fn num_classes(&self) -> usize {
        self.group_of.len()
    }

    /// Classes belonging to the same group as `class`.
    pub fn members_of_group(&self, class: usize) -> Vec<usize> {
        let g = self.group_of[class];
        (0..self.group_of.len()).filter(|&c| self.group_of[c] == g).collect()
    }
}

/// One (images, labels) pair per split, plus the seed that produced it.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: (ImageSet, LabelSet),
    pub validation: (ImageSet, LabelSet),
    pub test: (ImageSet, LabelSet),
    pub seed: u64,
}

fn read_maybe_gzipped(path: &Path, gzipped: Option<bool>) -> Result<Vec<u8>> {
    let gz = gzipped.unwrap_or_else(|| {
        path.extension().map(|e| e == "gz").unwrap_or(false)
    });
    let mut file = File::open(path)?;
    let mut bytes = Vec::new();
    if gz {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedFile { expected: end, found: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Load a rank-3 u8 IDX image file (magic 0x00000803).
///
/// `gzipped`: `None` detects by `.gz` suffix, `Some(flag)` forces.
pub fn load_idx_images(path: &Path, gzipped: Option<bool>) -> Result<ImageSet> {
    let bytes = read_maybe_gzipped(path, gzipped)?;
    parse_idx_images(&bytes)
}

/// Parse image IDX bytes already in memory.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic { expected: IDX_IMAGE_MAGIC, found: magic });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let height = read_be_u32(bytes, 8)? as usize;
    let width = read_be_u32(bytes, 12)? as usize;
    let pixels = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| Error::DimensionMismatch(format!("{count} x {height} x {width} overflows")))?;
    let expected = 16 + pixels;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() });
    }
    if count > 0 && (height == 0 || width == 0) {
        return Err(Error::DimensionMismatch(format!(
            "{count} records declared with {height}x{width} rasters"
        )));
    }
    let per = height * width;
    let images = (0..count)
        .map(|i| {
            let start = 16 + i * per;
            Array2::from_shape_vec((height, width), bytes[start..start + per].to_vec())
                .expect("shape matches slice length")
        })
        .collect();
    Ok(ImageSet { images, height, width })
}

/// Load a rank-1 u8 IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &Path, gzipped: Option<bool>, num_classes: usize) -> Result<LabelSet> {
    let bytes = read_maybe_gzipped(path, gzipped)?;
    parse_idx_labels(&bytes, num_classes)
}

/// Parse label IDX bytes already in memory.
pub fn parse_idx_labels(bytes: &[u8], num_classes: usize) -> Result<LabelSet> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::BadMagic { expected: IDX_LABEL_MAGIC, found: magic });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() });
    }
    let labels = bytes[8..8 + count].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
        return Err(Error::LabelOutOfRange { label: bad as usize, num_classes });
    }
    Ok(LabelSet { labels, num_classes })
}

/// Serialize an [`ImageSet`] back to IDX bytes (round-trip inverse of
/// [`parse_idx_images`]).
pub fn write_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.len() * set.height * set.width);
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    out.extend_from_slice(&(set.height as u32).to_be_bytes());
    out.extend_from_slice(&(set.width as u32).to_be_bytes());
    for img in &set.images {
        out.extend(img.iter().copied());
    }
    out
}

/// Serialize a [`LabelSet`] to IDX bytes.
pub fn write_idx_labels(set: &LabelSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    out.extend_from_slice(&set.labels);
    out
}

/// Shuffle with a seeded Fisher-Yates and split into train/validation/test.
///
/// Split sizes are `round(n * frac)` for validation and test, remainder to
/// train. The same seed always yields the same index partition.
pub fn split_dataset(
    images: &ImageSet,
    labels: &LabelSet,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    if !(0.0..1.0).contains(&(val_frac + test_frac)) || val_frac < 0.0 || test_frac < 0.0 {
        return Err(Error::FractionOutOfRange { val_frac, test_frac });
    }
    if images.len() != labels.len() {
        return Err(Error::LengthMismatch { left: images.len(), right: labels.len() });
    }
    let n = images.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let n_val = (n as f64 * val_frac).round() as usize;
    let n_test = (n as f64 * test_frac).round() as usize;
    let n_train = n - n_val - n_test;

    let gather = |idx: &[usize]| -> (ImageSet, LabelSet) {
        (
            ImageSet {
                images: idx.iter().map(|&i| images.images[i].clone()).collect(),
                height: images.height,
                width: images.width,
            },
            LabelSet {
                labels: idx.iter().map(|&i| labels.labels[i]).collect(),
                num_classes: labels.num_classes,
            },
        )
    };

    Ok(DatasetSplits {
        train: gather(&indices[..n_train]),
        validation: gather(&indices[n_train..n_train + n_val]),
        test: gather(&indices[n_train + n_val..]),
        seed,
    })
}

/// Printable characters of the 47 EMNIST-balanced classes, in label order.
///
/// Classes 0-9 are digits, 10-35 upper-case A-Z, and 36-46 the eleven
/// lower-case letters that survive the balanced merge.
pub const EMNIST_BALANCED_CHARS: [char; 47] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', 'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I',
    'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z', 'a', 'b',
    'd', 'e', 'f', 'g', 'h', 'n', 'q', 'r', 't',
];

/// Group table for the EMNIST-balanced label chart.
pub fn emnist_group_map() -> ClassGroupMap {
    let group_of = EMNIST_BALANCED_CHARS
        .iter()
        .map(|c| {
            if c.is_ascii_digit() {
                ClassGroup::Digit
            } else if c.is_ascii_uppercase() {
                ClassGroup::Upper
            } else {
                ClassGroup::Lower
            }
        })
        .collect();
    ClassGroupMap { group_of }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-crafted 4-record 2x3 image file; oracle is the manual byte layout.
    fn tiny_image_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&4u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        for i in 0..4 * 2 * 3 {
            b.push(i as u8);
        }
        b
    }

    #[test]
    fn parses_hand_crafted_image_file() {
        let set = parse_idx_images(&tiny_image_bytes()).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!((set.height, set.width), (2, 3));
        assert_eq!(set.images[0][[0, 0]], 0);
        assert_eq!(set.images[0][[1, 2]], 5);
        assert_eq!(set.images[3][[1, 2]], 23);
    }

    #[test]
    fn label_magic_in_image_loader_is_rejected() {
        let mut b = tiny_image_bytes();
        b[3] = 0x01;
        match parse_idx_images(&b) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(found, 0x0000_0801),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn zero_record_image_file_is_empty() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&0u32.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        let set = parse_idx_images(&b).unwrap();
        assert_eq!(set.len(), 0);
    }

    #[test]
    fn truncated_image_file_is_rejected() {
        let mut b = tiny_image_bytes();
        b.truncate(b.len() - 1);
        assert!(matches!(parse_idx_images(&b), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn parses_hand_crafted_label_file() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[5, 0, 9]);
        let set = parse_idx_labels(&b, 10).unwrap();
        assert_eq!(set.labels, vec![5, 0, 9]);
    }

    #[test]
    fn zero_record_label_file_is_empty() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&0u32.to_be_bytes());
        let set = parse_idx_labels(&b, 10).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn image_magic_in_label_loader_is_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&0u32.to_be_bytes());
        assert!(matches!(parse_idx_labels(&b, 10), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn image_round_trip_is_bit_exact() {
        let set = parse_idx_images(&tiny_image_bytes()).unwrap();
        let bytes = write_idx_images(&set);
        assert_eq!(bytes, tiny_image_bytes());
        let again = parse_idx_images(&bytes).unwrap();
        assert_eq!(again, set);
    }

    fn numbered_set(n: usize) -> (ImageSet, LabelSet) {
        let images = (0..n).map(|i| Array2::from_elem((2, 2), i as u8)).collect();
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        (
            ImageSet { images, height: 2, width: 2 },
            LabelSet { labels, num_classes: 10 },
        )
    }

    #[test]
    fn split_produces_exact_fractions() {
        let (imgs, labs) = numbered_set(100);
        let s = split_dataset(&imgs, &labs, 0.1, 0.1, 7).unwrap();
        assert_eq!(s.train.0.len(), 80);
        assert_eq!(s.validation.0.len(), 10);
        assert_eq!(s.test.0.len(), 10);
    }

    #[test]
    fn zero_fractions_put_everything_in_train() {
        let (imgs, labs) = numbered_set(25);
        let s = split_dataset(&imgs, &labs, 0.0, 0.0, 3).unwrap();
        assert_eq!(s.train.0.len(), 25);
        assert!(s.validation.0.is_empty());
        assert!(s.test.0.is_empty());
    }

    #[test]
    fn split_is_deterministic_for_a_seed() {
        let (imgs, labs) = numbered_set(50);
        let a = split_dataset(&imgs, &labs, 0.2, 0.2, 42).unwrap();
        let b = split_dataset(&imgs, &labs, 0.2, 0.2, 42).unwrap();
        assert_eq!(a.train.1.labels, b.train.1.labels);
        assert_eq!(a.test.0.images, b.test.0.images);
    }

    #[test]
    fn split_partitions_indices() {
        let (imgs, labs) = numbered_set(33);
        let s = split_dataset(&imgs, &labs, 0.25, 0.25, 11).unwrap();
        // Image pixel value identifies the original index.
        let mut seen: Vec<u8> = Vec::new();
        for set in [&s.train.0, &s.validation.0, &s.test.0] {
            seen.extend(set.images.iter().map(|img| img[[0, 0]]));
        }
        seen.sort_unstable();
        let expected: Vec<u8> = (0..33).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let (imgs, labs) = numbered_set(10);
        assert!(matches!(
            split_dataset(&imgs, &labs, 0.6, 0.5, 0),
            Err(Error::FractionOutOfRange { .. })
        ));
    }

    #[test]
    fn group_map_matches_label_chart() {
        let map = emnist_group_map();
        assert_eq!(map.num_classes(), 47);
        assert_eq!(map.group(0), ClassGroup::Digit);
        assert_eq!(map.group(9), ClassGroup::Digit);
        assert_eq!(map.group(10), ClassGroup::Upper);
        assert_eq!(map.group(35), ClassGroup::Upper);
        assert_eq!(map.group(36), ClassGroup::Lower);
        assert_eq!(map.group(46), ClassGroup::Lower);
        // Digit preimage is exactly {0..9}.
        let digits: Vec<usize> =
            (0..47).filter(|&c| map.group(c) == ClassGroup::Digit).collect();
        assert_eq!(digits, (0..10).collect::<Vec<_>>());
        // Chart endpoints from the label dictionary.
        assert_eq!(EMNIST_BALANCED_CHARS[45], 'r');
        assert_eq!(EMNIST_BALANCED_CHARS[46], 't');
    }

    #[test]
    fn transpose_swaps_axes() {
        let img = Array2::from_shape_fn((2, 3), |(r, c)| (r * 3 + c) as u8);
        let mut set = ImageSet { images: vec![img], height: 2, width: 3 };
        set.transpose_in_place();
        assert_eq!((set.height, set.width), (3, 2));
        assert_eq!(set.images[0][[2, 1]], 5);
    }
}
