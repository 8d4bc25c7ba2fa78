//! Spiking feature extraction with STDP and a binary-activation classifier.
//!
//! The pipeline has two halves. The unsupervised half turns grayscale images
//! into binary spike tensors (ON/OFF difference-of-Gaussians filtering plus
//! latency coding) and trains convolutional kernels with spike-timing
//! dependent plasticity under lateral inhibition and STDP competition; pooled
//! spikes become flat binary feature vectors. The supervised half is a
//! single-hidden-layer classifier over those vectors whose binary activations
//! admit addition-only linear-algebra kernels and train through surrogate
//! gradients.
//!
//! Modules follow the stage order: [`dataio`] loads IDX datasets, [`encoder`]
//! produces spike tensors, [`snncore`] trains and runs the convolution/pool
//! layers, [`features`] flattens pooled spikes, [`classifier`] trains and
//! evaluates the readout, [`diagnostics`] renders training artifacts, and
//! [`persist`] defines the binary cache/snapshot containers.

pub mod classifier;
pub mod dataio;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod features;
pub mod persist;
pub mod snncore;

pub use error::{Error, Result};
