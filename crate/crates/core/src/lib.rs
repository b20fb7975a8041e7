//! Compressive CSI feedback for massive MIMO.
//!
//! The UE splits angular-delay CSI into a power scalar and a unit-norm matrix
//! and compresses the latter with a trainable measurement matrix. The gNB
//! recovers it with a deep-unfolded ISTA decoder. New propagation scenarios
//! reuse a frozen anchor model through a circular sparsity-aligning shift and
//! two small plug-in translation networks, and small measurement sets are
//! stretched with magnitude-shift and row-phase augmentation.
//!
//! Module map:
//!
//! - [`channel_data`]: synthetic multipath channels, DFT transforms, datasets
//! - [`spherical_codec`]: UE-side encoder
//! - [`unfold_decoder`]: gNB-side decoder and anchor training
//! - [`transnet`]: sparsity aligning and plug-in translation
//! - [`augment`]: model-driven data augmentation
//! - [`harness`]: metrics, experiments and reports

pub mod augment;
pub mod channel_data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod par;
pub mod seeds;
pub mod spherical_codec;
pub mod transnet;
pub mod unfold_decoder;

pub use error::{Error, Result};
