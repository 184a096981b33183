//! Masked 3D attention for synchronized audio/video token sequences.
//!
//! Video, asynchronous condition ("others") and audio tokens are packed
//! into one sequence. Video tokens see all video and others tokens plus the
//! audio of their own frame. Audio tokens see the video and audio of their
//! own frame. Others tokens see video and others only. [`topology`] computes
//! this without a materialized mask by splitting it into dense and
//! per-frame grouped attention calls of the tiled [`kernel`]. The partials
//! are then recombined exactly through their LogSumExp statistics
//! ([`merge`]). [`reference`] is the fully materialized oracle.

pub mod error;
pub mod flow;
pub mod golden;
pub mod kernel;
pub mod layout;
pub mod mask;
pub mod merge;
pub mod reference;
pub mod rng;
pub mod rope;
pub mod tensor;
pub mod topology;

pub use error::{AttnError, Result};
pub use kernel::{flash_forward, flash_varlen_forward, TileConfig};
pub use layout::{CuSeqlens, Segments, TokenLayout};
pub use mask::Mask;
pub use merge::{logaddexp, merge_into, merge_many, merge_partials};
pub use reference::{naive_attention, naive_backward, AttnPartial};
pub use tensor::{AttnTensor, Dims, Precision, Scalar};
pub use topology::{build_mask, masked3d_forward, InjectionConfig, MaskSpec};
