//! Audio injection topologies and the decomposed masked 3D attention.
//!
//! Masked 3D attention is evaluated without a mask. Each query class
//! (video, others, audio) attends a list of key sets that are pairwise
//! disjoint and together cover exactly the keys its mask row permits:
//!
//! | queries | key sets                                            |
//! |---------|-----------------------------------------------------|
//! | video   | video+others (dense), audio (same frame)            |
//! | others  | video+others (dense)                                |
//! | audio   | video (same frame), audio (same frame)              |
//!
//! Dense sets go through [`flash_forward`], same-frame sets through
//! [`flash_varlen_forward`] with one group per frame, and the partials of
//! a class are merged through their LSE.

use std::ops::Range;

use crate::error::{AttnError, Result};
use crate::kernel::{flash_varlen_forward, window_forward, TileConfig};
use crate::layout::{CuSeqlens, TokenLayout};
use crate::mask::Mask;
use crate::merge::{debug_assert_disjoint, merge_into};
use crate::reference::AttnPartial;
use crate::rng::{derive_seed, normal_vec};
use crate::tensor::{AttnTensor, Dims, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectionConfig {
    /// (a) per-frame cross-attention, video queries on audio keys.
    CrossAttn2D,
    /// (b) per-frame self-attention over video+audio, audio not updated.
    SelfAttn2DFrozenAudio,
    /// (c) per-frame self-attention over video+audio, audio updated.
    SelfAttn2D,
    /// (d) full attention over the whole packed sequence.
    Full3D,
    /// (d) with the frame-local audio mask.
    Masked3D,
}

impl InjectionConfig {
    pub const ALL: [InjectionConfig; 5] = [
        InjectionConfig::CrossAttn2D,
        InjectionConfig::SelfAttn2DFrozenAudio,
        InjectionConfig::SelfAttn2D,
        InjectionConfig::Full3D,
        InjectionConfig::Masked3D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InjectionConfig::CrossAttn2D => "cross-attn-2d",
            InjectionConfig::SelfAttn2DFrozenAudio => "self-attn-2d-frozen-audio",
            InjectionConfig::SelfAttn2D => "self-attn-2d",
            InjectionConfig::Full3D => "full-3d",
            InjectionConfig::Masked3D => "masked-3d",
        }
    }

    pub fn is_3d(self) -> bool {
        matches!(self, InjectionConfig::Full3D | InjectionConfig::Masked3D)
    }
}

/// Attention-permission matrix of a 3D configuration over a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub layout: TokenLayout,
    pub config: InjectionConfig,
    pub mask: Mask,
}

impl MaskSpec {
    pub fn to_bitmap(&self) -> String {
        self.mask.to_bitmap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenKind {
    Video(usize),
    Others,
    Audio(usize),
}

fn classify(layout: &TokenLayout, pos: usize) -> TokenKind {
    if let Some(f) = layout.video_frame(pos) {
        TokenKind::Video(f)
    } else if let Some(f) = layout.audio_frame(pos) {
        TokenKind::Audio(f)
    } else {
        TokenKind::Others
    }
}

fn masked3d_allows(query: TokenKind, key: TokenKind) -> bool {
    use TokenKind::*;
    match (query, key) {
        (Video(_) | Others, Video(_) | Others) => true,
        (Others, Audio(_)) | (Audio(_), Others) => false,
        (Video(f), Audio(g)) | (Audio(f), Video(g)) | (Audio(f), Audio(g)) => f == g,
    }
}

pub fn build_mask(layout: &TokenLayout, config: InjectionConfig) -> Result<MaskSpec> {
    let s = layout.total_len();
    let mask = match config {
        InjectionConfig::Full3D => Mask::try_from_fn(s, s, |_, _| true)?,
        InjectionConfig::Masked3D => {
            let kinds: Vec<TokenKind> = (0..s).map(|p| classify(layout, p)).collect();
            Mask::try_from_fn(s, s, |i, j| masked3d_allows(kinds[i], kinds[j]))?
        }
        other => return Err(AttnError::Config(other.name())),
    };
    Ok(MaskSpec {
        layout: *layout,
        config,
        mask,
    })
}

/// A segment of the packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Video,
    Others,
    Audio,
    /// Video followed by others, contiguous in the packed order.
    VideoOthers,
}

impl Segment {
    pub fn range(self, layout: &TokenLayout) -> Range<usize> {
        let s = layout.segment_offsets();
        match self {
            Segment::Video => s.video,
            Segment::Others => s.others,
            Segment::Audio => s.audio,
            Segment::VideoOthers => s.video.start..s.others.end,
        }
    }

    fn per_frame(self, layout: &TokenLayout) -> Option<usize> {
        match self {
            Segment::Video => Some(layout.video_per_frame),
            Segment::Audio => Some(layout.audio_per_frame),
            Segment::Others | Segment::VideoOthers => None,
        }
    }
}

/// One attention call of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnCall {
    pub keys: Segment,
    /// Restrict each query frame to the same frame of `keys`.
    pub same_frame: bool,
}

/// The calls whose partials are merged for one query segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub queries: Segment,
    pub calls: Vec<AttnCall>,
}

/// Decomposition of masked 3D attention over `layout`. Calls with no keys
/// are left out.
pub fn masked3d_plan(layout: &TokenLayout) -> Vec<QueryPlan> {
    let dense = AttnCall {
        keys: Segment::VideoOthers,
        same_frame: false,
    };
    let local = |keys| AttnCall {
        keys,
        same_frame: true,
    };
    let plans = [
        QueryPlan {
            queries: Segment::Video,
            calls: vec![dense, local(Segment::Audio)],
        },
        QueryPlan {
            queries: Segment::Others,
            calls: vec![dense],
        },
        QueryPlan {
            queries: Segment::Audio,
            calls: vec![local(Segment::Video), local(Segment::Audio)],
        },
    ];
    plans
        .into_iter()
        .map(|mut p| {
            p.calls.retain(|c| !c.keys.range(layout).is_empty());
            p
        })
        .collect()
}

/// Key ranges (packed positions) of each merged partial for the query at
/// packed position `pos`.
pub fn key_sets_for_query(layout: &TokenLayout, pos: usize) -> Vec<Range<usize>> {
    let plans = masked3d_plan(layout);
    let Some(plan) = plans
        .iter()
        .find(|p| p.queries.range(layout).contains(&pos))
    else {
        return Vec::new();
    };
    let frame = match classify(layout, pos) {
        TokenKind::Video(f) | TokenKind::Audio(f) => Some(f),
        TokenKind::Others => None,
    };
    plan.calls
        .iter()
        .map(|call| {
            let r = call.keys.range(layout);
            match (call.same_frame, frame, call.keys.per_frame(layout)) {
                (true, Some(f), Some(n)) => r.start + f * n..r.start + (f + 1) * n,
                _ => r,
            }
        })
        .collect()
}

fn check_packed<T: Scalar>(t: &AttnTensor<T>, layout: &TokenLayout, name: &str) -> Result<()> {
    if t.dims().seq != layout.total_len() {
        return Err(AttnError::Shape(format!(
            "{name} has {} tokens, layout needs {}",
            t.dims().seq,
            layout.total_len()
        )));
    }
    Ok(())
}

/// Masked 3D attention through the decomposition. Q, K and V are packed
/// `video | others | audio` with `seq = layout.total_len()`.
pub fn masked3d_forward<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    layout: &TokenLayout,
    tile: TileConfig,
) -> Result<AttnTensor<T>> {
    check_packed(q, layout, "Q")?;
    check_packed(k, layout, "K")?;
    check_packed(v, layout, "V")?;
    crate::reference::check_qkv(q, k, v)?;

    let frames = layout.frames;
    let mut outputs = Vec::with_capacity(3);
    for plan in masked3d_plan(layout) {
        let q_range = plan.queries.range(layout);
        if q_range.is_empty() {
            continue;
        }
        debug_assert_disjoint(
            &plan
                .calls
                .iter()
                .map(|c| vec![c.keys.range(layout)])
                .collect::<Vec<_>>(),
        );
        let mut merged: Option<AttnPartial<T>> = None;
        for call in &plan.calls {
            let k_range = call.keys.range(layout);
            let (cu_q, cu_k) = match (
                call.same_frame,
                plan.queries.per_frame(layout),
                call.keys.per_frame(layout),
            ) {
                (true, Some(nq), Some(nk)) => (
                    CuSeqlens::per_frame(nq, frames),
                    CuSeqlens::per_frame(nk, frames),
                ),
                _ => (
                    CuSeqlens::per_frame(q_range.len(), 1),
                    CuSeqlens::per_frame(k_range.len(), 1),
                ),
            };
            let partial =
                window_forward(q, q_range.start, &cu_q, k, v, k_range.start, &cu_k, tile)?;
            match merged.as_mut() {
                None => merged = Some(partial),
                Some(acc) => merge_into(acc, &partial)?,
            }
        }
        if let Some(m) = merged {
            outputs.push(m.output);
        }
    }
    if outputs.is_empty() {
        return AttnTensor::zeros(q.dims());
    }
    AttnTensor::concat_seq(&outputs.iter().collect::<Vec<_>>())
}

/// Query, key, value and output projections of one attention layer.
/// Token streams are `(batch, 1, tokens, channels)` tensors with
/// `channels = heads * head_dim`; each weight is a `channels x channels`
/// row-major matrix applied as `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet<T> {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
}

impl<T: Scalar> ProjectionSet<T> {
    /// Standard-normal weights scaled by `1/sqrt(channels)`.
    pub fn seeded(heads: usize, head_dim: usize, seed: u64) -> Result<Self> {
        let c = heads
            .checked_mul(head_dim)
            .filter(|&c| c > 0)
            .ok_or_else(|| AttnError::Invalid("heads * head_dim must be positive".into()))?;
        let scale = 1.0 / (c as f64).sqrt();
        let w = |stream| {
            normal_vec::<f64>(derive_seed(seed, stream), c * c)
                .into_iter()
                .map(|x| T::from_f64(x * scale))
                .collect()
        };
        Ok(ProjectionSet {
            heads,
            head_dim,
            wq: w(0),
            wk: w(1),
            wv: w(2),
            wo: w(3),
        })
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    fn check_tokens(&self, x: &AttnTensor<T>) -> Result<()> {
        let d = x.dims();
        if d.heads != 1 || d.head_dim != self.channels() {
            return Err(AttnError::Shape(format!(
                "token stream {d} is not (B, 1, S, {})",
                self.channels()
            )));
        }
        Ok(())
    }

    /// `x W` split into heads: `(B, 1, S, C)` to `(B, H, S, D)`.
    pub fn split_heads(&self, x: &AttnTensor<T>, w: &[T]) -> Result<AttnTensor<T>> {
        self.check_tokens(x)?;
        let xd = x.dims();
        let (c, hd) = (self.channels(), self.head_dim);
        let mut out = AttnTensor::zeros(Dims::new(xd.batch, self.heads, xd.seq, hd))?;
        for b in 0..xd.batch {
            for s in 0..xd.seq {
                let row = x.row(b, s);
                for col in 0..c {
                    let mut acc = T::zero();
                    for (i, &xi) in row.iter().enumerate() {
                        acc = acc + xi * w[i * c + col];
                    }
                    out.set(b, col / hd, s, col % hd, acc);
                }
            }
        }
        Ok(out)
    }

    /// Concatenates heads and applies the output projection:
    /// `(B, H, S, D)` to `(B, 1, S, C)`.
    pub fn merge_heads(&self, o: &AttnTensor<T>) -> Result<AttnTensor<T>> {
        let od = o.dims();
        if od.heads != self.heads || od.head_dim != self.head_dim {
            return Err(AttnError::Shape(format!(
                "attention output {od} does not match {} heads of {}",
                self.heads, self.head_dim
            )));
        }
        let c = self.channels();
        let mut out = AttnTensor::zeros(Dims::new(od.batch, 1, od.seq, c))?;
        let mut concat = vec![T::zero(); c];
        for b in 0..od.batch {
            for s in 0..od.seq {
                for h in 0..self.heads {
                    concat[h * self.head_dim..(h + 1) * self.head_dim]
                        .copy_from_slice(o.row(b * self.heads + h, s));
                }
                for col in 0..c {
                    let mut acc = T::zero();
                    for (i, &xi) in concat.iter().enumerate() {
                        acc = acc + xi * self.wo[i * c + col];
                    }
                    out.set(b, 0, s, col, acc);
                }
            }
        }
        Ok(out)
    }
}

/// Per-frame interleaving `[v_0, a_0, v_1, a_1, ...]` of two token streams.
fn interleave_frames<T: Scalar>(
    video: &AttnTensor<T>,
    audio: &AttnTensor<T>,
    layout: &TokenLayout,
) -> Result<AttnTensor<T>> {
    let (n, l) = (layout.video_per_frame, layout.audio_per_frame);
    let mut parts = Vec::with_capacity(2 * layout.frames);
    for f in 0..layout.frames {
        parts.push(video.slice_seq(f * n..(f + 1) * n)?);
        parts.push(audio.slice_seq(f * l..(f + 1) * l)?);
    }
    AttnTensor::concat_seq(&parts.iter().collect::<Vec<_>>())
}

fn deinterleave_frames<T: Scalar>(
    packed: &AttnTensor<T>,
    layout: &TokenLayout,
) -> Result<(AttnTensor<T>, AttnTensor<T>)> {
    let (n, l) = (layout.video_per_frame, layout.audio_per_frame);
    let mut video = Vec::with_capacity(layout.frames);
    let mut audio = Vec::with_capacity(layout.frames);
    for f in 0..layout.frames {
        let base = f * (n + l);
        video.push(packed.slice_seq(base..base + n)?);
        audio.push(packed.slice_seq(base + n..base + n + l)?);
    }
    Ok((
        AttnTensor::concat_seq(&video.iter().collect::<Vec<_>>())?,
        AttnTensor::concat_seq(&audio.iter().collect::<Vec<_>>())?,
    ))
}

/// One attention layer of a 2D configuration, (a) to (c). `x_video` is
/// `(B, 1, F*N, C)` and `c_audio` is `(B, 1, F*L, C)`. Returns the layer
/// outputs for video and audio (no residual, no normalization).
pub fn config_layer_forward<T: Scalar>(
    x_video: &AttnTensor<T>,
    c_audio: &AttnTensor<T>,
    layout: &TokenLayout,
    config: InjectionConfig,
    weights: &ProjectionSet<T>,
    tile: TileConfig,
) -> Result<(AttnTensor<T>, AttnTensor<T>)> {
    if config.is_3d() {
        return Err(AttnError::Config(config.name()));
    }
    weights.check_tokens(x_video)?;
    weights.check_tokens(c_audio)?;
    if x_video.dims().seq != layout.video_len() || c_audio.dims().seq != layout.audio_len() {
        return Err(AttnError::Shape(format!(
            "video/audio streams have ({}, {}) tokens, layout needs ({}, {})",
            x_video.dims().seq,
            c_audio.dims().seq,
            layout.video_len(),
            layout.audio_len()
        )));
    }
    if x_video.dims().batch != c_audio.dims().batch {
        return Err(AttnError::Shape(
            "video and audio batch sizes differ".into(),
        ));
    }
    let (n, l, frames) = (
        layout.video_per_frame,
        layout.audio_per_frame,
        layout.frames,
    );

    match config {
        InjectionConfig::CrossAttn2D => {
            let q = weights.split_heads(x_video, &weights.wq)?;
            let k = weights.split_heads(c_audio, &weights.wk)?;
            let v = weights.split_heads(c_audio, &weights.wv)?;
            let o = flash_varlen_forward(
                &q,
                &k,
                &v,
                &CuSeqlens::per_frame(n, frames),
                &CuSeqlens::per_frame(l, frames),
                tile,
            )?;
            Ok((weights.merge_heads(&o.output)?, c_audio.clone()))
        }
        _ => {
            let x = interleave_frames(x_video, c_audio, layout)?;
            let q = weights.split_heads(&x, &weights.wq)?;
            let k = weights.split_heads(&x, &weights.wk)?;
            let v = weights.split_heads(&x, &weights.wv)?;
            let cu = CuSeqlens::per_frame(n + l, frames);
            let o = flash_varlen_forward(&q, &k, &v, &cu, &cu, tile)?;
            let (video, audio) = deinterleave_frames(&weights.merge_heads(&o.output)?, layout)?;
            if config == InjectionConfig::SelfAttn2DFrozenAudio {
                Ok((video, c_audio.clone()))
            } else {
                Ok((video, audio))
            }
        }
    }
}
