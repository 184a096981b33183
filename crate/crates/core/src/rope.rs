//! Unified rotary position embedding over `(t, x, y)` coordinates.
//!
//! Every token of the packed sequence gets a coordinate triple:
//!
//! * video token `(frame f, grid row i, grid col j)` -> `(f, i, j)`
//! * audio token `n` of frame `f` -> `(f, n, n)`, the spatial diagonal
//! * others (reference image) token -> `(others_t, i, j)` with `(i, j)`
//!   its position on the video grid and `others_t = F` unless configured
//!
//! The head dimension is split into three even segments `d_t | d_x | d_y`.
//! Each segment is rotated with the rotate-half convention: element `i`
//! of the first half pairs with element `i + half`, and the pair turns by
//! `coord * theta^(-2m/d_axis)` for pair index `m`.

use crate::error::{AttnError, Result};
use crate::layout::TokenLayout;
use crate::tensor::{AttnTensor, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub t: i64,
    pub x: i64,
    pub y: i64,
}

impl Coord {
    pub fn new(t: i64, x: i64, y: i64) -> Self {
        Coord { t, x, y }
    }

    pub fn translate(self, by: Coord) -> Self {
        Coord::new(self.t + by.t, self.x + by.x, self.y + by.y)
    }
}

/// One coordinate per token, in packed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RopeCoords(pub Vec<Coord>);

impl RopeCoords {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn translate(&self, by: Coord) -> Self {
        RopeCoords(self.0.iter().map(|c| c.translate(by)).collect())
    }
}

/// Per-axis rotary frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqSchedule {
    pub d_t: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub theta: f64,
}

impl FreqSchedule {
    pub const DEFAULT_THETA: f64 = 10_000.0;

    pub fn new(d_t: usize, d_x: usize, d_y: usize, theta: f64) -> Result<Self> {
        if [d_t, d_x, d_y].iter().any(|d| d % 2 != 0) {
            return Err(AttnError::Invalid(format!(
                "rope axis widths must be even, got ({d_t}, {d_x}, {d_y})"
            )));
        }
        if !(theta.is_finite() && theta > 1.0) {
            return Err(AttnError::Invalid(format!(
                "rope base must exceed 1, got {theta}"
            )));
        }
        Ok(FreqSchedule {
            d_t,
            d_x,
            d_y,
            theta,
        })
    }

    /// Default 2:3:3 split: each spatial axis gets `2 * floor(3 * head_dim / 16)`
    /// and the frame axis takes the rest.
    pub fn for_head_dim(head_dim: usize) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(AttnError::Invalid(format!("head_dim {head_dim} is odd")));
        }
        let spatial = 2 * (3 * head_dim / 16);
        FreqSchedule::new(
            head_dim - 2 * spatial,
            spatial,
            spatial,
            Self::DEFAULT_THETA,
        )
    }

    pub fn head_dim(&self) -> usize {
        self.d_t + self.d_x + self.d_y
    }

    /// `theta^(-2m/d)` for `m` in `0..d/2`.
    pub fn axis_freqs(&self, d: usize) -> Vec<f64> {
        (0..d / 2)
            .map(|m| self.theta.powf(-2.0 * m as f64 / d as f64))
            .collect()
    }

    pub fn freqs_t(&self) -> Vec<f64> {
        self.axis_freqs(self.d_t)
    }

    pub fn freqs_x(&self) -> Vec<f64> {
        self.axis_freqs(self.d_x)
    }

    pub fn freqs_y(&self) -> Vec<f64> {
        self.axis_freqs(self.d_y)
    }
}

/// Coordinates for a packed layout. `video_grid` is `(rows, cols)` with
/// `rows * cols = N`; others tokens sit at frame `others_t`, or `F` when
/// `None`.
pub fn assign_coords(
    layout: &TokenLayout,
    video_grid: (usize, usize),
    others_t: Option<i64>,
) -> Result<RopeCoords> {
    let (rows, cols) = video_grid;
    if rows * cols != layout.video_per_frame {
        return Err(AttnError::Invalid(format!(
            "video grid {rows}x{cols} does not hold {} tokens",
            layout.video_per_frame
        )));
    }
    let mut coords = Vec::with_capacity(layout.total_len());
    for f in 0..layout.frames {
        for i in 0..rows {
            for j in 0..cols {
                coords.push(Coord::new(f as i64, i as i64, j as i64));
            }
        }
    }
    let t_others = others_t.unwrap_or(layout.frames as i64);
    let n = layout.video_per_frame;
    for k in 0..layout.others_len {
        let c = if n == 0 {
            Coord::new(t_others, k as i64, k as i64)
        } else {
            let p = k % n;
            Coord::new(t_others, (p / cols) as i64, (p % cols) as i64)
        };
        coords.push(c);
    }
    for f in 0..layout.frames {
        for pos in 0..layout.audio_per_frame {
            coords.push(Coord::new(f as i64, pos as i64, pos as i64));
        }
    }
    Ok(RopeCoords(coords))
}

/// Rotate-half over one segment.
fn rotate_segment<T: Scalar>(seg: &mut [T], pos: i64, freqs: &[f64]) {
    let half = seg.len() / 2;
    for (m, &freq) in freqs.iter().enumerate() {
        let angle = pos as f64 * freq;
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (seg[m].as_f64(), seg[m + half].as_f64());
        seg[m] = T::from_f64(a * cos - b * sin);
        seg[m + half] = T::from_f64(b * cos + a * sin);
    }
}

/// Rotates one head vector in place.
pub fn rotate_vector<T: Scalar>(v: &mut [T], coord: Coord, sched: &FreqSchedule) {
    let (d_t, d_x) = (sched.d_t, sched.d_x);
    let (t_seg, rest) = v.split_at_mut(d_t);
    let (x_seg, y_seg) = rest.split_at_mut(d_x);
    rotate_segment(t_seg, coord.t, &sched.freqs_t());
    rotate_segment(x_seg, coord.x, &sched.freqs_x());
    rotate_segment(y_seg, coord.y, &sched.freqs_y());
}

/// Applies the rotary embedding to a `(B, H, S, D)` tensor.
pub fn apply_rope<T: Scalar>(
    tensor: &AttnTensor<T>,
    coords: &RopeCoords,
    sched: &FreqSchedule,
) -> Result<AttnTensor<T>> {
    let dims = tensor.dims();
    if sched.head_dim() != dims.head_dim {
        return Err(AttnError::Shape(format!(
            "rope split {}+{}+{} does not match head_dim {}",
            sched.d_t, sched.d_x, sched.d_y, dims.head_dim
        )));
    }
    if coords.len() != dims.seq {
        return Err(AttnError::Shape(format!(
            "{} coordinates for {} tokens",
            coords.len(),
            dims.seq
        )));
    }
    let (ft, fx, fy) = (sched.freqs_t(), sched.freqs_x(), sched.freqs_y());
    let mut data = tensor.data().to_vec();
    if dims.head_dim > 0 {
        for (row_idx, row) in data.chunks_mut(dims.head_dim).enumerate() {
            let c = coords.0[row_idx % dims.seq];
            let (t_seg, rest) = row.split_at_mut(sched.d_t);
            let (x_seg, y_seg) = rest.split_at_mut(sched.d_x);
            rotate_segment(t_seg, c.t, &ft);
            rotate_segment(x_seg, c.x, &fx);
            rotate_segment(y_seg, c.y, &fy);
        }
    }
    AttnTensor::from_vec(dims, data)
}

/// Standard 1D rotate-half RoPE at position `pos` with an arbitrary
/// frequency vector; `v.len()` must be `2 * freqs.len()`.
pub fn rope_1d(v: &[f64], pos: i64, freqs: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), 2 * freqs.len(), "1d rope width");
    let half = freqs.len();
    let mut out = v.to_vec();
    for (m, &f) in freqs.iter().enumerate() {
        let (sin, cos) = (pos as f64 * f).sin_cos();
        out[m] = v[m] * cos - v[m + half] * sin;
        out[m + half] = v[m + half] * cos + v[m] * sin;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalReport {
    /// Largest elementwise gap between the two rotated vectors.
    pub max_vector_dev: f64,
    /// Largest gap between the attention scores of the two schemes.
    pub max_score_dev: f64,
}

/// Checks that on the diagonal `(n, n)` the spatial part of the embedding
/// is a 1D rotary embedding at position `n` whose frequency vector is the
/// x frequencies followed by the y frequencies.
///
/// Each probe is `(q, n_q, k, n_k)` with `q` and `k` spatial vectors of
/// width `d_x + d_y`. The 1D side lays the vector out as
/// `[x_lo, y_lo, x_hi, y_hi]` so rotate-half pairs line up with the
/// per-axis pairs; the permutation is undone before comparing vectors and
/// does not affect scores.
pub fn diagonal_1d_equivalence(
    sched: &FreqSchedule,
    probes: &[(Vec<f64>, i64, Vec<f64>, i64)],
) -> Result<DiagonalReport> {
    if sched.d_x != sched.d_y {
        return Err(AttnError::Invalid(format!(
            "diagonal equivalence needs d_x == d_y, got {} and {}",
            sched.d_x, sched.d_y
        )));
    }
    let (dx, hx) = (sched.d_x, sched.d_x / 2);
    let spatial_only = FreqSchedule {
        d_t: 0,
        ..sched.clone()
    };
    let freqs_1d: Vec<f64> = sched.freqs_x().into_iter().chain(sched.freqs_y()).collect();
    let to_1d = |v: &[f64]| -> Vec<f64> {
        let (x, y) = v.split_at(dx);
        [&x[..hx], &y[..hx], &x[hx..], &y[hx..]].concat()
    };
    let from_1d = |w: &[f64]| -> Vec<f64> {
        let (lo, hi) = w.split_at(dx);
        [&lo[..hx], &hi[..hx], &lo[hx..], &hi[hx..]].concat()
    };

    let mut report = DiagonalReport {
        max_vector_dev: 0.0,
        max_score_dev: 0.0,
    };
    for (q, nq, k, nk) in probes {
        if q.len() != 2 * dx || k.len() != 2 * dx {
            return Err(AttnError::Shape(format!(
                "probe vectors must have width {}",
                2 * dx
            )));
        }
        let rot2d = |v: &[f64], n: i64| {
            let mut out = v.to_vec();
            rotate_vector(&mut out, Coord::new(0, n, n), &spatial_only);
            out
        };
        let (q2, k2) = (rot2d(q, *nq), rot2d(k, *nk));
        let q1 = from_1d(&rope_1d(&to_1d(q), *nq, &freqs_1d));
        let k1 = from_1d(&rope_1d(&to_1d(k), *nk, &freqs_1d));
        for (a, b) in q2.iter().zip(&q1).chain(k2.iter().zip(&k1)) {
            report.max_vector_dev = report.max_vector_dev.max((a - b).abs());
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        report.max_score_dev = report
            .max_score_dev
            .max((dot(&q2, &k2) - dot(&q1, &k1)).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded_random_tensor};
    use crate::tensor::Dims;

    #[test]
    fn coords_examples() {
        let lay = TokenLayout::new(3, 6, 4, 0).unwrap();
        let c = assign_coords(&lay, (2, 3), None).unwrap();
        let audio = lay.segment_offsets().audio;
        assert_eq!(c.0[audio.start + 2 * 4 + 3], Coord::new(2, 3, 3));
        assert_eq!(c.0[5], Coord::new(0, 1, 2));
        assert_eq!(c.len(), lay.total_len());
    }

    #[test]
    fn single_token_grid_shares_coords() {
        let lay = TokenLayout::new(4, 1, 1, 0).unwrap();
        let c = assign_coords(&lay, (1, 1), None).unwrap();
        for f in 0..4 {
            assert_eq!(c.0[f], c.0[4 + f]);
            assert_eq!(c.0[f], Coord::new(f as i64, 0, 0));
        }
    }

    #[test]
    fn others_coords() {
        let lay = TokenLayout::new(2, 4, 1, 6).unwrap();
        let c = assign_coords(&lay, (2, 2), None).unwrap();
        let o = lay.segment_offsets().others;
        assert_eq!(c.0[o.start], Coord::new(2, 0, 0));
        assert_eq!(c.0[o.start + 3], Coord::new(2, 1, 1));
        assert_eq!(c.0[o.start + 5], Coord::new(2, 0, 1));
        let c = assign_coords(&lay, (2, 2), Some(-1)).unwrap();
        assert_eq!(c.0[o.start].t, -1);
        assert!(assign_coords(&lay, (3, 2), None).is_err());
    }

    #[test]
    fn schedule_split_and_freqs() {
        let s = FreqSchedule::for_head_dim(64).unwrap();
        assert_eq!((s.d_t, s.d_x, s.d_y), (16, 24, 24));
        let s8 = FreqSchedule::for_head_dim(8).unwrap();
        assert_eq!(s8.head_dim(), 8);
        assert_eq!(s8.d_x, s8.d_y);
        let f = s.freqs_x();
        assert_eq!(f[0], 1.0);
        assert!(f.windows(2).all(|w| w[1] < w[0]));
        assert!(FreqSchedule::for_head_dim(7).is_err());
        assert!(FreqSchedule::new(3, 2, 2, 1e4).is_err());
    }

    #[test]
    fn zero_coords_are_identity() {
        let t = seeded_random_tensor::<f32>(Dims::new(1, 2, 5, 16), 3).unwrap();
        let coords = RopeCoords(vec![Coord::new(0, 0, 0); 5]);
        let out = apply_rope(&t, &coords, &FreqSchedule::for_head_dim(16).unwrap()).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn norms_preserved() {
        let t = seeded_random_tensor::<f32>(Dims::new(1, 2, 7, 16), 4).unwrap();
        let lay = TokenLayout::new(2, 2, 1, 1).unwrap();
        let coords = assign_coords(&lay, (1, 2), None).unwrap();
        let out = apply_rope(&t, &coords, &FreqSchedule::for_head_dim(16).unwrap()).unwrap();
        for slab in 0..2 {
            for s in 0..7 {
                let n = |r: &[f32]| r.iter().map(|x| x * x).sum::<f32>().sqrt();
                assert!(
                    (n(t.row(slab, s)) - n(out.row(slab, s))).abs()
                        <= 1e-6 * n(t.row(slab, s)).max(1.0)
                );
            }
        }
    }

    #[test]
    fn split_mismatch_rejected() {
        let t = seeded_random_tensor::<f32>(Dims::new(1, 1, 2, 8), 4).unwrap();
        let coords = RopeCoords(vec![Coord::new(0, 0, 0); 2]);
        assert!(apply_rope(&t, &coords, &FreqSchedule::for_head_dim(16).unwrap()).is_err());
        let short = RopeCoords(vec![Coord::new(0, 0, 0); 1]);
        assert!(apply_rope(&t, &short, &FreqSchedule::for_head_dim(8).unwrap()).is_err());
    }

    #[test]
    fn diagonal_equivalence_examples() {
        let s = FreqSchedule::for_head_dim(64).unwrap();
        let w = s.d_x + s.d_y;
        let q = normal_vec::<f64>(1, w);
        let k = normal_vec::<f64>(2, w);
        let r = diagonal_1d_equivalence(&s, &[(q.clone(), 0, k.clone(), 0)]).unwrap();
        assert_eq!(r.max_vector_dev, 0.0);
        let r = diagonal_1d_equivalence(&s, &[(q, 3, k, 7)]).unwrap();
        assert!(
            r.max_score_dev <= 1e-6 && r.max_vector_dev <= 1e-12,
            "{r:?}"
        );
        let lopsided = FreqSchedule::new(2, 4, 2, 1e4).unwrap();
        assert!(diagonal_1d_equivalence(&lopsided, &[]).is_err());
    }
}
