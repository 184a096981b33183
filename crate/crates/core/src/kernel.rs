//! Tiled streaming attention (Flash-style forward) with LSE output.
//!
//! For each block of `q_block` query rows the kernel walks the keys in
//! tiles of `k_block`, keeping per row a running maximum `m`, a running
//! denominator `l` and an unnormalized accumulator:
//!
//! ```text
//! m_new = max(m, rowmax(S_tile))
//! acc   = acc * exp(m - m_new) + exp(S_tile - m_new) @ V_tile
//! l     = l   * exp(m - m_new) + rowsum(exp(S_tile - m_new))
//! ```
//!
//! and finishes with `O = acc / l`, `lse = m + ln l`. The score matrix is
//! never materialized: scratch per query block is
//! `q_block * (head_dim + k_block + 2)` elements whatever the key length.
//!
//! Work is split over `(batch, head, query block)` (and groups for the
//! varlen path). The key loop of a block is sequential, so every output
//! element is produced by one fixed sequence of operations and results do
//! not depend on the thread count.

use rayon::prelude::*;

use crate::error::{AttnError, Result};
use crate::layout::CuSeqlens;
use crate::reference::{check_qkv, AttnPartial};
use crate::tensor::{AttnTensor, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub q_block: usize,
    pub k_block: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            q_block: 64,
            k_block: 64,
        }
    }
}

impl TileConfig {
    pub fn new(q_block: usize, k_block: usize) -> Result<Self> {
        if q_block == 0 || k_block == 0 {
            return Err(AttnError::Invalid(format!(
                "tile sizes must be positive, got ({q_block}, {k_block})"
            )));
        }
        Ok(TileConfig { q_block, k_block })
    }

    fn validate(&self) -> Result<()> {
        TileConfig::new(self.q_block, self.k_block).map(|_| ())
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

/// One query block against a whole key range.
fn attend_block<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    k_block: usize,
    out: &mut [T],
    lse: &mut [f64],
) {
    let nq = lse.len();
    let nk = k.len() / d;
    if nk == 0 {
        out.fill(T::zero());
        lse.fill(f64::NEG_INFINITY);
        return;
    }
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut m = vec![T::neg_infinity(); nq];
    let mut l = vec![T::zero(); nq];
    let mut scores = vec![T::zero(); nq * k_block.min(nk)];
    out.fill(T::zero());

    for k0 in (0..nk).step_by(k_block) {
        let kn = k_block.min(nk - k0);
        let k_tile = &k[k0 * d..(k0 + kn) * d];
        let v_tile = &v[k0 * d..(k0 + kn) * d];
        for i in 0..nq {
            let qi = &q[i * d..(i + 1) * d];
            let s_row = &mut scores[i * kn..(i + 1) * kn];
            let mut tile_max = T::neg_infinity();
            for (j, s) in s_row.iter_mut().enumerate() {
                *s = dot(qi, &k_tile[j * d..(j + 1) * d]) * scale;
                tile_max = tile_max.max(*s);
            }
            let m_new = m[i].max(tile_max);
            let alpha = (m[i] - m_new).exp();
            let acc = &mut out[i * d..(i + 1) * d];
            if alpha != T::one() {
                for a in acc.iter_mut() {
                    *a = *a * alpha;
                }
            }
            let mut row_sum = T::zero();
            for (j, &s) in s_row.iter().enumerate() {
                let p = (s - m_new).exp();
                row_sum = row_sum + p;
                for (a, &vv) in acc.iter_mut().zip(&v_tile[j * d..(j + 1) * d]) {
                    *a = *a + p * vv;
                }
            }
            l[i] = l[i] * alpha + row_sum;
            m[i] = m_new;
        }
    }

    for i in 0..nq {
        let inv = T::one() / l[i];
        for a in out[i * d..(i + 1) * d].iter_mut() {
            *a = *a * inv;
        }
        lse[i] = m[i].as_f64() + l[i].as_f64().ln();
    }
}

/// A query range attending a key range of one slab, split into query
/// blocks that run in parallel.
fn attend_range<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    tile: TileConfig,
    out: &mut [T],
    lse: &mut [f64],
) {
    if lse.is_empty() {
        return;
    }
    out.par_chunks_mut(tile.q_block * d)
        .zip(lse.par_chunks_mut(tile.q_block))
        .zip(q.par_chunks(tile.q_block * d))
        .for_each(|((o, l), qb)| attend_block(qb, k, v, d, tile.k_block, o, l));
}

fn check_head_dim<T: Scalar>(q: &AttnTensor<T>) -> Result<usize> {
    match q.dims().head_dim {
        0 => Err(AttnError::Shape("head_dim must be positive".into())),
        d => Ok(d),
    }
}

/// Dense unmasked attention over all keys.
pub fn flash_forward<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    tile: TileConfig,
) -> Result<AttnPartial<T>> {
    tile.validate()?;
    check_qkv(q, k, v)?;
    check_head_dim(q)?;
    let cu_q = CuSeqlens::per_frame(q.dims().seq, 1);
    let cu_k = CuSeqlens::per_frame(k.dims().seq, 1);
    Ok(grouped_forward(q, 0, &cu_q, k, v, 0, &cu_k, tile))
}

/// Grouped attention over packed sequences: queries of group `g`
/// (`cu_q.group(g)`) attend only keys of group `g` (`cu_k.group(g)`).
pub fn flash_varlen_forward<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    cu_q: &CuSeqlens,
    cu_k: &CuSeqlens,
    tile: TileConfig,
) -> Result<AttnPartial<T>> {
    tile.validate()?;
    check_qkv(q, k, v)?;
    check_head_dim(q)?;
    check_groups(cu_q, cu_k)?;
    let qd = q.dims();
    if cu_q.total() != qd.seq || cu_k.total() != k.dims().seq {
        return Err(AttnError::CuSeqlens(format!(
            "boundaries end at ({}, {}) but packed lengths are ({}, {})",
            cu_q.total(),
            cu_k.total(),
            qd.seq,
            k.dims().seq
        )));
    }
    Ok(grouped_forward(q, 0, cu_q, k, v, 0, cu_k, tile))
}

fn check_groups(cu_q: &CuSeqlens, cu_k: &CuSeqlens) -> Result<()> {
    if cu_q.groups() != cu_k.groups() {
        return Err(AttnError::CuSeqlens(format!(
            "{} query groups vs {} key groups",
            cu_q.groups(),
            cu_k.groups()
        )));
    }
    Ok(())
}

/// Varlen attention on windows of larger tensors: query group `g` is
/// rows `q_off + cu_q.group(g)` of `q`, key group `g` rows
/// `k_off + cu_k.group(g)` of `k` and `v`. The output holds
/// `cu_q.total()` rows per slab. Nothing is copied out of the inputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn window_forward<T: Scalar>(
    q: &AttnTensor<T>,
    q_off: usize,
    cu_q: &CuSeqlens,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    k_off: usize,
    cu_k: &CuSeqlens,
    tile: TileConfig,
) -> Result<AttnPartial<T>> {
    tile.validate()?;
    check_qkv(q, k, v)?;
    check_head_dim(q)?;
    check_groups(cu_q, cu_k)?;
    if q_off + cu_q.total() > q.dims().seq || k_off + cu_k.total() > k.dims().seq {
        return Err(AttnError::CuSeqlens(format!(
            "windows at offsets ({q_off}, {k_off}) overrun sequences ({}, {})",
            q.dims().seq,
            k.dims().seq
        )));
    }
    Ok(grouped_forward(q, q_off, cu_q, k, v, k_off, cu_k, tile))
}

#[allow(clippy::too_many_arguments)]
fn grouped_forward<T: Scalar>(
    q: &AttnTensor<T>,
    q_off: usize,
    cu_q: &CuSeqlens,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    k_off: usize,
    cu_k: &CuSeqlens,
    tile: TileConfig,
) -> AttnPartial<T> {
    let d = q.dims().head_dim;
    let od = q.dims().with_seq(cu_q.total());
    let (s_q, slabs) = (od.seq, od.slabs());
    let mut out = vec![T::zero(); slabs * s_q * d];
    let mut lse = vec![f64::NEG_INFINITY; slabs * s_q];
    if s_q == 0 || slabs == 0 {
        return AttnPartial {
            output: AttnTensor::from_raw(od, out),
            lse,
        };
    }

    // Disjoint (slab, group) output windows.
    let mut jobs = Vec::with_capacity(slabs * cu_q.groups());
    for (slab, (mut o, mut l)) in out.chunks_mut(s_q * d).zip(lse.chunks_mut(s_q)).enumerate() {
        for g in 0..cu_q.groups() {
            let n = cu_q.group(g).len();
            let (og, orest) = o.split_at_mut(n * d);
            let (lg, lrest) = l.split_at_mut(n);
            o = orest;
            l = lrest;
            jobs.push((slab, g, og, lg));
        }
    }
    jobs.into_par_iter().for_each(|(slab, g, o, l)| {
        let (qr, kr) = (cu_q.group(g), cu_k.group(g));
        let (qs, ks) = (q_off + qr.start, k_off + kr.start);
        attend_range(
            &q.slab(slab)[qs * d..(qs + qr.len()) * d],
            &k.slab(slab)[ks * d..(ks + kr.len()) * d],
            &v.slab(slab)[ks * d..(ks + kr.len()) * d],
            d,
            tile,
            o,
            l,
        );
    });
    AttnPartial {
        output: AttnTensor::from_raw(od, out),
        lse,
    }
}
