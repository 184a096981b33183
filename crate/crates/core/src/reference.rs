//! Fully materialized masked attention. This is the ground truth every
//! other path is checked against, so it favours clarity over speed: the
//! whole `S_q x S_k` score matrix of a `(batch, head)` slab is built, and
//! all arithmetic is done in f64 regardless of the tensor precision.

use rayon::prelude::*;

use crate::error::{AttnError, Result};
use crate::mask::Mask;
use crate::rng::seeded_random_tensor;
use crate::tensor::{AttnTensor, Dims, Scalar};

/// Attention output plus the per-row LogSumExp of the scaled scores.
///
/// A query row that may see no key has a zero output row and
/// `lse = -inf`, which makes it the identity of the merge algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnPartial<T> {
    pub output: AttnTensor<T>,
    /// `(batch, heads, seq)` row-major.
    pub lse: Vec<f64>,
}

impl<T: Scalar> AttnPartial<T> {
    /// The partial of a query set attending to no key at all.
    pub fn empty(dims: Dims) -> Result<Self> {
        let output = AttnTensor::zeros(dims)?;
        Ok(AttnPartial {
            lse: vec![f64::NEG_INFINITY; dims.slabs() * dims.seq],
            output,
        })
    }

    pub fn dims(&self) -> Dims {
        self.output.dims()
    }
}

pub(crate) fn check_qkv<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
) -> Result<()> {
    let (qd, kd, vd) = (q.dims(), k.dims(), v.dims());
    if (qd.batch, qd.heads, qd.head_dim) != (kd.batch, kd.heads, kd.head_dim) {
        return Err(AttnError::Shape(format!("q {qd} incompatible with k {kd}")));
    }
    if kd != vd {
        return Err(AttnError::Shape(format!("k {kd} and v {vd} differ")));
    }
    Ok(())
}

fn check_mask(mask: Option<&Mask>, s_q: usize, s_k: usize) -> Result<()> {
    match mask {
        Some(m) if (m.rows(), m.cols()) != (s_q, s_k) => Err(AttnError::Shape(format!(
            "mask is {}x{}, attention is {s_q}x{s_k}",
            m.rows(),
            m.cols()
        ))),
        _ => Ok(()),
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

fn try_zeroed(len: usize) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    buf.try_reserve_exact(len).map_err(|_| AttnError::Alloc {
        bytes: len.saturating_mul(8),
    })?;
    buf.resize(len, 0.0);
    Ok(buf)
}

/// Scaled scores of one slab, `-inf` where masked.
fn score_matrix<T: Scalar>(
    q: &[T],
    k: &[T],
    s_q: usize,
    s_k: usize,
    d: usize,
    mask: Option<&Mask>,
) -> Result<Vec<f64>> {
    let scale = 1.0 / (d as f64).sqrt();
    let cells = s_q
        .checked_mul(s_k)
        .ok_or(AttnError::Alloc { bytes: usize::MAX })?;
    let mut scores = try_zeroed(cells)?;
    for i in 0..s_q {
        let qi = &q[i * d..(i + 1) * d];
        for j in 0..s_k {
            scores[i * s_k + j] = if mask.is_none_or(|m| m.get(i, j)) {
                dot(qi, &k[j * d..(j + 1) * d]) * scale
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    Ok(scores)
}

/// Turns a score matrix into softmax probabilities in place and returns
/// the row LSEs. Rows with no finite score become all-zero.
fn softmax_rows(scores: &mut [f64], s_q: usize, s_k: usize) -> Vec<f64> {
    let mut lse = vec![f64::NEG_INFINITY; s_q];
    if s_k == 0 {
        return lse;
    }
    for (i, row) in scores.chunks_mut(s_k).enumerate().take(s_q) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - m).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
        lse[i] = m + sum.ln();
    }
    lse
}

/// Attention of one slab from an explicit score matrix (`-inf` = masked).
/// Returns the f64 output rows (`s_q * d`) and row LSEs.
pub fn attention_from_scores<T: Scalar>(
    scores: &[f64],
    v: &[T],
    s_q: usize,
    s_k: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(scores.len(), s_q * s_k, "score matrix size");
    assert_eq!(v.len(), s_k * d, "value slab size");
    let mut probs = scores.to_vec();
    let lse = softmax_rows(&mut probs, s_q, s_k);
    let mut out = vec![0.0; s_q * d];
    for i in 0..s_q {
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..s_k {
            let p = probs[i * s_k + j];
            if p != 0.0 {
                for (o, vv) in orow.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                    *o += p * vv.as_f64();
                }
            }
        }
    }
    (out, lse)
}

/// Masked scaled-dot-product attention, fully materialized.
pub fn naive_attention<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    mask: Option<&Mask>,
) -> Result<AttnPartial<T>> {
    check_qkv(q, k, v)?;
    let (qd, kd) = (q.dims(), k.dims());
    check_mask(mask, qd.seq, kd.seq)?;
    let (s_q, s_k, d) = (qd.seq, kd.seq, qd.head_dim);

    let slabs: Vec<(Vec<T>, Vec<f64>)> = (0..qd.slabs())
        .into_par_iter()
        .map(|slab| {
            let mut probs = score_matrix(q.slab(slab), k.slab(slab), s_q, s_k, d, mask)?;
            let lse = softmax_rows(&mut probs, s_q, s_k);
            let vs = v.slab(slab);
            let mut out = Vec::with_capacity(s_q * d);
            let mut acc = vec![0.0f64; d];
            for i in 0..s_q {
                acc.fill(0.0);
                for j in 0..s_k {
                    let p = probs[i * s_k + j];
                    if p != 0.0 {
                        for (a, vv) in acc.iter_mut().zip(&vs[j * d..(j + 1) * d]) {
                            *a += p * vv.as_f64();
                        }
                    }
                }
                out.extend(acc.iter().map(|&a| T::from_f64(a)));
            }
            Ok((out, lse))
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(qd.slabs() * s_q * d);
    let mut lse = Vec::with_capacity(qd.slabs() * s_q);
    for (o, l) in slabs {
        data.extend(o);
        lse.extend(l);
    }
    Ok(AttnPartial {
        output: AttnTensor::from_raw(qd, data),
        lse,
    })
}

/// Gradients of `naive_attention` with respect to Q, K and V.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnGrads<T> {
    pub dq: AttnTensor<T>,
    pub dk: AttnTensor<T>,
    pub dv: AttnTensor<T>,
}

/// Analytic backward pass of masked softmax attention.
///
/// With `P` the masked softmax: `dV = P^T dO`, `dP = dO V^T`,
/// `dS = P * (dP - rowsum(dP * P))`, `dQ = dS K / sqrt(D)`,
/// `dK = dS^T Q / sqrt(D)`.
pub fn naive_backward<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    mask: Option<&Mask>,
    d_out: &AttnTensor<T>,
) -> Result<AttnGrads<T>> {
    check_qkv(q, k, v)?;
    let (qd, kd) = (q.dims(), k.dims());
    check_mask(mask, qd.seq, kd.seq)?;
    if d_out.dims() != qd {
        return Err(AttnError::Shape(format!(
            "dO is {}, output is {qd}",
            d_out.dims()
        )));
    }
    let (s_q, s_k, d) = (qd.seq, kd.seq, qd.head_dim);
    let scale = 1.0 / (d as f64).sqrt();

    let slabs: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..qd.slabs())
        .into_par_iter()
        .map(|slab| {
            let (qs, ks, vs, dos) = (q.slab(slab), k.slab(slab), v.slab(slab), d_out.slab(slab));
            let mut p = score_matrix(qs, ks, s_q, s_k, d, mask)?;
            softmax_rows(&mut p, s_q, s_k);

            let mut dq = vec![0.0; s_q * d];
            let mut dk = vec![0.0; s_k * d];
            let mut dv = vec![0.0; s_k * d];
            let mut ds_row = vec![0.0; s_k];
            for i in 0..s_q {
                let prow = &p[i * s_k..(i + 1) * s_k];
                let do_i = &dos[i * d..(i + 1) * d];
                for j in 0..s_k {
                    if prow[j] != 0.0 {
                        for (g, o) in dv[j * d..(j + 1) * d].iter_mut().zip(do_i) {
                            *g += prow[j] * o.as_f64();
                        }
                    }
                }
                let mut row_dot = 0.0;
                for j in 0..s_k {
                    let dp = dot(do_i, &vs[j * d..(j + 1) * d]);
                    ds_row[j] = dp;
                    row_dot += dp * prow[j];
                }
                for j in 0..s_k {
                    ds_row[j] = prow[j] * (ds_row[j] - row_dot);
                }
                for j in 0..s_k {
                    let ds = ds_row[j] * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let (kj, qi) = (&ks[j * d..(j + 1) * d], &qs[i * d..(i + 1) * d]);
                    for c in 0..d {
                        dq[i * d + c] += ds * kj[c].as_f64();
                        dk[j * d + c] += ds * qi[c].as_f64();
                    }
                }
            }
            let cast = |xs: Vec<f64>| xs.into_iter().map(T::from_f64).collect::<Vec<T>>();
            Ok((cast(dq), cast(dk), cast(dv)))
        })
        .collect::<Result<_>>()?;

    let (mut dq, mut dk, mut dv) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, c) in slabs {
        dq.extend(a);
        dk.extend(b);
        dv.extend(c);
    }
    Ok(AttnGrads {
        dq: AttnTensor::from_raw(qd, dq),
        dk: AttnTensor::from_raw(kd, dk),
        dv: AttnTensor::from_raw(kd, dv),
    })
}

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the relative gradient error.
pub const FD_REL_TOL: f64 = 1e-4;
/// Floor of the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error.
pub const FD_REL_FLOOR: f64 = 1e-3;
/// Largest total input size the check accepts.
pub const FD_MAX_ELEMENTS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err_dq: f64,
    pub max_rel_err_dk: f64,
    pub max_rel_err_dv: f64,
    pub pass: bool,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_dq
            .max(self.max_rel_err_dk)
            .max(self.max_rel_err_dv)
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

/// Compares `naive_backward` against central finite differences of the
/// scalar loss `sum(output * dO)`, with `dO` drawn from `seed`.
pub fn finite_diff_check<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    mask: Option<&Mask>,
    seed: u64,
) -> Result<FdReport> {
    if T::PRECISION != crate::tensor::Precision::F64 {
        return Err(AttnError::Precision {
            expected: "f64",
            found: T::PRECISION.name().into(),
        });
    }
    check_qkv(q, k, v)?;
    let total = q.data().len() + k.data().len() + v.data().len();
    if total > FD_MAX_ELEMENTS {
        return Err(AttnError::Invalid(format!(
            "{total} input elements exceed the finite-difference budget of {FD_MAX_ELEMENTS}"
        )));
    }
    let d_out = seeded_random_tensor::<T>(q.dims(), seed)?;
    let grads = naive_backward(q, k, v, mask, &d_out)?;

    let loss = |q: &AttnTensor<T>, k: &AttnTensor<T>, v: &AttnTensor<T>| -> Result<f64> {
        let out = naive_attention(q, k, v, mask)?.output;
        Ok(dot(out.data(), d_out.data()))
    };

    // Which input is perturbed: 0 = Q, 1 = K, 2 = V.
    let probe = |which: usize, analytic: &AttnTensor<T>| -> Result<f64> {
        let base = [q, k, v][which];
        let mut worst: f64 = 0.0;
        for idx in 0..base.data().len() {
            let shifted = |delta: f64| {
                let mut data = base.data().to_vec();
                data[idx] = T::from_f64(data[idx].as_f64() + delta);
                AttnTensor::from_raw(base.dims(), data)
            };
            let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
            let (lp, lm) = match which {
                0 => (loss(&plus, k, v)?, loss(&minus, k, v)?),
                1 => (loss(q, &plus, v)?, loss(q, &minus, v)?),
                _ => (loss(q, k, &plus)?, loss(q, k, &minus)?),
            };
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[idx].as_f64(), numeric));
        }
        Ok(worst)
    };

    let max_rel_err_dq = probe(0, &grads.dq)?;
    let max_rel_err_dk = probe(1, &grads.dk)?;
    let max_rel_err_dv = probe(2, &grads.dv)?;
    let pass = [max_rel_err_dq, max_rel_err_dk, max_rel_err_dv]
        .iter()
        .all(|&e| e <= FD_REL_TOL);
    Ok(FdReport {
        max_rel_err_dq,
        max_rel_err_dk,
        max_rel_err_dv,
        pass,
    })
}
