//! Exact recombination of attention partials computed over disjoint key
//! sets:
//!
//! ```text
//! lse = logaddexp(lse1, lse2)
//! O   = exp(lse1 - lse) * O1 + exp(lse2 - lse) * O2
//! ```
//!
//! LSE arithmetic is always f64; the two weights are then rounded to the
//! tensor precision for the weighted sum.

use std::ops::Range;

use crate::error::{AttnError, Result};
use crate::reference::AttnPartial;
use crate::tensor::Scalar;

/// `ln(exp(a) + exp(b))`, exact for `-inf` arguments.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lo = a.min(b);
    hi + (-(hi - lo)).exp().ln_1p()
}

pub fn logaddexp_slice(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "logaddexp on slices of different length");
    a.iter().zip(b).map(|(&x, &y)| logaddexp(x, y)).collect()
}

/// Merges two partials of the same queries over disjoint key sets.
pub fn merge_partials<T: Scalar>(
    p1: &AttnPartial<T>,
    p2: &AttnPartial<T>,
) -> Result<AttnPartial<T>> {
    let mut acc = p1.clone();
    merge_into(&mut acc, p2)?;
    Ok(acc)
}

/// In-place form of [`merge_partials`]: `acc` becomes the merge of
/// `acc` and `other`.
pub fn merge_into<T: Scalar>(acc: &mut AttnPartial<T>, other: &AttnPartial<T>) -> Result<()> {
    let dims = acc.dims();
    if other.dims() != dims || acc.lse.len() != other.lse.len() {
        return Err(AttnError::Shape(format!(
            "cannot merge partials of shape {} and {}",
            dims,
            other.dims()
        )));
    }
    let d = dims.head_dim.max(1);
    let rows = acc
        .output
        .data_mut()
        .chunks_mut(d)
        .zip(other.output.data().chunks(d));
    for ((l1, &l2), (o1, o2)) in acc.lse.iter_mut().zip(&other.lse).zip(rows) {
        // An empty side leaves the other untouched, bit for bit.
        if l2 == f64::NEG_INFINITY {
            continue;
        }
        if *l1 == f64::NEG_INFINITY {
            o1.copy_from_slice(o2);
            *l1 = l2;
            continue;
        }
        let l = logaddexp(*l1, l2);
        let w1 = T::from_f64((*l1 - l).exp());
        let w2 = T::from_f64((l2 - l).exp());
        for (a, &b) in o1.iter_mut().zip(o2) {
            *a = w1 * *a + w2 * b;
        }
        *l1 = l;
    }
    Ok(())
}

/// Left fold of [`merge_partials`].
pub fn merge_many<T: Scalar>(parts: &[AttnPartial<T>]) -> Result<AttnPartial<T>> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| AttnError::Invalid("merge of an empty list".into()))?;
    let mut acc = first.clone();
    for p in rest {
        merge_into(&mut acc, p)?;
    }
    Ok(acc)
}

/// Debug-build check that the key index sets behind a merge are pairwise
/// disjoint. Compiled out of release builds.
pub fn debug_assert_disjoint(key_sets: &[Vec<Range<usize>>]) {
    if cfg!(debug_assertions) {
        let mut all: Vec<Range<usize>> = key_sets.iter().flatten().cloned().collect();
        all.retain(|r| !r.is_empty());
        all.sort_by_key(|r| r.start);
        for w in all.windows(2) {
            assert!(
                w[0].end <= w[1].start,
                "merged key sets overlap: {:?} and {:?}",
                w[0],
                w[1]
            );
        }
    }
}
