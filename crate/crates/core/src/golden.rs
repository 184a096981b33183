//! Golden-vector text format.
//!
//! ```text
//! GV1 <B> <H> <S> <D> <f32|f64>
//! <hex word> <hex word> ...
//! ```
//!
//! Data words are lowercase hexadecimal IEEE-754 bit patterns (8 digits
//! per f32, 16 per f64), whitespace separated, in row-major order. This
//! writer emits one sequence row (`D` words) per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AttnError, Result};
use crate::tensor::{AttnTensor, Dims, Precision, Scalar};

const MAGIC: &str = "GV1";

pub fn encode<T: Scalar>(tensor: &AttnTensor<T>) -> String {
    let d = tensor.dims();
    let mut out = format!(
        "{MAGIC} {} {} {} {} {}\n",
        d.batch,
        d.heads,
        d.seq,
        d.head_dim,
        T::PRECISION
    );
    let width = T::HEX_WIDTH;
    for row in tensor.data().chunks(d.head_dim.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{:0width$x}", v.to_bits_u64());
        }
        out.push('\n');
    }
    out
}

/// Parses the header line only.
pub fn parse_header(text: &str) -> Result<(Dims, Precision)> {
    let line = text
        .lines()
        .next()
        .ok_or_else(|| AttnError::Malformed("empty file".into()))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != MAGIC {
        return Err(AttnError::Malformed(format!("bad header line {line:?}")));
    }
    let mut dims = [0usize; 4];
    for (slot, field) in dims.iter_mut().zip(&fields[1..5]) {
        *slot = field
            .parse()
            .map_err(|_| AttnError::Malformed(format!("bad dimension {field:?}")))?;
    }
    let precision = Precision::parse(fields[5])
        .ok_or_else(|| AttnError::Malformed(format!("unknown precision {:?}", fields[5])))?;
    Ok((Dims::new(dims[0], dims[1], dims[2], dims[3]), precision))
}

pub fn decode<T: Scalar>(text: &str) -> Result<AttnTensor<T>> {
    let (dims, precision) = parse_header(text)?;
    if precision != T::PRECISION {
        return Err(AttnError::Precision {
            expected: T::PRECISION.name(),
            found: precision.name().into(),
        });
    }
    let expected = dims.checked_len()?;
    let body = text.split_once('\n').map(|(_, b)| b).unwrap_or("");
    let mut data = Vec::with_capacity(expected);
    for word in body.split_whitespace() {
        if word.len() != T::HEX_WIDTH || word.bytes().any(|c| c.is_ascii_uppercase()) {
            return Err(AttnError::Malformed(format!(
                "word {word:?} is not {} lowercase hex digits",
                T::HEX_WIDTH
            )));
        }
        let bits = u64::from_str_radix(word, 16)
            .map_err(|_| AttnError::Malformed(format!("word {word:?} is not hex")))?;
        data.push(T::from_bits_u64(bits));
    }
    if data.len() != expected {
        return Err(AttnError::Shape(format!(
            "header declares {dims} ({expected} values) but file holds {}",
            data.len()
        )));
    }
    AttnTensor::from_vec(dims, data)
}

pub fn write_file<T: Scalar>(path: &Path, tensor: &AttnTensor<T>) -> Result<()> {
    std::fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn read_file<T: Scalar>(path: &Path) -> Result<AttnTensor<T>> {
    decode(&std::fs::read_to_string(path)?)
}

/// Encodes a vector (e.g. an LSE row set) as a `(B, H, S, 1)` tensor.
/// `-inf` is stored as-is; it is the only non-finite value accepted.
pub fn encode_lse(dims: Dims, lse: &[f64]) -> String {
    let mut out = format!("{MAGIC} {} {} {} 1 f64\n", dims.batch, dims.heads, dims.seq);
    for v in lse {
        let _ = writeln!(out, "{:016x}", v.to_bits());
    }
    out
}

pub fn decode_lse(text: &str) -> Result<(Dims, Vec<f64>)> {
    let (dims, precision) = parse_header(text)?;
    if precision != Precision::F64 || dims.head_dim != 1 {
        return Err(AttnError::Malformed(
            "lse files are (B, H, S, 1) f64".into(),
        ));
    }
    let expected = dims.checked_len()?;
    let body = text.split_once('\n').map(|(_, b)| b).unwrap_or("");
    let mut out = Vec::with_capacity(expected);
    for (index, word) in body.split_whitespace().enumerate() {
        if word.len() != 16 || word.bytes().any(|c| c.is_ascii_uppercase()) {
            return Err(AttnError::Malformed(format!("bad lse word {word:?}")));
        }
        let v = f64::from_bits(
            u64::from_str_radix(word, 16)
                .map_err(|_| AttnError::Malformed(format!("word {word:?} is not hex")))?,
        );
        if v.is_nan() || v == f64::INFINITY {
            return Err(AttnError::NonFinite { index });
        }
        out.push(v);
    }
    if out.len() != expected {
        return Err(AttnError::Shape(format!(
            "lse header declares {expected} values, file holds {}",
            out.len()
        )));
    }
    Ok((dims.with_seq(dims.seq), out))
}
