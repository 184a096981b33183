use crate::error::{AttnError, Result};
use crate::layout::CuSeqlens;

/// Dense boolean attention-permission matrix, query rows by key columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(allow.len()) {
            return Err(AttnError::Shape(format!(
                "{rows}x{cols} mask with {} cells",
                allow.len()
            )));
        }
        Ok(Mask { rows, cols, allow })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Mask { rows, cols, allow }
    }

    /// Like [`Mask::from_fn`], but reports an allocation failure as
    /// [`AttnError::Alloc`] instead of aborting.
    pub fn try_from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let cells = rows
            .checked_mul(cols)
            .ok_or(AttnError::Alloc { bytes: usize::MAX })?;
        let mut allow = Vec::new();
        allow
            .try_reserve_exact(cells)
            .map_err(|_| AttnError::Alloc { bytes: cells })?;
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Ok(Mask { rows, cols, allow })
    }

    /// Query group `g` may see key group `g` only.
    pub fn block_diagonal(cu_q: &CuSeqlens, cu_k: &CuSeqlens) -> Result<Self> {
        if cu_q.groups() != cu_k.groups() {
            return Err(AttnError::CuSeqlens(format!(
                "{} query groups vs {} key groups",
                cu_q.groups(),
                cu_k.groups()
            )));
        }
        let mut mask = Mask {
            rows: cu_q.total(),
            cols: cu_k.total(),
            allow: vec![false; cu_q.total() * cu_k.total()],
        };
        for g in 0..cu_q.groups() {
            for i in cu_q.group(g) {
                for j in cu_k.group(g) {
                    mask.allow[i * mask.cols + j] = true;
                }
            }
        }
        Ok(mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.allow[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.cols..(i + 1) * self.cols]
    }

    /// Cellwise AND.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(AttnError::Shape(format!(
                "cannot intersect {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let allow = self
            .allow
            .iter()
            .zip(&other.allow)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            allow,
        })
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    /// `#` for permitted cells, `.` otherwise, one query row per line.
    pub fn to_bitmap(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            out.extend(self.row(i).iter().map(|&a| if a { '#' } else { '.' }));
            out.push('\n');
        }
        out
    }

    pub fn from_bitmap(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let cols = lines.first().map_or(0, |l| l.len());
        let mut allow = Vec::with_capacity(lines.len() * cols);
        for line in &lines {
            if line.len() != cols {
                return Err(AttnError::Malformed("ragged mask bitmap".into()));
            }
            for c in line.chars() {
                allow.push(match c {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(AttnError::Malformed(format!(
                            "unexpected bitmap character {other:?}"
                        )))
                    }
                });
            }
        }
        Mask::new(lines.len(), cols, allow)
    }
}
