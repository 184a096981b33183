//! Benchmark records and their JSON-lines / CSV rendering.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const STATUS_OK: &str = "ok";
pub const STATUS_NAIVE_OOM: &str = "naive-oom";

/// One benchmarked `(implementation, layout)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub video_tokens: usize,
    pub audio_tokens: usize,
    pub others: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub batch: usize,
    #[serde(rename = "impl")]
    pub implementation: String,
    pub precision: String,
    pub repeats: usize,
    /// Timings are `None` only on a `naive-oom` record.
    pub median_ms: Option<f64>,
    pub p10_ms: Option<f64>,
    pub p90_ms: Option<f64>,
    pub peak_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_diff: Option<f64>,
    pub status: String,
}

/// Median, 10th and 90th percentile (nearest rank) of the samples.
pub fn summarize(samples_ms: &[f64]) -> (f64, f64, f64) {
    assert!(!samples_ms.is_empty(), "no timing samples");
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let r = (p * s.len() as f64).ceil() as usize;
        s[r.clamp(1, s.len()) - 1]
    };
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    (median, rank(0.1), rank(0.9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

const COLUMNS: [&str; 16] = [
    "frames",
    "video_tokens",
    "audio_tokens",
    "others",
    "heads",
    "head_dim",
    "batch",
    "impl",
    "precision",
    "repeats",
    "median_ms",
    "p10_ms",
    "p90_ms",
    "peak_bytes",
    "max_abs_diff",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Streams reports in one format. CSV gets a header before the first
/// record; the `max_abs_diff` column exists only when `with_diff`.
pub struct ReportWriter<W: Write> {
    format: Format,
    with_diff: bool,
    out: W,
    header_done: bool,
}

impl<W: Write> ReportWriter<W> {
    pub fn new(out: W, format: Format, with_diff: bool) -> Self {
        ReportWriter {
            format,
            with_diff,
            out,
            header_done: false,
        }
    }

    fn columns(&self) -> Vec<&'static str> {
        COLUMNS
            .iter()
            .copied()
            .filter(|c| self.with_diff || *c != "max_abs_diff")
            .collect()
    }

    pub fn write(&mut self, r: &BenchReport) -> Result<()> {
        match self.format {
            Format::Jsonl => {
                serde_json::to_writer(&mut self.out, r)?;
                self.out.write_all(b"\n")?;
            }
            Format::Csv => {
                let header = (!self.header_done).then(|| self.columns());
                let mut w = csv::WriterBuilder::new().from_writer(&mut self.out);
                if let Some(cols) = header {
                    w.write_record(cols)?;
                }
                let mut row = vec![
                    r.frames.to_string(),
                    r.video_tokens.to_string(),
                    r.audio_tokens.to_string(),
                    r.others.to_string(),
                    r.heads.to_string(),
                    r.head_dim.to_string(),
                    r.batch.to_string(),
                    r.implementation.clone(),
                    r.precision.clone(),
                    r.repeats.to_string(),
                    opt(r.median_ms),
                    opt(r.p10_ms),
                    opt(r.p90_ms),
                    r.peak_bytes.to_string(),
                ];
                if self.with_diff {
                    row.push(opt(r.max_abs_diff));
                }
                row.push(r.status.clone());
                w.write_record(&row)?;
                w.flush()?;
                self.header_done = true;
            }
        }
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses CSV produced by [`ReportWriter`] back into reports.
pub fn read_csv(text: &str) -> Result<Vec<BenchReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Parses JSON lines produced by [`ReportWriter`].
pub fn read_jsonl(text: &str) -> Result<Vec<BenchReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
