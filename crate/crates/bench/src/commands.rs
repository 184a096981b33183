//! The `validate` and `bench` subcommands.

use std::io::Write;
use std::time::Instant;

use masked3d::rng::{derive_seed, seeded_random_tensor};
use masked3d::{
    build_mask, masked3d_forward, naive_attention, AttnError, AttnTensor, Dims, InjectionConfig,
    Scalar, TileConfig, TokenLayout,
};

use crate::alloc::measure_peak;
use crate::cli::{BenchArgs, ImplArg, LayoutArgs, PrecisionArg, ValidateArgs};
use crate::error::{BenchError, Result};
use crate::report::{summarize, BenchReport, ReportWriter, STATUS_NAIVE_OOM, STATUS_OK};

pub const TOL_F32: f64 = 1e-5;
pub const TOL_F64: f64 = 1e-12;

pub fn tolerance<T: Scalar>() -> f64 {
    match T::PRECISION {
        masked3d::Precision::F32 => TOL_F32,
        masked3d::Precision::F64 => TOL_F64,
    }
}

/// Checked layout, tensor shape and tiling of one invocation.
#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub layout: TokenLayout,
    pub dims: Dims,
    pub tile: TileConfig,
}

pub fn resolve(args: &LayoutArgs) -> Result<Case> {
    let usage = |m: &str| BenchError::Usage(m.to_string());
    if args.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    if args.heads == 0 || args.head_dim == 0 || args.batch == 0 {
        return Err(usage("--heads, --head-dim and --batch must be positive"));
    }
    let layout = TokenLayout::new(
        args.frames,
        args.video_tokens,
        args.audio_tokens,
        args.others,
    )
    .map_err(|e| BenchError::Usage(e.to_string()))?;
    if layout.total_len() == 0 {
        return Err(usage(
            "empty sequence: video, audio and others are all zero",
        ));
    }
    let tile = TileConfig::new(args.q_block, args.k_block)
        .map_err(|e| BenchError::Usage(e.to_string()))?;
    let dims = Dims::new(args.batch, args.heads, layout.total_len(), args.head_dim);
    dims.checked_len()
        .map_err(|e| BenchError::Usage(e.to_string()))?;
    Ok(Case { layout, dims, tile })
}

/// Runs `f` on a pool with `threads` workers (default: one per core).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == Some(0) {
        return Err(BenchError::Usage("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?;
    Ok(pool.install(f))
}

/// Seeded Q, K and V for a case.
pub fn inputs<T: Scalar>(dims: Dims, seed: u64) -> Result<[AttnTensor<T>; 3]> {
    Ok([
        seeded_random_tensor(dims, derive_seed(seed, 0))?,
        seeded_random_tensor(dims, derive_seed(seed, 1))?,
        seeded_random_tensor(dims, derive_seed(seed, 2))?,
    ])
}

/// Dense path: materialize the mask and the full score matrix.
pub fn naive_path<T: Scalar>(
    q: &AttnTensor<T>,
    k: &AttnTensor<T>,
    v: &AttnTensor<T>,
    layout: &TokenLayout,
) -> masked3d::Result<AttnTensor<T>> {
    let spec = build_mask(layout, InjectionConfig::Masked3D)?;
    Ok(naive_attention(q, k, v, Some(&spec.mask))?.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateReport {
    pub precision: &'static str,
    pub max_abs_diff: f64,
    pub tolerance: f64,
}

impl ValidateReport {
    pub fn pass(&self) -> bool {
        self.max_abs_diff <= self.tolerance
    }
}

fn validate_typed<T: Scalar>(case: &Case, seed: u64) -> Result<ValidateReport> {
    let [q, k, v] = inputs::<T>(case.dims, seed)?;
    let got = masked3d_forward(&q, &k, &v, &case.layout, case.tile)?;
    let want = naive_path(&q, &k, &v, &case.layout)?;
    Ok(ValidateReport {
        precision: T::PRECISION.name(),
        max_abs_diff: got.max_abs_diff(&want)?,
        tolerance: tolerance::<T>(),
    })
}

/// Writes one summary line; a breach is returned as an error after the
/// line is printed.
pub fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<ValidateReport> {
    let a = &args.layout;
    let case = resolve(a)?;
    let report = with_threads(a.threads, || match a.precision {
        PrecisionArg::F32 => validate_typed::<f32>(&case, a.seed),
        PrecisionArg::F64 => validate_typed::<f64>(&case, a.seed),
    })??;
    writeln!(
        out,
        "{} layout F={} N={} L={} others={} dims={} max_abs_diff={:e} tolerance={:e}",
        if report.pass() { "PASS" } else { "FAIL" },
        case.layout.frames,
        case.layout.video_per_frame,
        case.layout.audio_per_frame,
        case.layout.others_len,
        case.dims,
        report.max_abs_diff,
        report.tolerance
    )?;
    if !report.pass() {
        return Err(BenchError::Tolerance(format!(
            "max abs diff {:e} exceeds {:e}",
            report.max_abs_diff, report.tolerance
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Implementation {
    Naive,
    Decomposed,
}

impl Implementation {
    pub fn name(self) -> &'static str {
        match self {
            Implementation::Naive => "naive",
            Implementation::Decomposed => "decomposed",
        }
    }
}

fn run_once<T: Scalar>(
    imp: Implementation,
    qkv: &[AttnTensor<T>; 3],
    case: &Case,
) -> masked3d::Result<AttnTensor<T>> {
    let [q, k, v] = qkv;
    match imp {
        Implementation::Naive => naive_path(q, k, v, &case.layout),
        Implementation::Decomposed => masked3d_forward(q, k, v, &case.layout, case.tile),
    }
}

/// Times `repeats` runs of one implementation. Input generation is not
/// timed; peak bytes are the largest over all runs.
pub fn bench_one<T: Scalar>(
    imp: Implementation,
    qkv: &[AttnTensor<T>; 3],
    case: &Case,
    repeats: usize,
    oracle: Option<&AttnTensor<T>>,
) -> Result<BenchReport> {
    let l = case.layout;
    let mut report = BenchReport {
        frames: l.frames,
        video_tokens: l.video_per_frame,
        audio_tokens: l.audio_per_frame,
        others: l.others_len,
        heads: case.dims.heads,
        head_dim: case.dims.head_dim,
        batch: case.dims.batch,
        implementation: imp.name().into(),
        precision: T::PRECISION.name().into(),
        repeats,
        median_ms: None,
        p10_ms: None,
        p90_ms: None,
        peak_bytes: 0,
        max_abs_diff: None,
        status: STATUS_OK.into(),
    };
    let mut samples = Vec::with_capacity(repeats);
    let mut diff = 0.0f64;
    for _ in 0..repeats {
        let start = Instant::now();
        let (res, peak) = measure_peak(|| run_once(imp, qkv, case));
        let ms = start.elapsed().as_secs_f64() * 1e3;
        report.peak_bytes = report.peak_bytes.max(peak as u64);
        match res {
            Ok(out) => {
                if let Some(o) = oracle {
                    diff = diff.max(out.max_abs_diff(o)?);
                }
            }
            Err(AttnError::Alloc { .. }) if imp == Implementation::Naive => {
                report.status = STATUS_NAIVE_OOM.into();
                return Ok(report);
            }
            Err(e) => return Err(e.into()),
        }
        samples.push(ms);
    }
    let (median, p10, p90) = summarize(&samples);
    report.median_ms = Some(median);
    report.p10_ms = Some(p10);
    report.p90_ms = Some(p90);
    if oracle.is_some() {
        report.max_abs_diff = Some(diff);
    }
    Ok(report)
}

fn bench_typed<T: Scalar, W: Write>(
    args: &BenchArgs,
    case: &Case,
    writer: &mut ReportWriter<W>,
) -> Result<Vec<BenchReport>> {
    let qkv = inputs::<T>(case.dims, args.layout.seed)?;
    let oracle = if args.validate {
        let [q, k, v] = &qkv;
        Some(naive_path(q, k, v, &case.layout)?)
    } else {
        None
    };
    let impls: &[Implementation] = match args.implementation {
        ImplArg::Naive => &[Implementation::Naive],
        ImplArg::Decomposed => &[Implementation::Decomposed],
        ImplArg::Both => &[Implementation::Naive, Implementation::Decomposed],
    };
    let mut reports = Vec::new();
    for &imp in impls {
        let r = bench_one(imp, &qkv, case, args.repeats as usize, oracle.as_ref())?;
        writer.write(&r)?;
        reports.push(r);
    }
    Ok(reports)
}

/// Streams one record per implementation to `writer`. With `--validate`
/// a diff above tolerance turns into an error after all records are out.
pub fn cmd_bench<W: Write + Send>(
    args: &BenchArgs,
    writer: &mut ReportWriter<W>,
) -> Result<Vec<BenchReport>> {
    let a = &args.layout;
    let case = resolve(a)?;
    if args.repeats < 3 {
        return Err(BenchError::Usage("--repeats must be at least 3".into()));
    }
    let (reports, tol) = with_threads(a.threads, || match a.precision {
        PrecisionArg::F32 => bench_typed::<f32, W>(args, &case, writer).map(|r| (r, TOL_F32)),
        PrecisionArg::F64 => bench_typed::<f64, W>(args, &case, writer).map(|r| (r, TOL_F64)),
    })??;
    if let Some(bad) = reports
        .iter()
        .find(|r| r.max_abs_diff.is_some_and(|d| d > tol))
    {
        return Err(BenchError::Tolerance(format!(
            "{} diff {:e} exceeds {:e}",
            bad.implementation,
            bad.max_abs_diff.unwrap_or_default(),
            tol
        )));
    }
    Ok(reports)
}
