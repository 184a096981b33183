//! Golden-vector suites: fixed seeded cases written as core-format files
//! and re-derived on check.

use std::path::{Path, PathBuf};

use masked3d::flow::{euler_sample, interpolate, velocity_target, FlowState};
use masked3d::golden::{decode, decode_lse, encode, encode_lse};
use masked3d::layout::CuSeqlens;
use masked3d::rng::{derive_seed, seeded_random_tensor};
use masked3d::rope::{apply_rope, assign_coords, FreqSchedule};
use masked3d::{
    build_mask, flash_forward, flash_varlen_forward, masked3d_forward, merge_partials,
    naive_attention, AttnPartial, AttnTensor, Dims, InjectionConfig, Scalar, TileConfig,
    TokenLayout,
};

use crate::cli::SuiteArg;
use crate::error::{BenchError, Result};

/// Largest elementwise gap accepted for recomputed f32 outputs.
pub const F32_GOLDEN_TOL: f64 = 1e-6;

pub const SUITES: [&str; 5] = ["attention", "merge", "rope", "flow", "masked3d"];

#[derive(Debug, Clone)]
pub enum Vector {
    F64(AttnTensor<f64>),
    /// `exact` for inputs; computed f32 outputs get [`F32_GOLDEN_TOL`].
    F32 {
        tensor: AttnTensor<f32>,
        exact: bool,
    },
    Lse {
        dims: Dims,
        values: Vec<f64>,
        exact: bool,
    },
}

impl Vector {
    fn encode(&self) -> String {
        match self {
            Vector::F64(t) => encode(t),
            Vector::F32 { tensor, .. } => encode(tensor),
            Vector::Lse { dims, values, .. } => encode_lse(*dims, values),
        }
    }

    /// `None` when `text` holds the same vector, else a description of
    /// the first difference.
    fn compare(&self, text: &str) -> masked3d::Result<Option<String>> {
        fn first_bit_diff(
            a: impl Iterator<Item = u64>,
            b: impl Iterator<Item = u64>,
        ) -> Option<String> {
            a.zip(b)
                .position(|(x, y)| x != y)
                .map(|i| format!("element {i} differs bitwise"))
        }
        Ok(match self {
            Vector::F64(t) => {
                let g = decode::<f64>(text)?;
                if g.dims() != t.dims() {
                    Some(format!("dims {} vs {}", g.dims(), t.dims()))
                } else {
                    first_bit_diff(
                        g.data().iter().map(|v| v.to_bits()),
                        t.data().iter().map(|v| v.to_bits()),
                    )
                }
            }
            Vector::F32 { tensor, exact } => {
                let g = decode::<f32>(text)?;
                if g.dims() != tensor.dims() {
                    Some(format!("dims {} vs {}", g.dims(), tensor.dims()))
                } else if *exact {
                    first_bit_diff(
                        g.data().iter().map(|v| v.to_bits() as u64),
                        tensor.data().iter().map(|v| v.to_bits() as u64),
                    )
                } else {
                    let d = g.max_abs_diff(tensor)?;
                    (d > F32_GOLDEN_TOL)
                        .then(|| format!("max abs diff {d:e} above {F32_GOLDEN_TOL:e}"))
                }
            }
            Vector::Lse {
                dims,
                values,
                exact,
            } => {
                let (gd, g) = decode_lse(text)?;
                if (gd.batch, gd.heads, gd.seq) != (dims.batch, dims.heads, dims.seq) {
                    Some(format!("lse dims {gd} vs {dims}"))
                } else if *exact {
                    first_bit_diff(
                        g.iter().map(|v| v.to_bits()),
                        values.iter().map(|v| v.to_bits()),
                    )
                } else {
                    let d = masked3d::tensor::max_lse_diff(&g, values);
                    (d > F32_GOLDEN_TOL).then(|| format!("lse diff {d:e} above {F32_GOLDEN_TOL:e}"))
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct GoldenCase {
    pub name: String,
    pub vectors: Vec<(&'static str, Vector)>,
}

trait Wrap: Scalar {
    fn input(t: AttnTensor<Self>) -> Vector;
    fn output(t: AttnTensor<Self>) -> Vector;
}

impl Wrap for f64 {
    fn input(t: AttnTensor<f64>) -> Vector {
        Vector::F64(t)
    }
    fn output(t: AttnTensor<f64>) -> Vector {
        Vector::F64(t)
    }
}

impl Wrap for f32 {
    fn input(tensor: AttnTensor<f32>) -> Vector {
        Vector::F32 {
            tensor,
            exact: true,
        }
    }
    fn output(tensor: AttnTensor<f32>) -> Vector {
        Vector::F32 {
            tensor,
            exact: false,
        }
    }
}

fn lse<T: Scalar>(p: &AttnPartial<T>) -> Vector {
    Vector::Lse {
        dims: p.dims(),
        values: p.lse.clone(),
        exact: T::PRECISION == masked3d::Precision::F64,
    }
}

fn rand<T: Scalar>(dims: Dims, seed: u64, stream: u64) -> Result<AttnTensor<T>> {
    Ok(seeded_random_tensor(dims, derive_seed(seed, stream))?)
}

type Named = Vec<(&'static str, Vector)>;

fn qkv<T: Wrap>(qd: Dims, kd: Dims, seed: u64) -> Result<([AttnTensor<T>; 3], Named)> {
    let t = [rand(qd, seed, 0)?, rand(kd, seed, 1)?, rand(kd, seed, 2)?];
    let named = vec![
        ("q", T::input(t[0].clone())),
        ("k", T::input(t[1].clone())),
        ("v", T::input(t[2].clone())),
    ];
    Ok((t, named))
}

fn attention_cases<T: Wrap>(tag: &str) -> Result<Vec<GoldenCase>> {
    let mut cases = Vec::new();

    let (t, mut v) = qkv::<T>(Dims::new(1, 2, 37, 8), Dims::new(1, 2, 53, 8), 101)?;
    let p = flash_forward(&t[0], &t[1], &t[2], TileConfig::new(16, 16)?)?;
    v.push(("lse", lse(&p)));
    v.push(("o", T::output(p.output)));
    cases.push(GoldenCase {
        name: format!("dense_{tag}"),
        vectors: v,
    });

    let (t, mut v) = qkv::<T>(Dims::new(2, 1, 12, 4), Dims::new(2, 1, 9, 4), 102)?;
    let cu_q = CuSeqlens::new(vec![0, 5, 5, 12])?;
    let cu_k = CuSeqlens::new(vec![0, 3, 9, 9])?;
    let p = flash_varlen_forward(&t[0], &t[1], &t[2], &cu_q, &cu_k, TileConfig::new(4, 2)?)?;
    v.push(("lse", lse(&p)));
    v.push(("o", T::output(p.output)));
    cases.push(GoldenCase {
        name: format!("varlen_{tag}"),
        vectors: v,
    });

    let layout = TokenLayout::new(3, 2, 1, 1)?;
    let d = Dims::new(1, 1, layout.total_len(), 4);
    let (t, mut v) = qkv::<T>(d, d, 103)?;
    let mask = build_mask(&layout, InjectionConfig::Masked3D)?.mask;
    let p = naive_attention(&t[0], &t[1], &t[2], Some(&mask))?;
    v.push(("lse", lse(&p)));
    v.push(("o", T::output(p.output)));
    cases.push(GoldenCase {
        name: format!("naive_masked_{tag}"),
        vectors: v,
    });
    Ok(cases)
}

fn merge_cases<T: Wrap>(tag: &str) -> Result<Vec<GoldenCase>> {
    let (t, mut v) = qkv::<T>(Dims::new(1, 2, 11, 8), Dims::new(1, 2, 29, 8), 201)?;
    let tile = TileConfig::new(8, 8)?;
    let a = flash_forward(
        &t[0],
        &t[1].slice_seq(0..13)?,
        &t[2].slice_seq(0..13)?,
        tile,
    )?;
    let b = flash_forward(
        &t[0],
        &t[1].slice_seq(13..29)?,
        &t[2].slice_seq(13..29)?,
        tile,
    )?;
    let m = merge_partials(&a, &b)?;
    v.push(("lse_a", lse(&a)));
    v.push(("o_a", T::output(a.output)));
    v.push(("lse_b", lse(&b)));
    v.push(("o_b", T::output(b.output)));
    v.push(("lse", lse(&m)));
    v.push(("o", T::output(m.output)));
    Ok(vec![GoldenCase {
        name: format!("two_way_{tag}"),
        vectors: v,
    }])
}

fn rope_cases<T: Wrap>(tag: &str) -> Result<Vec<GoldenCase>> {
    let layout = TokenLayout::new(3, 4, 2, 3)?;
    let coords = assign_coords(&layout, (2, 2), None)?;
    let sched = FreqSchedule::for_head_dim(16)?;
    let x = rand::<T>(Dims::new(1, 2, layout.total_len(), 16), 301, 0)?;
    let r = apply_rope(&x, &coords, &sched)?;
    Ok(vec![GoldenCase {
        name: format!("packed_{tag}"),
        vectors: vec![("x", T::input(x)), ("rotated", T::output(r))],
    }])
}

fn flow_cases<T: Wrap>(tag: &str) -> Result<Vec<GoldenCase>> {
    let d = Dims::new(1, 2, 6, 4);
    let (x0, x1) = (rand::<T>(d, 401, 0)?, rand::<T>(d, 401, 1)?);
    let xt = interpolate(&FlowState::new(x0.clone(), x1.clone(), 0.3)?)?;
    let vel = velocity_target(&x0, &x1)?;
    let linear = euler_sample(|_, _| vel.clone(), &x0, 10)?;
    let contracting = euler_sample(|x, _| x.map(|a| -a), &x0, 100)?;
    Ok(vec![GoldenCase {
        name: format!("paths_{tag}"),
        vectors: vec![
            ("x0", T::input(x0)),
            ("x1", T::input(x1)),
            ("xt", T::output(xt)),
            ("velocity", T::output(vel)),
            ("euler_linear", T::output(linear)),
            ("euler_contracting", T::output(contracting)),
        ],
    }])
}

fn masked3d_cases<T: Wrap>(tag: &str) -> Result<Vec<GoldenCase>> {
    let mut cases = Vec::new();
    for (i, (f, n, l, o)) in [(4, 16, 4, 32), (1, 6, 3, 0), (3, 5, 2, 7), (2, 0, 3, 4)]
        .into_iter()
        .enumerate()
    {
        let layout = TokenLayout::new(f, n, l, o)?;
        let d = Dims::new(1, 2, layout.total_len(), 8);
        let (t, mut v) = qkv::<T>(d, d, 500 + i as u64)?;
        let out = masked3d_forward(&t[0], &t[1], &t[2], &layout, TileConfig::new(16, 16)?)?;
        v.push(("o", T::output(out)));
        cases.push(GoldenCase {
            name: format!("f{f}_n{n}_l{l}_o{o}_{tag}"),
            vectors: v,
        });
    }
    Ok(cases)
}

/// All cases of one suite, f64 first.
pub fn suite_cases(suite: &str) -> Result<Vec<GoldenCase>> {
    fn both(
        f64s: Result<Vec<GoldenCase>>,
        f32s: Result<Vec<GoldenCase>>,
    ) -> Result<Vec<GoldenCase>> {
        let mut v = f64s?;
        v.extend(f32s?);
        Ok(v)
    }
    match suite {
        "attention" => both(attention_cases::<f64>("f64"), attention_cases::<f32>("f32")),
        "merge" => both(merge_cases::<f64>("f64"), merge_cases::<f32>("f32")),
        "rope" => both(rope_cases::<f64>("f64"), rope_cases::<f32>("f32")),
        "flow" => both(flow_cases::<f64>("f64"), flow_cases::<f32>("f32")),
        "masked3d" => both(masked3d_cases::<f64>("f64"), masked3d_cases::<f32>("f32")),
        other => Err(BenchError::Usage(format!("unknown suite {other:?}"))),
    }
}

pub fn suite_names(arg: SuiteArg) -> Vec<&'static str> {
    match arg {
        SuiteArg::Attention => vec!["attention"],
        SuiteArg::Merge => vec!["merge"],
        SuiteArg::Rope => vec!["rope"],
        SuiteArg::Flow => vec!["flow"],
        SuiteArg::Masked3d => vec!["masked3d"],
        SuiteArg::All => SUITES.to_vec(),
    }
}

pub fn vector_path(dir: &Path, suite: &str, case: &str, vector: &str) -> PathBuf {
    dir.join(suite).join(format!("{case}.{vector}.gv"))
}

/// Writes every vector of `suite`; returns the number of files.
pub fn generate(dir: &Path, suite: &str) -> Result<usize> {
    std::fs::create_dir_all(dir.join(suite))?;
    let mut n = 0;
    for case in suite_cases(suite)? {
        for (name, v) in &case.vectors {
            std::fs::write(vector_path(dir, suite, &case.name, name), v.encode())?;
            n += 1;
        }
    }
    Ok(n)
}

/// Recomputes `suite` and compares with the files; returns the number of
/// vectors checked. The first mismatch is an error naming the case.
pub fn check(dir: &Path, suite: &str) -> Result<usize> {
    let mut n = 0;
    for case in suite_cases(suite)? {
        for (name, v) in &case.vectors {
            let path = vector_path(dir, suite, &case.name, name);
            let id = format!("{suite}/{}.{name}", case.name);
            let text = std::fs::read_to_string(&path).map_err(|e| BenchError::GoldenFile {
                path: path.display().to_string(),
                source: e.into(),
            })?;
            match v.compare(&text) {
                Ok(None) => {}
                Ok(Some(detail)) => return Err(BenchError::Mismatch { case: id, detail }),
                Err(e) => {
                    return Err(BenchError::Mismatch {
                        case: id,
                        detail: e.to_string(),
                    })
                }
            }
            n += 1;
        }
    }
    Ok(n)
}
