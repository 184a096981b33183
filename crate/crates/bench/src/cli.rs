//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "masked3d",
    version,
    about = "Validate, benchmark and pin golden vectors for masked 3D attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the decomposed kernel path against the dense masked oracle.
    Validate(ValidateArgs),
    /// Time naive and decomposed attention and report peak allocations.
    Bench(BenchArgs),
    /// Write or check golden-vector files.
    Golden(GoldenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImplArg {
    Naive,
    Decomposed,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct LayoutArgs {
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Video tokens per frame.
    #[arg(long, default_value_t = 256)]
    pub video_tokens: usize,
    /// Audio tokens per frame.
    #[arg(long, default_value_t = 8)]
    pub audio_tokens: usize,
    #[arg(long, default_value_t = 256)]
    pub others: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub q_block: usize,
    #[arg(long, default_value_t = 64)]
    pub k_block: usize,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long = "impl", value_enum, default_value_t = ImplArg::Both)]
    pub implementation: ImplArg,
    /// Timed repetitions per implementation, at least 3.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(3..))]
    pub repeats: u32,
    #[arg(long, value_enum, default_value_t = OutputArg::Jsonl)]
    pub output: OutputArg,
    /// Add the max abs diff against the oracle to every record.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GoldenAction {
    Generate,
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Attention,
    Merge,
    Rope,
    Flow,
    Masked3d,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct GoldenArgs {
    #[arg(value_enum)]
    pub action: GoldenAction,
    /// Directory holding one subdirectory per suite.
    pub path: PathBuf,
    #[arg(value_enum)]
    pub suite: SuiteArg,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn repeats_below_three_rejected() {
        let err = Cli::try_parse_from(["masked3d", "bench", "--repeats", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(Cli::try_parse_from(["masked3d", "bench", "--repeats", "3"]).is_ok());
    }

    #[test]
    fn unknown_impl_rejected() {
        assert!(Cli::try_parse_from(["masked3d", "bench", "--impl", "fast"]).is_err());
        assert!(Cli::try_parse_from(["masked3d", "golden", "check", "d", "nope"]).is_err());
    }
}
