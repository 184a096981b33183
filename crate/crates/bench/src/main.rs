use clap::Parser;
use masked3d_bench::{execute, Cli, PeakAlloc};

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(&cli, &mut std::io::stdout()) {
        eprintln!("masked3d: {e}");
        std::process::exit(e.exit_code());
    }
}
