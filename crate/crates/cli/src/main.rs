//! Command-line entry points wiring the pruning library into
//! reproducible batch workflows.
//!
//! Exit codes: 0 success, 2 validation or input errors, 3 numerical
//! failures. `XBAR_PRUNE_THREADS` caps worker-thread parallelism;
//! outputs are identical for any thread count.

mod commands;
mod manifest;
mod tensors;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "xbar-prune",
    version,
    about = "Crossbar-aware CNN pruning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map the dense network onto crossbars and count the overhead
    Map(commands::map::MapArgs),
    /// Prune one layer and repair its weights
    PruneLayer(commands::prune_layer::PruneLayerArgs),
    /// Sweep per-layer sensitivities and prune the whole network
    PruneNet(commands::prune_net::PruneNetArgs),
    /// Sweep accuracy under device quantization and variation
    Noise(commands::noise::NoiseArgs),
}

fn init_threads() {
    if let Ok(v) = std::env::var("XBAR_PRUNE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Map(args) => commands::map::run(args),
        Command::PruneLayer(args) => commands::prune_layer::run(args),
        Command::PruneNet(args) => commands::prune_net::run(args),
        Command::Noise(args) => commands::noise::run(args),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            std::process::exit(if err.is_numerical() { 3 } else { 2 });
        }
    }
}
