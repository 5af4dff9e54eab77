//! `xbar-prune map`: dense semi-folded mapping and overhead accounting.

use std::path::PathBuf;

use clap::ValueEnum;
use xbar_prune::error::Result;
use xbar_prune::io::{load_network, load_weights};
use xbar_prune::mapper::{count_overhead, map_dense, CrossbarLayout};

use crate::commands::{ensure_out_dir, write_json, write_text};
use crate::manifest::ManifestBuilder;

#[derive(Clone, Copy, ValueEnum)]
pub enum SummaryFormat {
    Csv,
    Json,
}

#[derive(clap::Args)]
pub struct MapArgs {
    /// Network description JSON
    pub net: PathBuf,
    /// Layout output path; overhead reports and the manifest are
    /// written next to it
    #[arg(long, default_value = "layout.json")]
    pub out: PathBuf,
    /// Print the overhead report to stdout in this format
    #[arg(long, value_enum)]
    pub format: Option<SummaryFormat>,
}

pub fn run(args: MapArgs) -> Result<()> {
    let spec = load_network(&args.net)?;
    // weights are not needed for counting, but a mapping run must fail
    // loudly on a broken network bundle
    let _ = load_weights(&spec)?;
    let geom = spec.geometry()?;

    let mut layouts: Vec<CrossbarLayout> = Vec::with_capacity(spec.layers.len());
    for (layer, g) in spec.layers.iter().zip(&geom) {
        layouts.push(map_dense(layer, g, spec.crossbar_rows, spec.crossbar_cols)?);
    }
    let pairs: Vec<_> = layouts.iter().map(|l| (l.clone(), l.clone())).collect();
    let report = count_overhead(&spec, &pairs)?;

    let dir = args.out.parent().map(PathBuf::from).unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        ensure_out_dir(&dir)?;
    }
    let overhead_csv = dir.join("overhead.csv");
    let overhead_json = dir.join("overhead.json");
    write_json(&args.out, &layouts)?;
    write_text(&overhead_csv, &report.to_csv())?;
    write_json(&overhead_json, &report)?;

    let mut manifest = ManifestBuilder::new("map", 0);
    manifest.config(&args.net);
    manifest.output(&args.out);
    manifest.output(&overhead_csv);
    manifest.output(&overhead_json);
    manifest.write(&dir.join("manifest.json"))?;

    match args.format {
        Some(SummaryFormat::Csv) => print!("{}", report.to_csv()),
        Some(SummaryFormat::Json) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializes")
            )
        }
        None => {}
    }
    println!(
        "mapped {} layers: compute={} total={}",
        spec.layers.len(),
        report.dense_compute,
        report.dense_total
    );
    Ok(())
}
