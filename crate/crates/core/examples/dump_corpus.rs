//! Write the deterministic test corpus to a directory, one file per
//! fixture, so external tools can be run against the exact binaries the
//! test suite uses.
//!
//! Usage: `cargo run --example dump_corpus -- <dir> [count] [seed]`
//! Defaults: 100 fixtures, seed 0xC0FFEE — the suite's corpus parameters.

use petool_core::synth::{build_pe, corpus_specs};

fn parse_u64(text: &str) -> Result<u64, std::num::ParseIntError> {
    match text.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => text.parse(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "corpus".into());
    let count: usize = args.next().as_deref().map_or(Ok(100), str::parse)?;
    let seed: u64 = args.next().as_deref().map_or(Ok(0xC0FFEE), parse_u64)?;
    std::fs::create_dir_all(&dir)?;
    for (i, spec) in corpus_specs(count, seed).iter().enumerate() {
        let bytes = build_pe(spec)?;
        std::fs::write(format!("{dir}/{i:03}.exe"), bytes)?;
    }
    println!("wrote {count} fixtures (seed {seed:#x}) to {dir}/");
    Ok(())
}
