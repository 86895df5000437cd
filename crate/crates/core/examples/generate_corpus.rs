//! Generates a small corpus of each synthetic variant and prints its statistics.
//!
//! `cargo run --example generate_corpus -- [out_dir]`

use etd_core::datagen::{generate_corpus, DatagenConfig, Manifest, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("etd_example_corpus"));
    let parts = Variant::SYNTHETIC
        .iter()
        .map(|&variant| generate_corpus(&DatagenConfig { variant, n_samples: 10, seed: 3, out_dir: out.clone(), ..Default::default() }))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest::merge(&parts)?;
    let path = manifest.save()?;
    let first = &manifest.entries[0];
    println!("{} samples written to {}", manifest.len(), path.display());
    println!("first sample {}:", first.sample_id);
    for (state, start, end) in manifest.load_track(first)?.spans() {
        println!("  {:<5} {start:6.2} .. {end:6.2} s", state.as_str());
    }
    println!("{}", serde_json::to_string_pretty(&manifest.recompute_stats()?)?);
    Ok(())
}
