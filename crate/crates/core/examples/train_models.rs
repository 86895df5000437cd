//! Trains a light and a reduced heavy model on a small corpus and saves both.
//!
//! `cargo run --release --example train_models -- [out_dir]`

use etd_core::audio::FeatureConfig;
use etd_core::datagen::{generate_corpus, DatagenConfig, Manifest, Split, Variant};
use etd_core::nn::{heavy_examples, light_sequences, train, Arch, Dataset, HeavyArch, LightArch, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("etd_example_models"));
    let parts = Variant::SYNTHETIC
        .iter()
        .map(|&variant| generate_corpus(&DatagenConfig { variant, n_samples: 20, seed: 4, out_dir: out.join("corpus"), ..Default::default() }))
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = Manifest::merge(&parts)?.split(Split::Train)?;
    let features = FeatureConfig::default();
    let log = |s: &etd_core::nn::EpochStats| eprintln!("  epoch {}: loss {:.4}, accuracy {:.3}", s.epoch, s.loss, s.accuracy);

    let light_arch = LightArch::default();
    let seqs = light_sequences(&corpus, &features, light_arch.frames_per_step)?;
    eprintln!("light model on {} conversations", seqs.len());
    let (light, _) = train(&Dataset::Light(seqs), Arch::Light(light_arch), &TrainConfig { epochs: 3, ..TrainConfig::light() }, features.floor_value(), log)?;

    let heavy_arch = HeavyArch { hidden: 32, layers: 1, ..HeavyArch::default() };
    let examples = heavy_examples(&corpus, &features, heavy_arch.window_frames)?;
    eprintln!("heavy model on {} silences", examples.len());
    let (heavy, _) = train(&Dataset::Heavy(examples), Arch::Heavy(heavy_arch), &TrainConfig { epochs: 10, ..TrainConfig::heavy() }, features.floor_value(), log)?;

    light.save(out.join("light.etdw"))?;
    heavy.save(out.join("heavy.etdw"))?;
    println!("saved {} and {} parameters under {}", light.num_params(), heavy.num_params(), out.display());
    Ok(())
}
