//! Evaluates the three streaming modes on a small corpus and prints the
//! accuracy and compute table.
//!
//! Pass a directory holding `light.etdw` and `heavy.etdw` (for instance the
//! output of the `train_models` example); untrained models are used otherwise.

use etd_core::audio::FeatureConfig;
use etd_core::cascade::CascadeConfig;
use etd_core::datagen::{generate_corpus, DatagenConfig, Manifest, Variant};
use etd_core::eval::{compute_table, evaluate_stream_task, seg_table, StreamMode};
use etd_core::nn::{Arch, HeavyArch, LightArch, Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (light, heavy) = match std::env::args().nth(1) {
        Some(dir) => {
            let dir = std::path::PathBuf::from(dir);
            (Params::load(dir.join("light.etdw"))?, Params::load(dir.join("heavy.etdw"))?)
        }
        None => (
            Params::init(Arch::Light(LightArch::default()), 1),
            Params::init(Arch::Heavy(HeavyArch { hidden: 16, layers: 1, ..HeavyArch::default() }), 2),
        ),
    };
    let out = std::env::temp_dir().join("etd_example_eval");
    let parts = Variant::SYNTHETIC
        .iter()
        .map(|&variant| generate_corpus(&DatagenConfig { variant, n_samples: 4, seed: 8, out_dir: out.clone(), ..Default::default() }))
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = Manifest::merge(&parts)?;

    let (features, cascade) = (FeatureConfig::default(), CascadeConfig::default());
    let outcomes = StreamMode::ALL
        .iter()
        .map(|&mode| evaluate_stream_task(&corpus, &light, &heavy, mode, &cascade, &features))
        .collect::<Result<Vec<_>, _>>()?;
    for o in &outcomes {
        println!("{}\n{}", o.compute.mode, seg_table(&o.seg));
    }
    let rows: Vec<_> = outcomes.iter().map(|o| (&o.compute, &o.seg)).collect();
    print!("{}", compute_table(&rows));
    Ok(())
}
