//! Prints parameter counts and FLOPs for the default model shapes.

use etd_core::nn::{count_flops, Arch, FlopsInput, HeavyArch, LightArch, Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let light = Arch::Light(LightArch::default());
    let heavy = Arch::Heavy(HeavyArch::default());
    let per_step = count_flops(&light, FlopsInput::Steps(1))?;
    let per_window = count_flops(&heavy, FlopsInput::Window)?;
    println!("light: {:>9} params, {per_step:>13} FLOPs per 100 ms step", Params::<f32>::init(light, 0).num_params());
    println!("heavy: {:>9} params, {per_window:>13} FLOPs per window", Params::<f32>::init(heavy, 0).num_params());
    println!("one heavy call costs {:.0} light steps", per_window as f64 / per_step as f64);
    for escalations in [0u64, 5, 20] {
        let total = 600 * per_step + escalations * per_window;
        println!("60 s stream with {escalations:>2} escalations: {:.2} GFLOPs", total as f64 / 1e9);
    }
    Ok(())
}
