use ndarray::Array2;

use super::heavy::{pad_window, HeavyModel};
use super::light::LightModel;
use super::params::{Arch, Params};
use super::train::{heavy_batch, light_batch, LightSequence};
use super::{ArchKind, HeavyArch, LightArch, NnError};
use crate::labels::TurnState;

/// Input and target for one gradient check.
#[derive(Debug, Clone)]
pub enum GradCheckSample {
    /// `steps × frames_per_step` feature rows with one SU target per step.
    Light { frames: Array2<f32>, targets: Vec<f32> },
    Heavy { window: Array2<f32>, state: TurnState },
}

fn loss_and_grads(params: &Params<f64>, sample: &GradCheckSample, floor: f32) -> Result<(f64, Params<f64>), NnError> {
    match sample {
        GradCheckSample::Light { frames, targets } => {
            let model = LightModel::new(params)?;
            let f = model.arch.frames_per_step;
            if frames.nrows() != targets.len() * f || frames.ncols() != model.arch.n_mels || targets.is_empty() {
                return Err(NnError::Shape(format!("frames {:?} do not match {} targets", frames.dim(), targets.len())));
            }
            let seq = LightSequence { sample_id: String::new(), frames: frames.clone(), targets: targets.clone() };
            let (loss, _, _, grads) = light_batch(&model, &[&seq]);
            Ok((loss, grads))
        }
        GradCheckSample::Heavy { window, state } => {
            let model = HeavyModel::new(params)?;
            if window.ncols() != model.arch.n_mels || window.nrows() == 0 {
                return Err(NnError::Shape(format!("window {:?} for {} mels", window.dim(), model.arch.n_mels)));
            }
            let padded = pad_window(window.view(), model.arch.window_frames, floor);
            let target = usize::from(*state == TurnState::Gap);
            let (loss, _, grads) = heavy_batch(&model, &[padded], &[target]);
            Ok((loss, grads))
        }
    }
}

/// Maximum over parameters of |g_a − g_n| / max(|g_a|, |g_n|, 1e-8), with
/// g_n the central difference (f(θ+eps) − f(θ−eps)) / (2·eps).
pub fn grad_check_params(params: &Params<f64>, sample: &GradCheckSample, eps: f64, floor: f32) -> Result<f64, NnError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NnError::Config(format!("eps must be positive and finite, got {eps}")));
    }
    let (_, analytic) = loss_and_grads(params, sample, floor)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for ti in 0..params.tensors().len() {
        for k in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].as_slice().expect("contiguous")[k];
            let mut eval = |v: f64| -> Result<f64, NnError> {
                probe.tensors_mut()[ti].as_slice_mut().expect("contiguous")[k] = v;
                Ok(loss_and_grads(&probe, sample, floor)?.0)
            };
            let plus = eval(orig + eps)?;
            let minus = eval(orig - eps)?;
            eval(orig)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let ga = analytic.tensors()[ti].as_slice().expect("contiguous")[k];
            if !numeric.is_finite() || !ga.is_finite() {
                return Err(NnError::NonFinite(params.names()[ti].clone()));
            }
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Gradient check on a toy-sized model of `kind` initialized from `seed`.
pub fn grad_check(kind: ArchKind, sample: &GradCheckSample, eps: f64, seed: u64, floor: f32) -> Result<f64, NnError> {
    let arch = match kind {
        ArchKind::Light => Arch::Light(LightArch::tiny()),
        ArchKind::Heavy => Arch::Heavy(HeavyArch::tiny()),
    };
    grad_check_params(&Params::init(arch, seed), sample, eps, floor)
}

/// Random input matching the toy architecture of `kind`.
pub fn toy_sample(kind: ArchKind, seed: u64) -> GradCheckSample {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ArchKind::Light => {
            let a = LightArch::tiny();
            let steps = 3;
            GradCheckSample::Light {
                frames: Array2::from_shape_fn((steps * a.frames_per_step, a.n_mels), |_| rng.random_range(-16.0..8.0)),
                targets: (0..steps).map(|i| (i % 2) as f32).collect(),
            }
        }
        ArchKind::Heavy => {
            let a = HeavyArch::tiny();
            GradCheckSample::Heavy {
                window: Array2::from_shape_fn((a.window_frames - 2, a.n_mels), |_| rng.random_range(-16.0..8.0)),
                state: TurnState::Gap,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOOR: f32 = -23.025_85;

    #[test]
    fn light_gradients_match_finite_differences() {
        for seed in 0..3 {
            let err = grad_check(ArchKind::Light, &toy_sample(ArchKind::Light, seed), 1e-4, seed, FLOOR).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn heavy_gradients_match_finite_differences() {
        for seed in 0..3 {
            let err = grad_check(ArchKind::Heavy, &toy_sample(ArchKind::Heavy, seed), 1e-4, seed, FLOOR).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_model_output_bias_gradient() {
        let p = Params::<f64>::zeros(Arch::Light(LightArch::tiny()));
        // normalized input of zero
        let frames = Array2::from_elem((4, 6), -8.0f32);
        let sample = GradCheckSample::Light { frames, targets: vec![1.0] };
        let (_, grads) = loss_and_grads(&p, &sample, FLOOR).unwrap();
        assert!((grads.vec("out.b")[0] - (0.5 - 1.0)).abs() < 1e-15);
        assert!(grad_check_params(&p, &sample, 1e-4, FLOOR).unwrap() < 1e-6);
    }

    #[test]
    fn zero_eps_rejected() {
        let sample = toy_sample(ArchKind::Light, 0);
        assert!(matches!(grad_check(ArchKind::Light, &sample, 0.0, 0, FLOOR), Err(NnError::Config(_))));
    }
}
