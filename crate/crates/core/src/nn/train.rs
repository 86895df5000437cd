use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heavy::{pad_window, softmax_rows, HeavyModel, MIN_WINDOW_FRAMES};
use super::light::LightModel;
use super::params::{Arch, Params};
use super::{sigmoid, NnError, Scalar};
use crate::audio::{MelExtractor, FeatureConfig};
use crate::datagen::Manifest;
use crate::labels::{rasterize, TurnState, STEP_MS};

/// Heavy training windows end this far into the silence.
pub const HEAVY_SILENCE_OFFSET_S: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Decision steps per update for the light model, windows per update for
    /// the heavy model.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adamw_beta1: f64,
    pub adamw_beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::light()
    }
}

impl TrainConfig {
    pub fn light() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            adamw_beta1: 0.9,
            adamw_beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    pub fn heavy() -> Self {
        Self { batch_size: 8, learning_rate: 1e-4, ..Self::light() }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.adamw_beta1) || !(0.0..1.0).contains(&self.adamw_beta2) || !(self.eps > 0.0) {
            return Err(NnError::Config("AdamW betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay applied to every tensor:
/// θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    config: TrainConfig,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>, config: &TrainConfig) -> Self {
        let zeros = || params.tensors().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self { config: config.clone(), m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.adamw_beta1), T::from_f64(c.adamw_beta2));
        let bc1 = T::from_f64(1.0 - c.adamw_beta1.powi(self.t));
        let bc2 = T::from_f64(1.0 - c.adamw_beta2.powi(self.t));
        let (lr, decay, eps) = (T::from_f64(c.learning_rate), T::from_f64(c.learning_rate * c.weight_decay), T::from_f64(c.eps));
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p = *p - update - decay * *p;
            });
        }
    }
}

/// One conversation for the light model: its complete steps and SU targets.
#[derive(Debug, Clone)]
pub struct LightSequence {
    pub sample_id: String,
    /// `steps × frames_per_step` rows of log-mel features.
    pub frames: Array2<f32>,
    /// 1 for SU, 0 otherwise, one per step.
    pub targets: Vec<f32>,
}

impl LightSequence {
    pub fn steps(&self) -> usize {
        self.targets.len()
    }
}

/// One silence segment for the heavy model.
#[derive(Debug, Clone)]
pub struct HeavyExample {
    pub sample_id: String,
    /// Feature frames ending [`HEAVY_SILENCE_OFFSET_S`] into the silence, not padded.
    pub window: Array2<f32>,
    pub state: TurnState,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Light(Vec<LightSequence>),
    Heavy(Vec<HeavyExample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Light(v) => v.len(),
            Dataset::Heavy(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-step SU targets for every sample of `manifest`.
pub fn light_sequences(manifest: &Manifest, features: &FeatureConfig, frames_per_step: usize) -> Result<Vec<LightSequence>, NnError> {
    let extractor = MelExtractor::new(features.clone())?;
    let mut out = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let frames = extractor.extract(manifest.load_audio(entry)?.samples()).into_frames();
        let labels = rasterize(&manifest.load_track(entry)?, STEP_MS)?;
        let steps = (frames.nrows() / frames_per_step).min(labels.len());
        if steps == 0 {
            log::warn!("{}: too short for one step, skipped", entry.sample_id);
            continue;
        }
        out.push(LightSequence {
            sample_id: entry.sample_id.clone(),
            frames: frames.slice(s![..steps * frames_per_step, ..]).to_owned(),
            targets: labels.labels[..steps].iter().map(|&l| if l == TurnState::SU { 1.0 } else { 0.0 }).collect(),
        });
    }
    Ok(out)
}

/// Frame index (exclusive) where a window ending at `time_s` stops.
pub(crate) fn frame_at(time_s: f64, features: &FeatureConfig) -> usize {
    (time_s * 1000.0 / features.hop_ms).round() as usize
}

/// One example per Pause or Gap segment, using at most `window_frames` frames.
pub fn heavy_examples(manifest: &Manifest, features: &FeatureConfig, window_frames: usize) -> Result<Vec<HeavyExample>, NnError> {
    let extractor = MelExtractor::new(features.clone())?;
    let mut out = Vec::new();
    for entry in &manifest.entries {
        let frames = extractor.extract(manifest.load_audio(entry)?.samples()).into_frames();
        let track = manifest.load_track(entry)?;
        for (state, start, _) in track.spans().filter(|(s, _, _)| s.is_silence()) {
            let end = frame_at(start + HEAVY_SILENCE_OFFSET_S, features).min(frames.nrows());
            if end < MIN_WINDOW_FRAMES {
                continue;
            }
            let begin = end.saturating_sub(window_frames);
            out.push(HeavyExample {
                sample_id: entry.sample_id.clone(),
                window: frames.slice(s![begin..end, ..]).to_owned(),
                state,
            });
        }
    }
    Ok(out)
}

/// Mean training loss and accuracy of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub examples: usize,
}

/// Numerically stable binary cross-entropy on a logit.
pub(crate) fn bce_with_logit<T: Scalar>(logit: T, target: T) -> T {
    logit.max(T::zero()) - logit * target + (T::one() + (-logit.abs()).exp()).ln()
}

/// Loss, correct count and per-logit gradient for a padded light batch.
pub(crate) fn light_batch<T: Scalar>(
    model: &LightModel<T>,
    batch: &[&LightSequence],
) -> (T, usize, usize, Params<T>) {
    let arch = model.arch;
    let steps = batch.iter().map(|s| s.steps()).max().unwrap_or(0);
    let b = batch.len();
    let width = arch.frames_per_step * arch.n_mels;
    let mut x = Array2::<T>::zeros((steps * b, width));
    let mut targets = Array1::<T>::zeros(steps * b);
    let mut mask = vec![false; steps * b];
    for (bi, seq) in batch.iter().enumerate() {
        for t in 0..seq.steps() {
            let row = t * b + bi;
            x.row_mut(row).assign(&model.step_image(seq.frames.view(), t));
            targets[row] = T::from_f64(seq.targets[t] as f64);
            mask[row] = true;
        }
    }
    let valid = mask.iter().filter(|&&m| m).count();
    let (logits, _, cache) = model.forward_images(x.view(), steps, b, None, true);
    let scale = T::one() / T::from_f64(valid as f64);
    let mut loss = T::zero();
    let mut correct = 0;
    let mut d = Array1::<T>::zeros(steps * b);
    for row in 0..steps * b {
        if !mask[row] {
            continue;
        }
        let (l, y) = (logits[row], targets[row]);
        loss = loss + bce_with_logit(l, y) * scale;
        d[row] = (sigmoid(l) - y) * scale;
        if (l >= T::zero()) == (y > T::from_f64(0.5)) {
            correct += 1;
        }
    }
    let grads = model.backward(cache.as_ref().expect("cache kept"), d.view());
    (loss, correct, valid, grads)
}

/// Mean cross-entropy, correct count and gradients for heavy windows padded
/// to the model size.
pub(crate) fn heavy_batch<T: Scalar>(
    model: &HeavyModel<T>,
    windows: &[Array2<f32>],
    targets: &[usize],
) -> (T, usize, Params<T>) {
    let b = windows.len();
    let x = model.stack(windows);
    let (logits, cache) = model.forward_stacked(x.view(), b, true);
    let probs = softmax_rows(&logits);
    let scale = T::one() / T::from_f64(b as f64);
    let mut loss = T::zero();
    let mut correct = 0;
    let mut d = Array2::<T>::zeros((b, 2));
    for (i, (&(p0, p1), &y)) in probs.iter().zip(targets).enumerate() {
        let py = if y == 0 { p0 } else { p1 };
        // log-softmax from logits keeps the loss finite for saturated outputs
        let (l0, l1) = (logits[[i, 0]], logits[[i, 1]]);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        loss = loss + (lse - logits[[i, y]]) * scale;
        d[[i, 0]] = (p0 - if y == 0 { T::one() } else { T::zero() }) * scale;
        d[[i, 1]] = (p1 - if y == 1 { T::one() } else { T::zero() }) * scale;
        if py > T::from_f64(0.5) || (py == T::from_f64(0.5) && y == 0) {
            correct += 1;
        }
    }
    let grads = model.backward(cache.as_ref().expect("cache kept"), d.view());
    (loss, correct, grads)
}

fn target_index(state: TurnState) -> usize {
    if state == TurnState::Gap {
        1
    } else {
        0
    }
}

/// Trains a fresh model of `arch` on `dataset`.
///
/// Shuffling and initialization derive from `config.seed`; runs are
/// bit-identical for equal inputs.
pub fn train(
    dataset: &Dataset,
    arch: Arch,
    config: &TrainConfig,
    floor: f32,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Params, Vec<EpochStats>), NnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut params = Params::<f32>::init(arch, config.seed);
    let mut opt = AdamW::new(&params, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen, mut batch_index) = (0.0f64, 0usize, 0usize, 0usize);
        match dataset {
            Dataset::Light(seqs) => {
                let mut start = 0;
                while start < order.len() {
                    let mut end = start;
                    let mut steps = 0;
                    while end < order.len() && steps < config.batch_size {
                        steps += seqs[order[end]].steps();
                        end += 1;
                    }
                    let batch: Vec<&LightSequence> = order[start..end].iter().map(|&i| &seqs[i]).collect();
                    let (loss, ok, valid, grads) = light_batch(&LightModel::new(&params)?, &batch);
                    if !loss.is_finite() {
                        return Err(NnError::NonFiniteLoss { epoch, batch: batch_index });
                    }
                    opt.step(&mut params, &grads);
                    loss_sum += loss as f64 * valid as f64;
                    correct += ok;
                    seen += valid;
                    batch_index += 1;
                    start = end;
                }
            }
            Dataset::Heavy(examples) => {
                let Arch::Heavy(heavy_arch) = arch else {
                    return Err(NnError::Config("heavy dataset needs a heavy architecture".into()));
                };
                for chunk in order.chunks(config.batch_size) {
                    let windows: Vec<Array2<f32>> =
                        chunk.iter().map(|&i| pad_window(examples[i].window.view(), heavy_arch.window_frames, floor)).collect();
                    let targets: Vec<usize> = chunk.iter().map(|&i| target_index(examples[i].state)).collect();
                    let (loss, ok, grads) = heavy_batch(&HeavyModel::new(&params)?, &windows, &targets);
                    if !loss.is_finite() {
                        return Err(NnError::NonFiniteLoss { epoch, batch: batch_index });
                    }
                    opt.step(&mut params, &grads);
                    loss_sum += loss as f64 * chunk.len() as f64;
                    correct += ok;
                    seen += chunk.len();
                    batch_index += 1;
                }
            }
        }
        let stats = EpochStats { epoch, loss: loss_sum / seen as f64, accuracy: correct as f64 / seen as f64, examples: seen };
        log::info!(
            "{} epoch {epoch}: loss {:.4} acc {:.4} ({:.1}s)",
            arch.kind().as_str(),
            stats.loss,
            stats.accuracy,
            started.elapsed().as_secs_f64()
        );
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeavyArch, LightArch};
    use ndarray::Array;
    use rand::Rng;

    const FLOOR: f32 = -23.025_85;

    fn toy_light(n: usize, steps: usize, seed: u64) -> Vec<LightSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let targets: Vec<f32> = (0..steps).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
                // loud frames for SU, floor frames otherwise
                let frames = Array::from_shape_fn((steps * 10, 40), |(r, _)| {
                    if targets[r / 10] > 0.5 {
                        rng.random_range(-2.0..1.0)
                    } else {
                        FLOOR
                    }
                });
                LightSequence { sample_id: format!("s{i}"), frames, targets }
            })
            .collect()
    }

    fn small_light() -> Arch {
        Arch::Light(LightArch { hidden: 16, ..LightArch::default() })
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = Dataset::Light(toy_light(3, 5, 1));
        let config = TrainConfig { epochs: 2, learning_rate: 0.0, seed: 4, ..TrainConfig::light() };
        let (params, history) = train(&data, small_light(), &config, FLOOR, |_| {}).unwrap();
        assert_eq!(params, Params::init(small_light(), 4));
        assert_eq!(history.len(), 2);
    }

    #[test]
    fn memorizes_a_single_sequence() {
        let data = Dataset::Light(toy_light(1, 12, 2));
        let config = TrainConfig { epochs: 200, learning_rate: 3e-3, ..TrainConfig::light() };
        let (_, history) = train(&data, small_light(), &config, FLOOR, |_| {}).unwrap();
        assert!(history.last().unwrap().loss < 0.01, "{:?}", history.last());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = Dataset::Light(toy_light(4, 6, 3));
        let config = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::light() };
        let a = train(&data, small_light(), &config, FLOOR, |_| {}).unwrap();
        let b = train(&data, small_light(), &config, FLOOR, |_| {}).unwrap();
        assert_eq!(a.0.to_bytes(), b.0.to_bytes());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn heavy_learns_a_separable_toy_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = HeavyArch { window_frames: 20, n_mels: 40, hidden: 8, layers: 2 };
        let examples: Vec<HeavyExample> = (0..16)
            .map(|i| {
                let gap = i % 2 == 0;
                let level = if gap { -1.0 } else { -6.0 };
                HeavyExample {
                    sample_id: format!("h{i}"),
                    window: Array::from_shape_fn((20, 40), |_| level + rng.random_range(-0.5..0.5)),
                    state: if gap { TurnState::Gap } else { TurnState::Pause },
                }
            })
            .collect();
        let config = TrainConfig { epochs: 60, learning_rate: 3e-3, ..TrainConfig::heavy() };
        let (_, history) = train(&Dataset::Heavy(examples), Arch::Heavy(arch), &config, FLOOR, |_| {}).unwrap();
        assert!(history.last().unwrap().accuracy == 1.0, "{:?}", history.last());
    }

    #[test]
    fn empty_dataset_and_bad_config_rejected() {
        assert!(matches!(
            train(&Dataset::Light(Vec::new()), small_light(), &TrainConfig::light(), FLOOR, |_| {}),
            Err(NnError::EmptyDataset)
        ));
        let bad = TrainConfig { epochs: 0, ..TrainConfig::light() };
        assert!(train(&Dataset::Light(toy_light(1, 2, 0)), small_light(), &bad, FLOOR, |_| {}).is_err());
    }

    #[test]
    fn adamw_decays_with_zero_gradient() {
        let arch = Arch::Light(LightArch::tiny());
        let mut p = Params::<f64>::init(arch, 1);
        let before = p.clone();
        let config = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..TrainConfig::light() };
        let mut opt = AdamW::new(&p, &config);
        let zero = p.zeros_like();
        opt.step(&mut p, &zero);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y * 0.95).abs() < 1e-15));
        }
    }
}
