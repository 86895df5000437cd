use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::gru::{GruCache, GruGrads, GruLayer};
use super::params::{Arch, Params};
use super::{normalize, sigmoid, ArchKind, NnError, Scalar};
use crate::audio::FeatureSequence;

/// Two convolutions over each step's frames×mels block, a GRU across steps,
/// and a logistic SU output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightArch {
    pub frames_per_step: usize,
    pub n_mels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
}

impl Default for LightArch {
    fn default() -> Self {
        Self { frames_per_step: 10, n_mels: 40, conv1_channels: 8, conv2_channels: 16, hidden: 128 }
    }
}

impl LightArch {
    /// Toy size for gradient checks.
    pub fn tiny() -> Self {
        Self { frames_per_step: 4, n_mels: 6, conv1_channels: 2, conv2_channels: 3, hidden: 4 }
    }

    pub fn conv1(&self) -> Conv2d {
        Conv2d {
            in_h: self.frames_per_step,
            in_w: self.n_mels,
            in_c: 1,
            out_c: self.conv1_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn conv2(&self) -> Conv2d {
        let c1 = self.conv1();
        Conv2d {
            in_h: c1.out_h(),
            in_w: c1.out_w(),
            in_c: self.conv1_channels,
            out_c: self.conv2_channels,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn gru_input(&self) -> usize {
        self.conv2().out_len()
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        vec![
            ("conv1.w".into(), self.conv1().weight_shape()),
            ("conv1.b".into(), vec![self.conv1_channels]),
            ("conv2.w".into(), self.conv2().weight_shape()),
            ("conv2.b".into(), vec![self.conv2_channels]),
            ("gru.w".into(), vec![self.gru_input(), 3 * h]),
            ("gru.u".into(), vec![h, 3 * h]),
            ("gru.b".into(), vec![3 * h]),
            ("out.w".into(), vec![h, 1]),
            ("out.b".into(), vec![1]),
        ]
    }
}

pub(crate) struct LightCache<T> {
    cols1: Array2<T>,
    a1: Array2<T>,
    cols2: Array2<T>,
    a2: Array2<T>,
    gru: GruCache<T>,
}

/// Borrowed view of light-model parameters.
#[derive(Debug, Clone, Copy)]
pub struct LightModel<'a, T> {
    pub arch: LightArch,
    params: &'a Params<T>,
}

fn relu<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    a.mapv(|v| v.max(T::zero()))
}

fn conv_weight<T: Scalar>(params: &Params<T>, name: &str, conv: &Conv2d) -> Array2<T> {
    params.get(name).view().into_shape_with_order((conv.patch_len(), conv.out_c)).expect("contiguous").to_owned()
}

impl<'a, T: Scalar> LightModel<'a, T> {
    pub fn new(params: &'a Params<T>) -> Result<Self, NnError> {
        match params.arch() {
            Arch::Light(arch) => Ok(Self { arch, params }),
            Arch::Heavy(_) => Err(NnError::WrongArch { expected: ArchKind::Light, found: ArchKind::Heavy }),
        }
    }

    fn gru(&self) -> GruLayer<'a, T> {
        GruLayer { w: self.params.mat("gru.w"), u: self.params.mat("gru.u"), b: self.params.vec("gru.b") }
    }

    /// Flattens and normalizes step `i`'s feature block into one image row.
    pub fn step_image(&self, frames: ArrayView2<f32>, step: usize) -> Array1<T> {
        let f = self.arch.frames_per_step;
        frames.slice(ndarray::s![step * f..(step + 1) * f, ..]).iter().map(|&v| normalize(v)).collect()
    }

    /// Runs `steps × batch` step images (row `t·batch + b`). Returns SU
    /// logits in the same row order and the final hidden state.
    pub(crate) fn forward_images(
        &self,
        x: ArrayView2<T>,
        steps: usize,
        batch: usize,
        h0: Option<ArrayView2<T>>,
        keep_cache: bool,
    ) -> (Array1<T>, Array2<T>, Option<LightCache<T>>) {
        let (c1, c2) = (self.arch.conv1(), self.arch.conv2());
        let (a1, cols1) = c1.forward(x, conv_weight(self.params, "conv1.w", &c1).view(), self.params.vec("conv1.b"));
        let (a2, cols2) = c2.forward(relu(&a1).view(), conv_weight(self.params, "conv2.w", &c2).view(), self.params.vec("conv2.b"));
        let (hs, gru_cache) = self.gru().forward(relu(&a2).view(), steps, batch, h0, false, keep_cache);
        let mut logits = hs.dot(&self.params.mat("out.w")).remove_axis(Axis(1));
        logits += self.params.vec("out.b")[0];
        let last = if steps == 0 {
            h0.map_or_else(|| Array2::zeros((batch, self.arch.hidden)), |h| h.to_owned())
        } else {
            hs.slice(ndarray::s![(steps - 1) * batch.., ..]).to_owned()
        };
        let cache = gru_cache.map(|gru| LightCache { cols1, a1, cols2, a2, gru });
        (logits, last, cache)
    }

    /// Gradients of the loss given `d_logits`, its derivative w.r.t. every logit.
    pub(crate) fn backward(&self, cache: &LightCache<T>, d_logits: ArrayView1<T>) -> Params<T> {
        let mut grads = self.params.zeros_like();
        let hs = cache.gru.outputs();
        let d = d_logits.insert_axis(Axis(1));
        grads.mat_mut("out.w").assign(&hs.t().dot(&d));
        grads.vec_mut("out.b")[0] = d_logits.sum();
        let d_hs = d.dot(&self.params.mat("out.w").t());

        let h = self.arch.hidden;
        let (mut dw, mut du, mut db) =
            (Array2::zeros((self.arch.gru_input(), 3 * h)), Array2::zeros((h, 3 * h)), Array1::zeros(3 * h));
        let mut g = GruGrads { w: dw.view_mut(), u: du.view_mut(), b: db.view_mut() };
        let mut d_r2 = self.gru().backward(&cache.gru, d_hs.view(), &mut g);
        grads.mat_mut("gru.w").assign(&dw);
        grads.mat_mut("gru.u").assign(&du);
        grads.vec_mut("gru.b").assign(&db);

        let (c1, c2) = (self.arch.conv1(), self.arch.conv2());
        d_r2.zip_mut_with(&cache.a2, |g, &a| {
            if a <= T::zero() {
                *g = T::zero();
            }
        });
        let w2 = conv_weight(self.params, "conv2.w", &c2);
        let (mut dw2, mut db2) = (Array2::zeros(w2.dim()), Array1::zeros(c2.out_c));
        let mut d_r1 = c2.backward(cache.cols2.view(), d_r2.view(), w2.view(), dw2.view_mut(), db2.view_mut(), true).unwrap();
        d_r1.zip_mut_with(&cache.a1, |g, &a| {
            if a <= T::zero() {
                *g = T::zero();
            }
        });
        let w1 = conv_weight(self.params, "conv1.w", &c1);
        let (mut dw1, mut db1) = (Array2::zeros(w1.dim()), Array1::zeros(c1.out_c));
        c1.backward(cache.cols1.view(), d_r1.view(), w1.view(), dw1.view_mut(), db1.view_mut(), false);

        for (name, v) in [("conv1.w", dw1), ("conv2.w", dw2)] {
            let shape = grads.get(name).shape().to_vec();
            grads.get_mut(name).assign(&v.into_shape_with_order(shape).expect("contiguous"));
        }
        grads.vec_mut("conv1.b").assign(&db1);
        grads.vec_mut("conv2.b").assign(&db2);
        grads
    }

    /// SU probabilities for every complete step of `frames`.
    pub fn forward_frames(&self, frames: ArrayView2<f32>) -> Result<Vec<T>, NnError> {
        let (f, m) = (self.arch.frames_per_step, self.arch.n_mels);
        if frames.ncols() != m {
            return Err(NnError::Shape(format!("expected {m} mels, got {}", frames.ncols())));
        }
        if frames.nrows() < f {
            return Err(NnError::TooShort { need: f, got: frames.nrows() });
        }
        let steps = frames.nrows() / f;
        let mut x = Array2::zeros((steps, f * m));
        for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&self.step_image(frames, i));
        }
        let (logits, _, _) = self.forward_images(x.view(), steps, 1, None, false);
        Ok(logits.iter().map(|&v| sigmoid(v)).collect())
    }
}

/// SU probability per 100 ms step; causal, with the GRU state carried across steps.
pub fn light_forward(features: &FeatureSequence, params: &Params) -> Result<Vec<f32>, NnError> {
    LightModel::new(params)?.forward_frames(features.frames())
}

/// Incremental light-model inference, one step at a time.
#[derive(Debug, Clone)]
pub struct LightStream<'a> {
    model: LightModel<'a, f32>,
    hidden: Array2<f32>,
}

impl<'a> LightStream<'a> {
    pub fn new(params: &'a Params) -> Result<Self, NnError> {
        let model = LightModel::new(params)?;
        Ok(Self { hidden: Array2::zeros((1, model.arch.hidden)), model })
    }

    pub fn arch(&self) -> LightArch {
        self.model.arch
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
    }

    /// Consumes one `frames_per_step × n_mels` block and returns P(SU).
    pub fn step(&mut self, block: ArrayView2<f32>) -> Result<f32, NnError> {
        let (f, m) = (self.model.arch.frames_per_step, self.model.arch.n_mels);
        if block.dim() != (f, m) {
            return Err(NnError::Shape(format!("step block must be {f}x{m}, got {:?}", block.dim())));
        }
        let x = self.model.step_image(block, 0).insert_axis(Axis(0));
        let (logits, last, _) = self.model.forward_images(x.view(), 1, 1, Some(self.hidden.view()), false);
        self.hidden = last;
        Ok(sigmoid(logits[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(rng: &mut ChaCha8Rng, t: usize, m: usize) -> Array2<f32> {
        Array::from_shape_fn((t, m), |_| rng.random_range(-23.0..2.0))
    }

    #[test]
    fn default_size_fits_budget() {
        let p = Params::<f32>::zeros(Arch::Light(LightArch::default()));
        assert_eq!(LightArch::default().gru_input(), 1600);
        assert!(p.num_params() <= 1 << 20, "{}", p.num_params());
        assert_eq!(p.num_params(), 665_313);
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = Params::<f32>::zeros(Arch::Light(LightArch::default()));
        let f = FeatureSequence::new(Array2::zeros((98, 40)), 10.0);
        let out = light_forward(&f, &p).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn too_short_or_wrong_width_rejected() {
        let p = Params::<f32>::zeros(Arch::Light(LightArch::default()));
        assert!(matches!(
            light_forward(&FeatureSequence::new(Array2::zeros((9, 40)), 10.0), &p),
            Err(NnError::TooShort { need: 10, got: 9 })
        ));
        assert!(light_forward(&FeatureSequence::new(Array2::zeros((20, 39)), 10.0), &p).is_err());
    }

    #[test]
    fn prefix_is_stable_when_a_step_is_appended() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = LightArch { hidden: 16, ..LightArch::default() };
        let p = Params::<f64>::init(Arch::Light(arch), 1);
        let model = LightModel::new(&p).unwrap();
        for _ in 0..100 {
            let steps = rng.random_range(1..6);
            let frames = random_frames(&mut rng, steps * 10 + 10, 40);
            let short = model.forward_frames(frames.slice(ndarray::s![..steps * 10, ..])).unwrap();
            let long = model.forward_frames(frames.view()).unwrap();
            assert_eq!(long.len(), steps + 1);
            for (a, b) in short.iter().zip(&long) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stream_matches_batch_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = Params::<f32>::init(Arch::Light(LightArch::default()), 2);
        let frames = random_frames(&mut rng, 157, 40);
        let batch = light_forward(&FeatureSequence::new(frames.clone(), 10.0), &p).unwrap();
        let mut stream = LightStream::new(&p).unwrap();
        for (i, want) in batch.iter().enumerate() {
            let got = stream.step(frames.slice(ndarray::s![i * 10..(i + 1) * 10, ..])).unwrap();
            assert_eq!(got.to_bits(), want.to_bits(), "step {i}");
        }
    }

    #[test]
    fn outputs_stay_finite_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = Params::<f32>::init(Arch::Light(LightArch::default()), 3);
        let out = light_forward(&FeatureSequence::new(random_frames(&mut rng, 300, 40), 10.0), &p).unwrap();
        assert!(out.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
    }
}
