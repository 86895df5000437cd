use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::gru::{GruCache, GruGrads, GruLayer};
use super::params::{Arch, Params};
use super::{normalize, ArchKind, NnError, Scalar};
use crate::audio::FeatureSequence;

/// Stacked bidirectional GRUs over a fixed trailing window, pooled into a
/// Pause/Gap softmax. Output index 0 is Pause, 1 is Gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeavyArch {
    pub window_frames: usize,
    pub n_mels: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for HeavyArch {
    fn default() -> Self {
        Self { window_frames: 300, n_mels: 40, hidden: 256, layers: 2 }
    }
}

/// Smallest window accepted by [`heavy_forward`].
pub const MIN_WINDOW_FRAMES: usize = 10;

impl HeavyArch {
    pub fn tiny() -> Self {
        Self { window_frames: 12, n_mels: 4, hidden: 3, layers: 2 }
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_mels
        } else {
            2 * self.hidden
        }
    }

    /// Width of the pooled feature: mean over time and last-step output,
    /// each `2·hidden`.
    pub fn pooled_dim(&self) -> usize {
        4 * self.hidden
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut shapes = Vec::new();
        for l in 0..self.layers {
            for dir in ["fwd", "bwd"] {
                shapes.push((format!("l{l}.{dir}.w"), vec![self.layer_input(l), 3 * h]));
                shapes.push((format!("l{l}.{dir}.u"), vec![h, 3 * h]));
                shapes.push((format!("l{l}.{dir}.b"), vec![3 * h]));
            }
        }
        shapes.push(("out.w".into(), vec![self.pooled_dim(), 2]));
        shapes.push(("out.b".into(), vec![2]));
        shapes
    }
}

/// Keeps the last `window_frames` frames, left-padding with `floor` rows.
pub fn pad_window(frames: ArrayView2<f32>, window_frames: usize, floor: f32) -> Array2<f32> {
    let t = frames.nrows();
    if t >= window_frames {
        return frames.slice(s![t - window_frames.., ..]).to_owned();
    }
    let mut out = Array2::from_elem((window_frames, frames.ncols()), floor);
    out.slice_mut(s![window_frames - t.., ..]).assign(&frames);
    out
}

pub(crate) struct HeavyCache<T> {
    layers: Vec<(GruCache<T>, GruCache<T>)>,
    pooled: Array2<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeavyModel<'a, T> {
    pub arch: HeavyArch,
    params: &'a Params<T>,
}

impl<'a, T: Scalar> HeavyModel<'a, T> {
    pub fn new(params: &'a Params<T>) -> Result<Self, NnError> {
        match params.arch() {
            Arch::Heavy(arch) => Ok(Self { arch, params }),
            Arch::Light(_) => Err(NnError::WrongArch { expected: ArchKind::Heavy, found: ArchKind::Light }),
        }
    }

    fn gru(&self, layer: usize, dir: &str) -> GruLayer<'a, T> {
        let p = self.params;
        GruLayer {
            w: p.mat(&format!("l{layer}.{dir}.w")),
            u: p.mat(&format!("l{layer}.{dir}.u")),
            b: p.vec(&format!("l{layer}.{dir}.b")),
        }
    }

    /// Stacks already padded windows time-major (row `t·B + b`), normalized.
    pub fn stack(&self, windows: &[Array2<f32>]) -> Array2<T> {
        let (w, m, b) = (self.arch.window_frames, self.arch.n_mels, windows.len());
        let mut x = Array2::zeros((w * b, m));
        for (bi, win) in windows.iter().enumerate() {
            for t in 0..w {
                x.row_mut(t * b + bi).assign(&win.row(t).mapv(normalize::<T>));
            }
        }
        x
    }

    /// Logits `[B, 2]` for `batch` stacked windows.
    pub(crate) fn forward_stacked(&self, x: ArrayView2<T>, batch: usize, keep_cache: bool) -> (Array2<T>, Option<HeavyCache<T>>) {
        let w = self.arch.window_frames;
        let mut input = x.to_owned();
        let mut caches = Vec::new();
        for l in 0..self.arch.layers {
            let (of, cf) = self.gru(l, "fwd").forward(input.view(), w, batch, None, false, keep_cache);
            let (ob, cb) = self.gru(l, "bwd").forward(input.view(), w, batch, None, true, keep_cache);
            input = concatenate![Axis(1), of, ob];
            if let (Some(cf), Some(cb)) = (cf, cb) {
                caches.push((cf, cb));
            }
        }
        let inv_w = T::one() / T::from_f64(w as f64);
        let width = input.ncols();
        let mut pooled = Array2::zeros((batch, 2 * width));
        for t in 0..w {
            let rows = input.slice(s![t * batch..(t + 1) * batch, ..]);
            let mut mean = pooled.slice_mut(s![.., ..width]);
            mean.scaled_add(inv_w, &rows);
        }
        pooled.slice_mut(s![.., width..]).assign(&input.slice(s![(w - 1) * batch.., ..]));
        let mut logits = pooled.dot(&self.params.mat("out.w"));
        logits += &self.params.vec("out.b");
        let cache = keep_cache.then(|| HeavyCache { layers: caches, pooled });
        (logits, cache)
    }

    pub(crate) fn backward(&self, cache: &HeavyCache<T>, d_logits: ArrayView2<T>) -> Params<T> {
        let (w, h) = (self.arch.window_frames, self.arch.hidden);
        let batch = d_logits.nrows();
        let mut grads = self.params.zeros_like();
        grads.mat_mut("out.w").assign(&cache.pooled.t().dot(&d_logits));
        grads.vec_mut("out.b").assign(&d_logits.sum_axis(Axis(0)));
        let d_pooled = d_logits.dot(&self.params.mat("out.w").t());

        let width = 2 * h;
        let inv_w = T::one() / T::from_f64(w as f64);
        let mut d_top = Array2::zeros((w * batch, width));
        let d_mean = d_pooled.slice(s![.., ..width]).mapv(|v| v * inv_w);
        for t in 0..w {
            d_top.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&d_mean);
        }
        let mut last = d_top.slice_mut(s![(w - 1) * batch.., ..]);
        last += &d_pooled.slice(s![.., width..]);

        for l in (0..self.arch.layers).rev() {
            let (cf, cb) = &cache.layers[l];
            let mut d_in: Option<Array2<T>> = None;
            for (dir, c, cols) in [("fwd", cf, s![.., ..h]), ("bwd", cb, s![.., h..])] {
                let layer = self.gru(l, dir);
                let din = layer.input_dim();
                let (mut dw, mut du, mut db) = (Array2::zeros((din, 3 * h)), Array2::zeros((h, 3 * h)), Array1::zeros(3 * h));
                let mut g = GruGrads { w: dw.view_mut(), u: du.view_mut(), b: db.view_mut() };
                let dx = layer.backward(c, d_top.slice(cols), &mut g);
                grads.mat_mut(&format!("l{l}.{dir}.w")).assign(&dw);
                grads.mat_mut(&format!("l{l}.{dir}.u")).assign(&du);
                grads.vec_mut(&format!("l{l}.{dir}.b")).assign(&db);
                d_in = Some(match d_in {
                    Some(acc) => acc + dx,
                    None => dx,
                });
            }
            d_top = d_in.expect("two directions");
        }
        grads
    }
}

fn softmax2<T: Scalar>(a: T, b: T) -> (T, T) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    (ea / s, eb / s)
}

pub(crate) fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Vec<(T, T)> {
    logits.rows().into_iter().map(|r| softmax2(r[0], r[1])).collect()
}

/// `(p_pause, p_gap)` for a window of feature frames ending at the decision
/// point. Windows shorter than the model's are left-padded with `floor`.
pub fn heavy_forward(window: &FeatureSequence, params: &Params, floor: f32) -> Result<(f32, f32), NnError> {
    Ok(heavy_forward_batch(&[window.frames()], params, floor)?[0])
}

/// Batched [`heavy_forward`].
pub fn heavy_forward_batch(windows: &[ArrayView2<f32>], params: &Params, floor: f32) -> Result<Vec<(f32, f32)>, NnError> {
    let model = HeavyModel::new(params)?;
    let arch = model.arch;
    let mut padded = Vec::with_capacity(windows.len());
    for win in windows {
        if win.nrows() < MIN_WINDOW_FRAMES {
            return Err(NnError::TooShort { need: MIN_WINDOW_FRAMES, got: win.nrows() });
        }
        if win.ncols() != arch.n_mels {
            return Err(NnError::Shape(format!("expected {} mels, got {}", arch.n_mels, win.ncols())));
        }
        padded.push(pad_window(*win, arch.window_frames, floor));
    }
    if padded.is_empty() {
        return Ok(Vec::new());
    }
    let x = model.stack(&padded);
    let (logits, _) = model.forward_stacked(x.view(), padded.len(), false);
    Ok(softmax_rows(&logits))
}
