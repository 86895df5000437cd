use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{sigmoid, NnError, Scalar};

/// One GRU layer's weights. Gate columns are ordered update (z), reset (r),
/// candidate (n); `w` is `[d_in, 3h]`, `u` is `[h, 3h]`, `b` is `[3h]`.
#[derive(Debug, Clone, Copy)]
pub struct GruLayer<'a, T> {
    pub w: ArrayView2<'a, T>,
    pub u: ArrayView2<'a, T>,
    pub b: ArrayView1<'a, T>,
}

/// Gradient accumulators matching a [`GruLayer`].
pub struct GruGrads<'a, T> {
    pub w: ArrayViewMut2<'a, T>,
    pub u: ArrayViewMut2<'a, T>,
    pub b: ArrayViewMut1<'a, T>,
}

/// Activations saved by [`GruLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    x: Array2<T>,
    h0: Array2<T>,
    z: Array2<T>,
    r: Array2<T>,
    n: Array2<T>,
    hu_n: Array2<T>,
    h: Array2<T>,
    steps: usize,
    batch: usize,
    reverse: bool,
}

impl<T> GruCache<T> {
    pub fn outputs(&self) -> &Array2<T> {
        &self.h
    }
}

fn order(steps: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    }
}

impl<'a, T: Scalar> GruLayer<'a, T> {
    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Runs the layer over `steps` time steps of `batch` sequences.
    ///
    /// Row `t * batch + b` of `x` is sequence `b` at time `t`, and the output
    /// uses the same layout. With `reverse` the sequence is consumed from the
    /// last step to the first. Panics on shape mismatch.
    pub fn forward(
        &self,
        x: ArrayView2<T>,
        steps: usize,
        batch: usize,
        h0: Option<ArrayView2<T>>,
        reverse: bool,
        keep_cache: bool,
    ) -> (Array2<T>, Option<GruCache<T>>) {
        let h = self.hidden();
        assert_eq!(x.dim(), (steps * batch, self.input_dim()), "gru input shape");
        assert_eq!(self.u.dim(), (h, 3 * h));
        assert_eq!(self.b.len(), 3 * h);
        let h0 = h0.map_or_else(|| Array2::zeros((batch, h)), |v| v.to_owned());
        assert_eq!(h0.dim(), (batch, h), "initial hidden shape");

        let mut xw = x.dot(&self.w);
        xw += &self.b;
        let rows = steps * batch;
        let mut out = Array2::zeros((rows, h));
        let (mut z, mut r, mut n, mut hu_n) = if keep_cache {
            (Array2::zeros((rows, h)), Array2::zeros((rows, h)), Array2::zeros((rows, h)), Array2::zeros((rows, h)))
        } else {
            (Array2::zeros((0, h)), Array2::zeros((0, h)), Array2::zeros((0, h)), Array2::zeros((0, h)))
        };

        let mut prev = h0.clone();
        for t in order(steps, reverse) {
            let hu = prev.dot(&self.u);
            for b in 0..batch {
                let row = t * batch + b;
                let xw_row = xw.row(row);
                let hu_row = hu.row(b);
                for j in 0..h {
                    let zj = sigmoid(xw_row[j] + hu_row[j]);
                    let rj = sigmoid(xw_row[h + j] + hu_row[h + j]);
                    let hn = hu_row[2 * h + j];
                    let nj = (xw_row[2 * h + j] + rj * hn).tanh();
                    out[[row, j]] = (T::one() - zj) * nj + zj * prev[[b, j]];
                    if keep_cache {
                        z[[row, j]] = zj;
                        r[[row, j]] = rj;
                        n[[row, j]] = nj;
                        hu_n[[row, j]] = hn;
                    }
                }
            }
            prev.assign(&out.slice(s![t * batch..(t + 1) * batch, ..]));
        }
        let cache = keep_cache.then(|| GruCache {
            x: x.to_owned(),
            h0,
            z,
            r,
            n,
            hu_n,
            h: out.clone(),
            steps,
            batch,
            reverse,
        });
        (out, cache)
    }

    /// Back-propagates `d_out` (gradient of the loss w.r.t. every output
    /// row), accumulating parameter gradients into `grads` and returning the
    /// gradient w.r.t. the input rows.
    pub fn backward(&self, cache: &GruCache<T>, d_out: ArrayView2<T>, grads: &mut GruGrads<T>) -> Array2<T> {
        let h = self.hidden();
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        assert_eq!(d_out.dim(), (rows, h), "gru output-gradient shape");

        let mut dxw = Array2::zeros((rows, 3 * h));
        let mut dhu = Array2::zeros((rows, 3 * h));
        let mut h_prev_all = Array2::zeros((rows, h));
        let mut dh_next = Array2::<T>::zeros((batch, h));
        let seq: Vec<usize> = order(steps, cache.reverse).collect();

        for (k, &t) in seq.iter().enumerate().rev() {
            let h_prev = if k == 0 { cache.h0.view() } else { cache.h.slice(s![seq[k - 1] * batch..(seq[k - 1] + 1) * batch, ..]) };
            for b in 0..batch {
                let row = t * batch + b;
                for j in 0..h {
                    let dh = d_out[[row, j]] + dh_next[[b, j]];
                    let (z, r, n, hn, hp) =
                        (cache.z[[row, j]], cache.r[[row, j]], cache.n[[row, j]], cache.hu_n[[row, j]], h_prev[[b, j]]);
                    let dz = dh * (hp - n);
                    let dn = dh * (T::one() - z);
                    let dan = dn * (T::one() - n * n);
                    let dr = dan * hn;
                    let daz = dz * z * (T::one() - z);
                    let dar = dr * r * (T::one() - r);
                    dxw[[row, j]] = daz;
                    dxw[[row, h + j]] = dar;
                    dxw[[row, 2 * h + j]] = dan;
                    dhu[[row, j]] = daz;
                    dhu[[row, h + j]] = dar;
                    dhu[[row, 2 * h + j]] = dan * r;
                    // direct path through the update gate
                    dh_next[[b, j]] = dh * z;
                    h_prev_all[[row, j]] = hp;
                }
            }
            let block = dhu.slice(s![t * batch..(t + 1) * batch, ..]);
            dh_next += &block.dot(&self.u.t());
        }

        grads.u += &h_prev_all.t().dot(&dhu);
        grads.w += &cache.x.t().dot(&dxw);
        grads.b += &dxw.sum_axis(Axis(0));
        dxw.dot(&self.w.t())
    }
}

/// One GRU step for a single sequence.
///
/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// n = tanh(W_n x + r ⊙ (U_n h) + b_n), h' = (1 − z) ⊙ n + z ⊙ h.
pub fn gru_cell<T: Scalar>(x: ArrayView1<T>, h: ArrayView1<T>, layer: &GruLayer<T>) -> Result<Array1<T>, NnError> {
    let dh = layer.hidden();
    if layer.u.ncols() != 3 * dh || layer.w.ncols() != 3 * dh || layer.b.len() != 3 * dh {
        return Err(NnError::Shape(format!("gate matrices must have {} columns", 3 * dh)));
    }
    if x.len() != layer.input_dim() || h.len() != dh {
        return Err(NnError::Shape(format!(
            "x has {} (want {}), h has {} (want {dh})",
            x.len(),
            layer.input_dim(),
            h.len()
        )));
    }
    let x = x.insert_axis(Axis(0));
    let h0 = h.insert_axis(Axis(0));
    let (out, _) = layer.forward(x, 1, 1, Some(h0), false, false);
    Ok(out.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// Scalar-loop evaluation of the gate equations.
    fn oracle(x: &[f64], h: &[f64], w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
        let dh = h.len();
        let lin = |m: &Array2<f64>, v: &[f64], col: usize| (0..v.len()).map(|i| m[[i, col]] * v[i]).sum::<f64>();
        (0..dh)
            .map(|j| {
                let z = sig(lin(w, x, j) + lin(u, h, j) + b[j]);
                let r = sig(lin(w, x, dh + j) + lin(u, h, dh + j) + b[dh + j]);
                let n = (lin(w, x, 2 * dh + j) + r * lin(u, h, 2 * dh + j) + b[2 * dh + j]).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (w, u, b) = (Array2::<f64>::zeros((3, 12)), Array2::zeros((4, 12)), Array1::zeros(12));
        let layer = GruLayer { w: w.view(), u: u.view(), b: b.view() };
        let h = Array1::from(vec![0.4, -0.2, 1.0, 0.0]);
        let out = gru_cell(Array1::from(vec![1.0, 2.0, 3.0]).view(), h.view(), &layer).unwrap();
        assert_eq!(out, &h * 0.5);
        let zero = gru_cell(Array1::zeros(3).view(), Array1::zeros(4).view(), &layer).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (din, dh) = (rng.random_range(1..8), rng.random_range(1..8));
            let (w, u) = (random(&mut rng, (din, 3 * dh)), random(&mut rng, (dh, 3 * dh)));
            let b = random(&mut rng, (1, 3 * dh)).row(0).to_owned();
            let x = random(&mut rng, (1, din)).row(0).to_owned();
            let h = random(&mut rng, (1, dh)).row(0).to_owned();
            let layer = GruLayer { w: w.view(), u: u.view(), b: b.view() };
            let got = gru_cell(x.view(), h.view(), &layer).unwrap();
            let want = oracle(x.as_slice().unwrap(), h.as_slice().unwrap(), &w, &u, &b);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            assert!(got.iter().all(|v| v.abs() < 1.0 || h.iter().any(|hv| hv.abs() >= v.abs())));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (w, u, b) = (Array2::<f64>::zeros((3, 12)), Array2::zeros((4, 12)), Array1::zeros(12));
        let layer = GruLayer { w: w.view(), u: u.view(), b: b.view() };
        assert!(gru_cell(Array1::zeros(2).view(), Array1::zeros(4).view(), &layer).is_err());
        assert!(gru_cell(Array1::zeros(3).view(), Array1::zeros(5).view(), &layer).is_err());
    }

    #[test]
    fn batched_sequence_matches_cell_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (din, dh, steps, batch) = (3, 5, 6, 2);
        let (w, u) = (random(&mut rng, (din, 3 * dh)), random(&mut rng, (dh, 3 * dh)));
        let b = random(&mut rng, (1, 3 * dh)).row(0).to_owned();
        let layer = GruLayer { w: w.view(), u: u.view(), b: b.view() };
        let x = random(&mut rng, (steps * batch, din));
        for reverse in [false, true] {
            let (out, _) = layer.forward(x.view(), steps, batch, None, reverse, false);
            for bi in 0..batch {
                let mut h = Array1::zeros(dh);
                let ts: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
                for t in ts {
                    h = gru_cell(x.row(t * batch + bi), h.view(), &layer).unwrap();
                    assert!((&out.row(t * batch + bi) - &h).iter().all(|d| d.abs() < 1e-12));
                }
            }
        }
    }
}
