use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::Scalar;

/// Square-kernel 2-D convolution on channels-last images.
///
/// A batch is a matrix with one image per row, flattened in
/// (height, width, channel) order. Weights are `[k·k·C_in, C_out]`, i.e. a
/// `[k, k, C_in, C_out]` tensor flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w() * self.out_c
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.kernel, self.kernel, self.in_c, self.out_c]
    }

    /// For each output position, the source offset of every patch element
    /// (or `None` inside the zero padding).
    fn taps(&self, oy: usize, ox: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        let k = self.kernel;
        (0..k * k).flat_map(move |kk| {
            let y = (oy * self.stride + kk / k) as isize - self.pad as isize;
            let x = (ox * self.stride + kk % k) as isize - self.pad as isize;
            let inside = y >= 0 && x >= 0 && (y as usize) < self.in_h && (x as usize) < self.in_w;
            let base = if inside { Some((y as usize * self.in_w + x as usize) * self.in_c) } else { None };
            (0..self.in_c).map(move |c| base.map(|b| b + c))
        })
    }

    pub fn im2col<T: Scalar>(&self, x: ArrayView2<T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_len(), "conv input width");
        let (oh, ow, pl) = (self.out_h(), self.out_w(), self.patch_len());
        let mut cols = Array2::zeros((x.nrows() * oh * ow, pl));
        for (n, img) in x.axis_iter(Axis(0)).enumerate() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut row = cols.row_mut((n * oh + oy) * ow + ox);
                    for (dst, tap) in row.iter_mut().zip(self.taps(oy, ox)) {
                        if let Some(i) = tap {
                            *dst = img[i];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: ArrayView2<T>, n_images: usize) -> Array2<T> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut dx = Array2::zeros((n_images, self.in_len()));
        for (n, mut img) in dx.axis_iter_mut(Axis(0)).enumerate() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = cols.row((n * oh + oy) * ow + ox);
                    for (&v, tap) in row.iter().zip(self.taps(oy, ox)) {
                        if let Some(i) = tap {
                            img[i] = img[i] + v;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the pre-activation output `[N, out_len]` and the patch matrix
    /// needed by [`Conv2d::backward`].
    pub fn forward<T: Scalar>(&self, x: ArrayView2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> (Array2<T>, Array2<T>) {
        assert_eq!(w.dim(), (self.patch_len(), self.out_c), "conv weight shape");
        let cols = self.im2col(x);
        let mut out = cols.dot(&w);
        out += &b;
        let out = out.into_shape_with_order((x.nrows(), self.out_len())).expect("contiguous");
        (out, cols)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward<T: Scalar>(
        &self,
        cols: ArrayView2<T>,
        d_out: ArrayView2<T>,
        w: ArrayView2<T>,
        mut dw: ArrayViewMut2<T>,
        mut db: ArrayViewMut1<T>,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        let n = d_out.nrows();
        let d = d_out.as_standard_layout().into_owned().into_shape_with_order((cols.nrows(), self.out_c)).expect("contiguous");
        dw += &cols.t().dot(&d);
        db += &d.sum_axis(Axis(0));
        need_dx.then(|| self.col2im(d.dot(&w.t()).view(), n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn direct(c: &Conv2d, img: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; c.out_len()];
        for oy in 0..c.out_h() {
            for ox in 0..c.out_w() {
                for co in 0..c.out_c {
                    let mut acc = b[co];
                    for ky in 0..c.kernel {
                        for kx in 0..c.kernel {
                            let y = (oy * c.stride + ky) as isize - c.pad as isize;
                            let x = (ox * c.stride + kx) as isize - c.pad as isize;
                            if y < 0 || x < 0 || y >= c.in_h as isize || x >= c.in_w as isize {
                                continue;
                            }
                            for ci in 0..c.in_c {
                                let wi = ((ky * c.kernel + kx) * c.in_c + ci) * c.out_c + co;
                                acc += w[wi] * img[(y as usize * c.in_w + x as usize) * c.in_c + ci];
                            }
                        }
                    }
                    out[(oy * c.out_w() + ox) * c.out_c + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let c = Conv2d { in_h: 5, in_w: 7, in_c: 2, out_c: 3, kernel: 3, stride, pad: 1 };
            let x = Array::from_shape_fn((2, c.in_len()), |_| rng.random_range(-1.0..1.0));
            let w = Array::from_shape_fn((c.patch_len(), c.out_c), |_| rng.random_range(-1.0..1.0));
            let b = Array::from_shape_fn(c.out_c, |_| rng.random_range(-1.0..1.0));
            let (out, _) = c.forward(x.view(), w.view(), b.view());
            for n in 0..2 {
                let want = direct(&c, x.row(n).as_slice().unwrap(), w.as_slice().unwrap(), b.as_slice().unwrap());
                for (g, w) in out.row(n).iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_sizes() {
        let c = Conv2d { in_h: 10, in_w: 40, in_c: 8, out_c: 16, kernel: 3, stride: 2, pad: 1 };
        assert_eq!((c.out_h(), c.out_w(), c.out_len()), (5, 20, 1600));
    }

    #[test]
    fn input_gradient_is_adjoint() {
        // <conv(x), g> is linear in x, so d/dx equals col2im(g·Wᵀ); check
        // <dx, e> against the directional difference along a random e.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Conv2d { in_h: 4, in_w: 6, in_c: 2, out_c: 3, kernel: 3, stride: 2, pad: 1 };
        let x = Array::from_shape_fn((1, c.in_len()), |_| rng.random_range(-1.0..1.0));
        let e = Array::from_shape_fn((1, c.in_len()), |_| rng.random_range(-1.0..1.0));
        let w = Array::from_shape_fn((c.patch_len(), c.out_c), |_| rng.random_range(-1.0..1.0));
        let b = Array::zeros(c.out_c);
        let g = Array::from_shape_fn((1, c.out_len()), |_| rng.random_range(-1.0..1.0));
        let (_, cols) = c.forward(x.view(), w.view(), b.view());
        let mut dw = Array2::zeros(w.dim());
        let mut db = Array::zeros(c.out_c);
        let dx = c.backward(cols.view(), g.view(), w.view(), dw.view_mut(), db.view_mut(), true).unwrap();
        let (out_e, _) = c.forward(e.view(), w.view(), b.view());
        let lhs: f64 = (&dx * &e).sum();
        let rhs: f64 = (&out_e * &g).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
