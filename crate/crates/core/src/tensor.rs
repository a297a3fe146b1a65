//! Dense `(h, w, c)` tensors, stride-1 window extraction and 2x2 max pooling.
//!
//! All data is stored row-major with the channel index varying fastest, so the
//! value at `(y, x, c)` lives at `(y * width + x) * channels + c`. Block vectors
//! produced by [`extract_windows`] use the same order inside the block.

use crate::error::{Error, Result};

/// Height x width x channels array stored row-major in `(h, w, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Input patch. Values are normalized to `[0, 1]` at ingestion.
pub type PatchTensor = Tensor3<f32>;

/// Response map produced by a hop.
pub type FeatureMap = Tensor3<f64>;

impl<T: Copy> Tensor3<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} tensor needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Copies one channel out as a row-major `h x w` vector.
    pub fn channel_plane(&self, c: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Writes the `kh x kw x C` block anchored at `(y, x)` into `out`,
    /// row-major over `(dy, dx, c)`.
    #[inline]
    pub fn block_into(&self, y: usize, x: usize, kh: usize, kw: usize, out: &mut [T]) {
        let row_len = kw * self.channels;
        for dy in 0..kh {
            let start = ((y + dy) * self.width + x) * self.channels;
            out[dy * row_len..(dy + 1) * row_len]
                .copy_from_slice(&self.data[start..start + row_len]);
        }
    }

    pub(crate) fn check_kernel(&self, kh: usize, kw: usize) -> Result<()> {
        if kh == 0 || kw == 0 || kh > self.height || kw > self.width {
            return Err(Error::Dimension(format!(
                "{kh}x{kw} kernel does not fit a {}x{} input",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Grid of flattened block vectors, one per valid stride-1 anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedTensor<T> {
    pub out_height: usize,
    pub out_width: usize,
    pub vector_dim: usize,
    pub data: Vec<T>,
}

impl<T> WindowedTensor<T> {
    pub fn vector(&self, i: usize, j: usize) -> &[T] {
        let start = (i * self.out_width + j) * self.vector_dim;
        &self.data[start..start + self.vector_dim]
    }

    pub fn len(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collects every `kh x kw` block (stride 1, no padding) as a flat vector.
pub fn extract_windows<T: Copy + Default>(
    t: &Tensor3<T>,
    kh: usize,
    kw: usize,
) -> Result<WindowedTensor<T>> {
    t.check_kernel(kh, kw)?;
    let out_height = t.height - kh + 1;
    let out_width = t.width - kw + 1;
    let vector_dim = kh * kw * t.channels;
    let mut data = vec![T::default(); out_height * out_width * vector_dim];
    for (n, chunk) in data.chunks_exact_mut(vector_dim).enumerate() {
        t.block_into(n / out_width, n % out_width, kh, kw, chunk);
    }
    Ok(WindowedTensor {
        out_height,
        out_width,
        vector_dim,
        data,
    })
}

/// Output side length of ceil-mode 2x2 pooling.
pub fn pooled_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Non-overlapping 2x2 max pooling per channel. Odd trailing rows and columns
/// form partial windows (ceil mode), so 13x13 pools to 7x7.
pub fn max_pool<T: Copy + PartialOrd>(t: &Tensor3<T>) -> Tensor3<T> {
    let oh = pooled_len(t.height);
    let ow = pooled_len(t.width);
    let c = t.channels;
    let mut data = Vec::with_capacity(oh * ow * c);
    for py in 0..oh {
        let y0 = 2 * py;
        let y1 = (y0 + 2).min(t.height);
        for px in 0..ow {
            let x0 = 2 * px;
            let x1 = (x0 + 2).min(t.width);
            for ch in 0..c {
                let mut best = t.get(y0, x0, ch);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = t.get(y, x, ch);
                        if v > best {
                            best = v;
                        }
                    }
                }
                data.push(best);
            }
        }
    }
    Tensor3 {
        height: oh,
        width: ow,
        channels: c,
        data,
    }
}

/// Pools a single row-major `h x w` plane.
pub(crate) fn max_pool_plane(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let oh = pooled_len(h);
    let ow = pooled_len(w);
    let mut out = Vec::with_capacity(oh * ow);
    for py in 0..oh {
        let y1 = (2 * py + 2).min(h);
        for px in 0..ow {
            let x1 = (2 * px + 2).min(w);
            let mut best = f64::NEG_INFINITY;
            for y in 2 * py..y1 {
                for &v in &plane[y * w + 2 * px..y * w + x1] {
                    if v > best {
                        best = v;
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn rgb_patch_gives_27_dim_windows() {
        let t = PatchTensor::filled(32, 32, 3, 0.5);
        let w = extract_windows(&t, 3, 3).unwrap();
        assert_eq!((w.out_height, w.out_width, w.vector_dim), (30, 30, 27));
    }

    #[test]
    fn identity_window_is_row_major() {
        let t = Tensor3::new(3, 3, 1, (0..9).map(|v| v as f64).collect()).unwrap();
        let w = extract_windows(&t, 3, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.vector(0, 0), &[0., 1., 2., 3., 4., 5., 6., 7., 8.]);
    }

    #[test]
    fn windows_match_nested_loop_gather() {
        let t = random_tensor(4, 4, 2, 7);
        let w = extract_windows(&t, 2, 2).unwrap();
        assert_eq!((w.out_height, w.out_width, w.vector_dim), (3, 3, 8));
        for i in 0..3 {
            for j in 0..3 {
                let mut expected = Vec::new();
                for dy in 0..2 {
                    for dx in 0..2 {
                        for c in 0..2 {
                            expected.push(t.get(i + dy, j + dx, c));
                        }
                    }
                }
                assert_eq!(w.vector(i, j), expected.as_slice());
            }
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let t = PatchTensor::filled(2, 5, 1, 0.0);
        assert!(matches!(extract_windows(&t, 3, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn pooling_halves_with_ceil() {
        let t = FeatureMap::filled(30, 30, 4, 1.0);
        assert_eq!(max_pool(&t).shape(), (15, 15, 4));
        let t = FeatureMap::filled(13, 13, 1, 1.0);
        assert_eq!(max_pool(&t).shape(), (7, 7, 1));
        let t = FeatureMap::filled(5, 5, 1, 1.0);
        assert_eq!(max_pool(&t).shape(), (3, 3, 1));
        let t = FeatureMap::filled(1, 1, 2, 1.0);
        assert_eq!(max_pool(&t).shape(), (1, 1, 2));
    }

    #[test]
    fn constant_tensor_pools_to_constant() {
        let t = FeatureMap::filled(7, 6, 2, -0.25);
        let p = max_pool(&t);
        assert!(p.data().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn odd_pool_matches_exhaustive_max() {
        let t = random_tensor(13, 13, 1, 3);
        let p = max_pool(&t);
        for py in 0..7 {
            for px in 0..7 {
                let mut best = f64::NEG_INFINITY;
                for y in 0..13 {
                    for x in 0..13 {
                        if y / 2 == py && x / 2 == px {
                            best = best.max(t.get(y, x, 0));
                        }
                    }
                }
                assert_eq!(p.get(py, px, 0), best);
            }
        }
        let plane = t.channel_plane(0);
        assert_eq!(max_pool_plane(&plane, 13, 13), p.into_data());
    }

    #[test]
    fn cascade_shape_chain() {
        let mut side = 32;
        let mut pooled = Vec::new();
        for _ in 0..3 {
            side = pooled_len(side - 3 + 1);
            pooled.push(side * side);
        }
        assert_eq!(pooled, vec![225, 49, 9]);
    }

    proptest! {
        #[test]
        fn windows_are_input_slices(h in 1usize..7, w in 1usize..7, c in 1usize..4,
                                    kh in 1usize..4, kw in 1usize..4, seed in any::<u64>()) {
            prop_assume!(kh <= h && kw <= w);
            let t = random_tensor(h, w, c, seed);
            let win = extract_windows(&t, kh, kw).unwrap();
            prop_assert_eq!(win.out_height, h - kh + 1);
            prop_assert_eq!(win.out_width, w - kw + 1);
            for i in 0..win.out_height {
                for j in 0..win.out_width {
                    let v = win.vector(i, j);
                    let mut n = 0;
                    for dy in 0..kh { for dx in 0..kw { for ch in 0..c {
                        prop_assert_eq!(v[n], t.get(i + dy, j + dx, ch));
                        n += 1;
                    }}}
                }
            }
        }

        #[test]
        fn pooling_is_monotone(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            let a = random_tensor(h, w, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let b = Tensor3::new(h, w, 2,
                a.data().iter().map(|v| v + rng.gen::<f64>()).collect()).unwrap();
            let (pa, pb) = (max_pool(&a), max_pool(&b));
            prop_assert!(pa.data().iter().zip(pb.data()).all(|(x, y)| x <= y));
        }
    }
}
