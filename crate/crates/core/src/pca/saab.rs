use super::{dot32, symmetric_eigen, to_f32, zero_floor, Covariance, Rows, SampleSource};
use crate::error::{Error, Result};

/// One Saab transform: a DC (local mean) channel plus PCA kernels fitted to
/// the DC-removed residual.
///
/// Channel 0 of every response is the DC channel; channel `k >= 1` is AC
/// kernel `k - 1`. AC kernels are sorted by descending eigenvalue, so low
/// channel indices hold the low-frequency content.
#[derive(Debug, Clone, PartialEq)]
pub struct SaabNode {
    pub(crate) input_dim: usize,
    pub(crate) mean: Vec<f32>,
    /// `n_ac x input_dim`, row-major.
    pub(crate) ac_kernels: Vec<f32>,
    pub(crate) eigenvalues: Vec<f32>,
    pub(crate) dc_variance: f32,
    pub(crate) bias: f32,
    /// Fraction of root energy reaching this node.
    pub(crate) energy: f32,
}

impl SaabNode {
    /// Fits a node. The residual covariance is diagonalized inside the
    /// orthogonal complement of the constant vector, so every AC kernel is
    /// orthogonal to the DC kernel by construction and there are exactly
    /// `input_dim - 1` of them.
    pub fn fit(src: &dyn SampleSource) -> Result<Self> {
        let d = src.dim();
        if d < 2 {
            return Err(Error::Dimension(format!("Saab input dim must be >= 2, got {d}")));
        }
        let cov = Covariance::estimate(src)?;
        let c = &cov.matrix;
        let basis = complement_basis(d);

        // dc_variance = u' C u with u = 1/sqrt(d)
        let dc_variance = c.iter().sum::<f64>() / d as f64;

        // Reduced covariance B' C B, (d-1) x (d-1).
        let m = d - 1;
        let mut cb = vec![0.0; d * m];
        for i in 0..d {
            for j in 0..m {
                cb[i * m + j] = (0..d).map(|k| c[i * d + k] * basis[j][k]).sum();
            }
        }
        let mut reduced = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                reduced[a * m + b] = (0..d).map(|k| basis[a][k] * cb[k * m + b]).sum();
            }
        }
        for a in 0..m {
            for b in a + 1..m {
                let s = 0.5 * (reduced[a * m + b] + reduced[b * m + a]);
                reduced[a * m + b] = s;
                reduced[b * m + a] = s;
            }
        }
        let eig = symmetric_eigen(&reduced, m);

        let floor = zero_floor(&cov);
        let mut ac_kernels = Vec::with_capacity(m * d);
        let mut eigenvalues = Vec::with_capacity(m);
        for (value, v) in eig.values.iter().zip(&eig.vectors) {
            let mut kernel: Vec<f64> = (0..d)
                .map(|k| (0..m).map(|j| basis[j][k] * v[j]).sum())
                .collect();
            let norm = kernel.iter().map(|x| x * x).sum::<f64>().sqrt();
            kernel.iter_mut().for_each(|x| *x /= norm);
            super::fix_sign(&mut kernel);
            ac_kernels.extend(to_f32(&kernel));
            eigenvalues.push(if *value <= floor { 0.0 } else { *value as f32 });
        }

        Ok(Self {
            input_dim: d,
            mean: to_f32(&cov.mean),
            ac_kernels,
            eigenvalues,
            dc_variance: if dc_variance <= floor { 0.0 } else { dc_variance as f32 },
            bias: 0.0,
            energy: 1.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of response channels: DC plus AC kernels.
    pub fn n_channels(&self) -> usize {
        1 + self.eigenvalues.len()
    }

    pub fn n_ac(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn dc_kernel(&self) -> Vec<f64> {
        vec![1.0 / (self.input_dim as f64).sqrt(); self.input_dim]
    }

    pub fn ac_kernel(&self, k: usize) -> &[f32] {
        &self.ac_kernels[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn dc_variance(&self) -> f32 {
        self.dc_variance
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn energy(&self) -> f32 {
        self.energy
    }

    /// Variance carried by response channel `ch` on the training set.
    pub fn channel_variance(&self, ch: usize) -> f64 {
        if ch == 0 {
            self.dc_variance as f64
        } else {
            self.eigenvalues[ch - 1] as f64
        }
    }

    /// Total training variance: DC variance plus all AC eigenvalues.
    pub fn total_variance(&self) -> f64 {
        self.dc_variance as f64 + self.eigenvalues.iter().map(|&v| v as f64).sum::<f64>()
    }

    /// Responses for the requested channels of one sample vector.
    ///
    /// `residual` is scratch space of length `input_dim`.
    pub fn respond_channels(
        &self,
        x: &[f64],
        channels: &[usize],
        residual: &mut [f64],
        out: &mut [f64],
    ) {
        let d = self.input_dim;
        let mut dc = 0.0;
        let mut residual_mean = 0.0;
        for i in 0..d {
            dc += x[i];
            let r = x[i] - self.mean[i] as f64;
            residual[i] = r;
            residual_mean += r;
        }
        residual_mean /= d as f64;
        residual.iter_mut().for_each(|r| *r -= residual_mean);
        let bias = self.bias as f64;
        for (o, &ch) in out.iter_mut().zip(channels) {
            *o = bias
                + if ch == 0 {
                    dc / (d as f64).sqrt()
                } else {
                    dot32(self.ac_kernel(ch - 1), residual)
                };
        }
    }

    /// Full response vector `[dc, ac_1, ..., ac_n]` for one sample.
    pub fn respond(&self, x: &[f64]) -> Vec<f64> {
        let channels: Vec<usize> = (0..self.n_channels()).collect();
        let mut residual = vec![0.0; self.input_dim];
        let mut out = vec![0.0; channels.len()];
        self.respond_channels(x, &channels, &mut residual, &mut out);
        out
    }
}

/// Orthonormal basis of the complement of the constant direction, from the
/// Householder reflection that swaps `e_1` and `1/sqrt(d)`.
fn complement_basis(d: usize) -> Vec<Vec<f64>> {
    let u = 1.0 / (d as f64).sqrt();
    let mut w = vec![u; d];
    w[0] -= 1.0;
    let wn2: f64 = w.iter().map(|x| x * x).sum();
    (1..d)
        .map(|col| {
            (0..d)
                .map(|row| {
                    let id = if row == col { 1.0 } else { 0.0 };
                    id - 2.0 * w[row] * w[col] / wn2
                })
                .collect()
        })
        .collect()
}

/// Fits a node on row-major samples of width `dim`.
pub fn fit_saab_node(samples: &[f64], dim: usize) -> Result<SaabNode> {
    SaabNode::fit(&Rows::new(samples, dim)?)
}

/// Applies a node to row-major samples; output rows have `n_channels` entries.
pub fn apply_saab_node(node: &SaabNode, samples: &[f64]) -> Result<Vec<f64>> {
    let d = node.input_dim;
    if !samples.len().is_multiple_of(d) {
        return Err(Error::Dimension(format!(
            "samples are not rows of the node's input dim {d}"
        )));
    }
    let channels: Vec<usize> = (0..node.n_channels()).collect();
    let mut residual = vec![0.0; d];
    let mut out = vec![0.0; samples.len() / d * channels.len()];
    for (x, o) in samples.chunks_exact(d).zip(out.chunks_exact_mut(channels.len())) {
        node.respond_channels(x, &channels, &mut residual, o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn complement_basis_is_orthonormal_and_zero_mean() {
        for d in [2, 9, 27] {
            let b = complement_basis(d);
            for (i, bi) in b.iter().enumerate() {
                assert!(bi.iter().sum::<f64>().abs() < 1e-12);
                for (j, bj) in b.iter().enumerate() {
                    let dot: f64 = bi.iter().zip(bj).map(|(a, b)| a * b).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_samples_have_no_ac_energy() {
        let c = 0.3;
        let samples = vec![c; 50 * 9];
        let node = fit_saab_node(&samples, 9).unwrap();
        assert!(node.eigenvalues().iter().all(|&v| v == 0.0));
        assert_eq!(node.dc_variance(), 0.0);
        let r = node.respond(&samples[..9]);
        assert!((r[0] - c * 3.0).abs() < 1e-12);
    }

    #[test]
    fn hop1_dims_give_26_ac_kernels() {
        let node = fit_saab_node(&random_rows(300, 27, 1), 27).unwrap();
        assert_eq!(node.n_ac(), 26);
        assert_eq!(node.n_channels(), 27);
    }

    #[test]
    fn dc_kernel_is_uniform() {
        let node = fit_saab_node(&random_rows(100, 9, 2), 9).unwrap();
        assert!(node.dc_kernel().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn mean_vector_has_zero_ac_response() {
        let node = fit_saab_node(&random_rows(200, 9, 3), 9).unwrap();
        let mean: Vec<f64> = node.mean().iter().map(|&v| v as f64).collect();
        let r = node.respond(&mean);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_leaves_ac_unchanged() {
        let samples = random_rows(200, 27, 4);
        let node = fit_saab_node(&samples, 27).unwrap();
        let x = &samples[27..54];
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.7).collect();
        let (a, b) = (node.respond(x), node.respond(&shifted));
        for k in 1..a.len() {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(fit_saab_node(&[1.0, 2.0], 2), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_saab_node(&[1.0, 2.0], 1), Err(Error::Dimension(_))));
        let node = fit_saab_node(&random_rows(20, 9, 5), 9).unwrap();
        assert!(apply_saab_node(&node, &[0.0; 10]).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let s = random_rows(400, 9, 6);
        assert_eq!(fit_saab_node(&s, 9).unwrap(), fit_saab_node(&s, 9).unwrap());
    }
}
