use super::{dot32, symmetric_eigen, to_f32, zero_floor, Covariance, Rows, SampleSource};
use crate::error::{Error, Result};

/// PCA over flattened spatial response maps, truncated by cumulative energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPca {
    pub(crate) input_dim: usize,
    pub(crate) mean: Vec<f32>,
    /// `kept x input_dim`, row-major, eigenvalue-descending.
    pub(crate) components: Vec<f32>,
    pub(crate) eigenvalues: Vec<f32>,
    pub(crate) total_variance: f32,
    pub(crate) energy_captured: f32,
}

impl SpatialPca {
    /// Keeps the smallest number of leading components whose cumulative
    /// eigenvalue fraction reaches `energy_target`, capped at `cap` and never
    /// fewer than one.
    pub fn fit(src: &dyn SampleSource, energy_target: f64, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("spatial PCA cap must be positive".into()));
        }
        let d = src.dim();
        let cov = Covariance::estimate(src)?;
        let eig = symmetric_eigen(&cov.matrix, d);
        let floor = zero_floor(&cov);
        let values: Vec<f64> = eig
            .values
            .iter()
            .map(|&v| if v <= floor { 0.0 } else { v })
            .collect();
        let total: f64 = values.iter().sum();

        let mut kept = d;
        if total > 0.0 {
            let mut cum = 0.0;
            for (k, v) in values.iter().enumerate() {
                cum += v;
                if cum / total >= energy_target {
                    kept = k + 1;
                    break;
                }
            }
        } else {
            kept = 1;
        }
        let kept = kept.min(cap).min(d).max(1);
        let captured: f64 = values[..kept].iter().sum();
        let energy_captured = if total > 0.0 { captured / total } else { 1.0 };

        let mut components = Vec::with_capacity(kept * d);
        for v in &eig.vectors[..kept] {
            components.extend(to_f32(v));
        }
        Ok(Self {
            input_dim: d,
            mean: to_f32(&cov.mean),
            components,
            eigenvalues: to_f32(&values[..kept]),
            total_variance: total as f32,
            energy_captured: energy_captured as f32,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn kept(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn component(&self, k: usize) -> &[f32] {
        &self.components[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn energy_captured(&self) -> f32 {
        self.energy_captured
    }

    pub fn total_variance(&self) -> f32 {
        self.total_variance
    }

    /// Projects one centered sample onto the kept components.
    pub fn project_into(&self, x: &[f64], centered: &mut [f64], out: &mut [f64]) {
        for ((c, &v), &m) in centered.iter_mut().zip(x).zip(&self.mean) {
            *c = v - m as f64;
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot32(self.component(k), centered);
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut centered = vec![0.0; self.input_dim];
        let mut out = vec![0.0; self.kept()];
        self.project_into(x, &mut centered, &mut out);
        out
    }

    /// Maps coefficients back to the input space.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (k, &a) in coeffs.iter().enumerate() {
            for (xi, &c) in x.iter_mut().zip(self.component(k)) {
                *xi += a * c as f64;
            }
        }
        x
    }
}

pub fn fit_spatial_pca(
    samples: &[f64],
    dim: usize,
    energy_target: f64,
    cap: usize,
) -> Result<SpatialPca> {
    SpatialPca::fit(&Rows::new(samples, dim)?, energy_target, cap)
}

/// Row-major `n x kept` coefficients.
pub fn apply_spatial_pca(p: &SpatialPca, samples: &[f64]) -> Result<Vec<f64>> {
    let d = p.input_dim;
    if !samples.len().is_multiple_of(d) {
        return Err(Error::Dimension(format!(
            "samples are not rows of the PCA input dim {d}"
        )));
    }
    let kept = p.kept();
    let mut centered = vec![0.0; d];
    let mut out = vec![0.0; samples.len() / d * kept];
    for (x, o) in samples.chunks_exact(d).zip(out.chunks_exact_mut(kept)) {
        p.project_into(x, &mut centered, o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rank_one_data_keeps_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut data = Vec::new();
        for _ in 0..100 {
            let a: f64 = rng.sample(StandardNormal);
            data.extend(dir.iter().map(|d| 2.0 + a * d));
        }
        let p = fit_spatial_pca(&data, 20, 0.9, 10).unwrap();
        assert_eq!(p.kept(), 1);
        assert!((p.energy_captured() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn known_spectrum_low_rank_keeps_three() {
        // Variances 1.0, 0.8, 0.6 on orthogonal axes: cumulative 0.42, 0.75, 1.0.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 49;
        let mut data = Vec::new();
        for _ in 0..400 {
            let mut x = vec![0.0; d];
            for (axis, sd) in [(3usize, 1.0f64), (17, 0.8f64.sqrt()), (40, 0.6f64.sqrt())] {
                x[axis] = sd * rng.sample::<f64, _>(StandardNormal);
            }
            for v in x.iter_mut() {
                *v += 1e-4 * rng.sample::<f64, _>(StandardNormal);
            }
            data.extend(x);
        }
        let p = fit_spatial_pca(&data, d, 0.9, 25).unwrap();
        assert_eq!(p.kept(), 3);
    }

    #[test]
    fn cap_limits_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..300 * 30).map(|_| rng.gen()).collect();
        let p = fit_spatial_pca(&data, 30, 0.9, 5).unwrap();
        assert_eq!(p.kept(), 5);
        assert!(p.energy_captured() < 0.9);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 12;
        let data: Vec<f64> = (0..200 * d).map(|_| rng.gen()).collect();
        let p = fit_spatial_pca(&data, d, 1.0, d).unwrap();
        assert_eq!(p.kept(), d);
        for x in data.chunks_exact(d).take(20) {
            let back = p.reconstruct(&p.project(x));
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-5, "reconstruction error {err}");
        }
    }

    #[test]
    fn mean_projects_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..100 * 9).map(|_| rng.gen()).collect();
        let p = fit_spatial_pca(&data, 9, 0.9, 5).unwrap();
        let mean: Vec<f64> = p.mean().iter().map(|&m| m as f64).collect();
        assert!(p.project(&mean).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_data_keeps_one() {
        let p = fit_spatial_pca(&vec![0.5; 40], 4, 0.9, 3).unwrap();
        assert_eq!(p.kept(), 1);
        assert_eq!(p.energy_captured(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = fit_spatial_pca(&[0.0, 1.0, 1.0, 0.0, 0.5, 0.5], 2, 0.9, 2).unwrap();
        assert!(apply_spatial_pca(&p, &[1.0, 2.0, 3.0]).is_err());
    }
}
