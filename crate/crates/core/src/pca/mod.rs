//! Covariance estimation and symmetric eigendecomposition shared by the Saab
//! transform and the spatial PCA.

mod saab;
mod spatial;

pub use saab::{apply_saab_node, fit_saab_node, SaabNode};
pub use spatial::{apply_spatial_pca, fit_spatial_pca, SpatialPca};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A collection of equal-length sample vectors, visited in fixed-size chunks.
///
/// Chunks are reduced in index order, so estimates do not depend on how many
/// worker threads process them.
pub trait SampleSource: Sync {
    fn dim(&self) -> usize;
    fn n_chunks(&self) -> usize;
    fn visit_chunk(&self, chunk: usize, f: &mut dyn FnMut(&[f64]));
}

/// Row-major `n x dim` matrix held in memory.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    data: &'a [f64],
    dim: usize,
}

const ROWS_PER_CHUNK: usize = 256;

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl SampleSource for Rows<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_chunks(&self) -> usize {
        self.len().div_ceil(ROWS_PER_CHUNK)
    }

    fn visit_chunk(&self, chunk: usize, f: &mut dyn FnMut(&[f64])) {
        let end = ((chunk + 1) * ROWS_PER_CHUNK).min(self.len());
        for i in chunk * ROWS_PER_CHUNK..end {
            f(self.row(i));
        }
    }
}

/// Sample mean and unbiased (1/(n-1)) covariance.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
}

impl Covariance {
    /// Two passes over the source: mean first, then centered outer products.
    pub fn estimate(src: &dyn SampleSource) -> Result<Self> {
        let d = src.dim();
        let chunks = src.n_chunks();

        let partial_sums: Vec<(usize, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut n = 0;
                let mut sum = vec![0.0; d];
                src.visit_chunk(c, &mut |v| {
                    n += 1;
                    for (s, x) in sum.iter_mut().zip(v) {
                        *s += x;
                    }
                });
                (n, sum)
            })
            .collect();
        let mut n = 0;
        let mut mean = vec![0.0; d];
        for (cn, sum) in &partial_sums {
            n += cn;
            for (m, s) in mean.iter_mut().zip(sum) {
                *m += s;
            }
        }
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance needs at least 2 samples, got {n}"
            )));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let partial_outer: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; d * d];
                let mut centered = vec![0.0; d];
                src.visit_chunk(c, &mut |v| {
                    for ((r, x), m) in centered.iter_mut().zip(v).zip(&mean) {
                        *r = x - m;
                    }
                    for a in 0..d {
                        let ra = centered[a];
                        let row = &mut acc[a * d..(a + 1) * d];
                        for b in a..d {
                            row[b] += ra * centered[b];
                        }
                    }
                });
                acc
            })
            .collect();
        let mut matrix = vec![0.0; d * d];
        for acc in &partial_outer {
            for (m, a) in matrix.iter_mut().zip(acc) {
                *m += a;
            }
        }
        let norm = 1.0 / (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = matrix[a * d + b] * norm;
                matrix[a * d + b] = v;
                matrix[b * d + a] = v;
            }
        }
        Ok(Self { n, mean, matrix })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.matrix[i * d + i]).sum()
    }
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[k]` pairs with `values[k]`; unit length.
    pub vectors: Vec<Vec<f64>>,
}

/// Decomposes a row-major symmetric `dim x dim` matrix.
///
/// Eigenvalues are sorted descending with ties kept in solver order; each
/// eigenvector is flipped so that its first component with magnitude above
/// 1e-9 is positive.
pub fn symmetric_eigen(matrix: &[f64], dim: usize) -> Eigen {
    let m = DMatrix::from_row_slice(dim, dim, matrix);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            fix_sign(&mut v);
            v
        })
        .collect();
    Eigen { values, vectors }
}

pub(crate) fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-9) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Eigenvalues below this fraction of the signal's second moment are zeroed.
pub(crate) const ZERO_VARIANCE_RTOL: f64 = 1e-13;

pub(crate) fn zero_floor(cov: &Covariance) -> f64 {
    let second_moment = cov.trace() + cov.mean.iter().map(|m| m * m).sum::<f64>();
    ZERO_VARIANCE_RTOL * second_moment
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[inline]
pub(crate) fn dot32(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&k, &x)| k as f64 * x).sum()
}
