use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Eigenvalues above `-EIGEN_TOL * scale` are treated as rounding noise.
const EIGEN_TOL: f64 = 1e-10;

/// Image embedding used by the Frechet distance.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn extract(&self, image: &ImageTensor) -> Vec<f64>;
}

/// Average-pools to a small grid, then applies a fixed gaussian projection
/// followed by `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection {
    grid: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl RandomProjection {
    pub fn new(grid: usize, dim: usize, seed: u64) -> Self {
        let inputs = 3 * grid * grid;
        let normal = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            grid,
            dim,
            weights: (0..dim * inputs).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    fn pooled(&self, image: &ImageTensor) -> Vec<f64> {
        let g = self.grid;
        let (c, h, w) = image.shape();
        let mut out = vec![0.0; 3 * g * g];
        let mut counts = vec![0usize; 3 * g * g];
        for ch in 0..c.min(3) {
            for y in 0..h {
                for x in 0..w {
                    let i = ch * g * g + (y * g / h) * g + x * g / w;
                    out[i] += image.get(ch, y, x) as f64;
                    counts[i] += 1;
                }
            }
        }
        for (v, n) in out.iter_mut().zip(counts) {
            if n > 0 {
                *v /= n as f64;
            }
        }
        out
    }
}

impl Default for RandomProjection {
    fn default() -> Self {
        Self::new(8, 16, 0)
    }
}

impl FeatureExtractor for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, image: &ImageTensor) -> Vec<f64> {
        let x = self.pooled(image);
        self.weights
            .chunks(x.len())
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect()
    }
}

fn moments(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Symmetric eigendecomposition with noise-level negative eigenvalues clipped.
fn clipped_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{what}: non-finite eigenvalue")));
        }
        if *v < 0.0 {
            if *v < -EIGEN_TOL * scale {
                let max = eig_max(&m);
                return Err(Error::Numerical(format!(
                    "{what}: eigenvalue {v:e} is not positive semidefinite (largest magnitude {max:e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn eig_max(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn sqrtm(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m, what)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_r - mu_f|^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2))` on unbiased moments.
///
/// The trace of the product square root is computed as
/// `Tr sqrt(sqrt(S_r) S_f sqrt(S_r))`, whose argument is symmetric.
pub fn frechet_distance(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::Validation(
            "Frechet distance needs at least two vectors per set".into(),
        ));
    }
    let dim = real[0].len();
    if dim == 0 || real.iter().chain(fake).any(|v| v.len() != dim) {
        return Err(Error::Shape(format!(
            "feature vectors must share a nonzero dimension {dim}"
        )));
    }
    if real.iter().chain(fake).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature value".into()));
    }
    let (mu_r, cov_r) = moments(real, dim);
    let (mu_f, cov_f) = moments(fake, dim);
    let root_r = sqrtm(cov_r.clone(), "real covariance")?;
    let inner = &root_r * &cov_f * &root_r;
    let eig = clipped_eigen(inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = &mu_r - &mu_f;
    let d = diff.dot(&diff) + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_closed_form() {
        let a = vec![vec![-1.0], vec![1.0]];
        let b = vec![vec![0.0], vec![2.0]];
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_sets_are_zero() {
        let a: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1, (i as f64).sin()])
            .collect();
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(frechet_distance(&a, &[vec![1.0], vec![0.0]]).is_err());
        assert!(frechet_distance(&a[..1], &a).is_err());
    }

    #[test]
    fn projection_is_deterministic_and_fixed_length() {
        let p = RandomProjection::new(4, 6, 9);
        let img = ImageTensor::from_fn(3, 16, 16, |c, y, x| ((c + y + x) % 5) as f32 / 5.0);
        let other = img.map(|v| -v);
        assert_eq!(p.extract(&img), RandomProjection::new(4, 6, 9).extract(&img));
        assert_eq!(p.extract(&img).len(), 6);
        assert_eq!(p.extract(&other).len(), p.dim());
    }
}
