//! Small dense kernel for the Fréchet baseline: square matrices, Gaussian
//! statistics of feature vectors, a cyclic Jacobi eigensolver and the
//! symmetric PSD square root.

use serde::{Deserialize, Serialize};

use crate::data::CovarianceNorm;
use crate::error::{Error, Result};

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-8;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("matrix rows must form a square".into()));
        }
        Ok(SquareMatrix {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(M + Mᵀ) / 2`
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        out
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self[(i, i)] += value;
        }
    }

    pub fn sub(&self, other: &SquareMatrix) -> SquareMatrix {
        SquareMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).take(self.dim).collect()
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SquareMatrix::from_rows(&rows)
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.rows()
    }
}

/// Eigen-decomposition `A = V diag(values) Vᵀ`; `vectors` holds the
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
    pub sweeps: usize,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls
/// below `JACOBI_TOLERANCE` relative to the matrix norm.
pub fn jacobi_eigen(m: &SquareMatrix) -> Result<SymmetricEigen> {
    let n = m.dim();
    let mut a = m.symmetrized();
    let mut v = SquareMatrix::identity(n);
    let scale = a.frobenius_norm();
    let off_norm = |a: &SquareMatrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= JACOBI_TOLERANCE * scale || off == 0.0 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NonConvergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymmetricEigen {
        values: (0..n).map(|i| a[(i, i)]).collect(),
        vectors: v,
        sweeps,
    })
}

/// Symmetric PSD square root: `S` with `S·S ≈ m`. Eigenvalues slightly
/// below zero (roundoff) are clamped to zero.
pub fn sym_sqrt(m: &SquareMatrix) -> Result<SquareMatrix> {
    let size = 1.0 + m.frobenius_norm();
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOLERANCE * size {
        return Err(Error::Asymmetric(asym));
    }
    let eig = jacobi_eigen(m)?;
    if let Some(&worst) = eig
        .values
        .iter()
        .find(|&&l| l < -NEGATIVE_EIGEN_TOLERANCE * size)
    {
        return Err(Error::Consistency(format!(
            "matrix is not positive semidefinite (eigenvalue {worst:e})"
        )));
    }
    let n = m.dim();
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let v = &eig.vectors;
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| v[(i, k)] * roots[k] * v[(j, k)]).sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Mean and covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    pub sigma: SquareMatrix,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Adds `1e-6 · mean(diag Σ) · I` to the covariance so rank-deficient
    /// estimates (fewer vectors than dimensions) keep a usable root.
    pub fn shrunk(&self) -> GaussianStats {
        let d = self.dim();
        let mut out = self.clone();
        if d > 0 {
            let eps = 1e-6 * self.sigma.trace() / d as f64;
            out.sigma.add_diagonal(eps);
        }
        out
    }
}

/// Single-pass (Welford) mean and covariance; the covariance is
/// symmetrized after accumulation.
pub fn gaussian_stats<'a, I>(features: I, norm: CovarianceNorm) -> Result<GaussianStats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = features.into_iter();
    let first = iter.next().ok_or(Error::Empty("no feature vectors"))?;
    let d = first.len();
    let mut mean = first.to_vec();
    let mut comoment = SquareMatrix::zeros(d);
    let mut n = 1usize;
    let mut delta = vec![0.0; d];
    for x in iter {
        if x.len() != d {
            return Err(Error::dimension("feature vector", d, x.len()));
        }
        n += 1;
        for i in 0..d {
            delta[i] = x[i] - mean[i];
            mean[i] += delta[i] / n as f64;
        }
        for i in 0..d {
            let after = x[i] - mean[i];
            for j in 0..d {
                comoment[(j, i)] += delta[j] * after;
            }
        }
    }
    let denom = match norm {
        CovarianceNorm::Sample if n > 1 => (n - 1) as f64,
        _ => n as f64,
    };
    let mut sigma = comoment.symmetrized();
    sigma.data.iter_mut().for_each(|v| *v /= denom);
    Ok(GaussianStats { mu: mean, sigma, n })
}
