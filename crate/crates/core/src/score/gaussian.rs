use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ScoreModel;
use crate::error::{check_len, Error, Result};
use crate::rng::{normal_vec, Rng};
use crate::sde::SdeSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior covariance. Dense matrices are kept in eigen form so that the
/// perturbed covariance `alpha^2 S + beta^2 I` can be inverted for any `t`
/// without refactoring.
#[derive(Debug, Clone)]
pub enum Covariance {
    Dense {
        matrix: DMatrix<f64>,
        eigvecs: DMatrix<f64>,
        eigvals: DVector<f64>,
    },
    Diagonal(Vec<f64>),
}

impl Covariance {
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::domain("covariance must be square"));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-10 * matrix.amax().max(1.0) {
            return Err(Error::domain("covariance is not symmetric"));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(Error::domain("covariance is not positive definite"));
        }
        let eig = SymmetricEigen::new(matrix.clone());
        Ok(Covariance::Dense {
            matrix,
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
        })
    }

    pub fn diagonal(vars: Vec<f64>) -> Result<Self> {
        if vars.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::domain("diagonal covariance entries must be positive"));
        }
        Ok(Covariance::Diagonal(vars))
    }

    pub fn isotropic(n: usize, var: f64) -> Result<Self> {
        Self::diagonal(vec![var; n])
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Dense { matrix, .. } => matrix.nrows(),
            Covariance::Diagonal(v) => v.len(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Dense { matrix, .. } => matrix.clone(),
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    cov: Covariance,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        check_len("gaussian prior covariance", mean.len(), cov.dim())?;
        Ok(Self { mean, cov })
    }

    pub fn standard(n: usize) -> Self {
        Self::new(vec![0.0; n], Covariance::isotropic(n, 1.0).unwrap()).unwrap()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// Applies `(alpha^2 S + beta^2 I)^{-1}` to `r` and returns it together
    /// with `log det(alpha^2 S + beta^2 I)`.
    fn solve_perturbed(&self, alpha: f64, beta: f64, r: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (a2, b2) = (alpha * alpha, beta * beta);
        match &self.cov {
            Covariance::Diagonal(vars) => {
                let mut logdet = 0.0;
                let out = r
                    .iter()
                    .zip(vars)
                    .map(|(&ri, &v)| {
                        let c = a2 * v + b2;
                        logdet += c.ln();
                        ri / c
                    })
                    .collect();
                Ok((out, logdet))
            }
            Covariance::Dense {
                eigvecs, eigvals, ..
            } => {
                let r = DVector::from_column_slice(r);
                let mut proj = eigvecs.tr_mul(&r);
                let mut logdet = 0.0;
                for (p, &d) in proj.iter_mut().zip(eigvals.iter()) {
                    let c = a2 * d + b2;
                    if !(c > 0.0) {
                        return Err(Error::numerical("perturbed covariance is singular"));
                    }
                    logdet += c.ln();
                    *p /= c;
                }
                Ok(((eigvecs * proj).as_slice().to_vec(), logdet))
            }
        }
    }

    fn residual(&self, x: &[f64], alpha: f64) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(&xi, &m)| xi - alpha * m).collect()
    }

    /// `log N(x; alpha mu, alpha^2 S + beta^2 I)`.
    pub fn log_density(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<f64> {
        check_len("gaussian log density", self.n(), x.len())?;
        let (alpha, beta) = schedule.marginal_params(t)?;
        let r = self.residual(x, alpha);
        let (w, logdet) = self.solve_perturbed(alpha, beta, &r)?;
        let quad: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok(-0.5 * (quad + logdet + self.n() as f64 * LN_2PI))
    }

    /// Score and log density together; the mixture score needs both.
    pub(crate) fn score_and_log_density(
        &self,
        schedule: &SdeSchedule,
        x: &[f64],
        t: f64,
    ) -> Result<(Vec<f64>, f64)> {
        check_len("gaussian score", self.n(), x.len())?;
        let (alpha, beta) = schedule.marginal_params(t)?;
        let r = self.residual(x, alpha);
        let (w, logdet) = self.solve_perturbed(alpha, beta, &r)?;
        let quad: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
        let score = w.into_iter().map(|v| -v).collect();
        Ok((score, -0.5 * (quad + logdet + self.n() as f64 * LN_2PI)))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z = normal_vec(rng, self.n());
        match &self.cov {
            Covariance::Diagonal(vars) => z
                .iter()
                .zip(vars)
                .zip(&self.mean)
                .map(|((zi, v), m)| m + v.sqrt() * zi)
                .collect(),
            Covariance::Dense {
                eigvecs, eigvals, ..
            } => {
                let scaled = DVector::from_iterator(
                    self.n(),
                    z.iter().zip(eigvals.iter()).map(|(zi, d)| zi * d.max(0.0).sqrt()),
                );
                let v = eigvecs * scaled;
                v.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
            }
        }
    }
}

impl ScoreModel for GaussianPrior {
    fn dim(&self) -> Option<usize> {
        Some(self.n())
    }

    /// `-(alpha^2 S + beta^2 I)^{-1} (x - alpha mu)`.
    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len("gaussian score", self.n(), x.len())?;
        let (alpha, beta) = schedule.marginal_params(t)?;
        let r = self.residual(x, alpha);
        let (w, _) = self.solve_perturbed(alpha, beta, &r)?;
        Ok(w.into_iter().map(|v| -v).collect())
    }
}
