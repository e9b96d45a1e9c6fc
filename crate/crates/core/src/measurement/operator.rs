use nalgebra::DMatrix;

use super::mask::Mask;
use super::transform::{to_complex, Field, Transform, C64};
use crate::error::{check_len, Error, Result};
use crate::rng::{standard_normal, Rng};

/// `A = P(mask) T` together with the std of additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    transform: Transform,
    mask: Mask,
    noise_std: f64,
}

impl MeasurementOperator {
    pub fn new(transform: Transform, mask: Mask, noise_std: f64) -> Result<Self> {
        check_len("mask length", transform.output_dim(), mask.n())?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::domain("noise std must be finite and nonnegative"));
        }
        Ok(Self {
            transform,
            mask,
            noise_std,
        })
    }

    /// Realizes a full-rank `m x n` matrix as `P(mask) T` by completing its
    /// rows with an orthonormal basis of its null space. The completion is
    /// orthogonal to the measured rows, so unobserved coefficients are
    /// uncorrelated with observed ones under an isotropic prior.
    pub fn from_matrix(a: &DMatrix<f64>, noise_std: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m > n {
            return Err(Error::domain(format!("need 1 <= m <= n, got {m} x {n}")));
        }
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, m).copy_from(a);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::numerical("SVD failed"))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let smax = svd.singular_values[order[0]];
        if svd.singular_values[order[m - 1]] <= 1e-10 * smax.max(1.0) {
            return Err(Error::domain("matrix is rank deficient"));
        }
        let mut t = DMatrix::zeros(n, n);
        t.rows_mut(0, m).copy_from(a);
        for (k, &idx) in order[m..].iter().enumerate() {
            t.row_mut(m + k).copy_from(&v_t.row(idx));
        }
        let mut flags = vec![false; n];
        flags[..m].fill(true);
        Self::new(Transform::dense_real(t)?, Mask::new(flags)?, noise_std)
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn with_noise(&self, noise_std: f64) -> Result<Self> {
        Self::new(self.transform.clone(), self.mask.clone(), noise_std)
    }

    pub fn n(&self) -> usize {
        self.transform.input_dim()
    }

    pub fn m(&self) -> usize {
        self.mask.m()
    }

    /// `A x = subsample(mask, T x)`, noiseless.
    pub fn apply_a(&self, x: &[C64]) -> Result<Vec<C64>> {
        let coeffs = self.transform.apply_observed(x, self.mask.flags())?;
        self.mask.subsample(&coeffs)
    }

    pub fn apply_a_real(&self, x: &[f64]) -> Result<Vec<C64>> {
        self.apply_a(&to_complex(x))
    }

    /// `A x + eps`, with independent real and imaginary noise for complex
    /// coefficient spaces.
    pub fn measure(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<C64>> {
        let mut y = self.apply_a_real(x)?;
        if self.noise_std > 0.0 {
            let complex = self.transform.coefficient_field() == Field::Complex;
            for v in y.iter_mut() {
                v.re += self.noise_std * standard_normal(rng);
                if complex {
                    v.im += self.noise_std * standard_normal(rng);
                }
            }
        }
        Ok(y)
    }

    /// Dense `m x n` matrix of `A`, probed column by column.
    pub fn explicit_matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.n();
        if n > 4096 {
            return Err(Error::domain("explicit matrix only for n <= 4096"));
        }
        let mut out = DMatrix::zeros(self.m(), n);
        let mut e = vec![C64::default(); n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply_a(&e)?;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
            e[j] = C64::default();
        }
        Ok(out)
    }
}
