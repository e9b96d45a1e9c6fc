use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use super::fourier::{Dct2d, Dft2d};
use super::radon::Radon;
use crate::error::{check_len, Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

/// Square matrix transform with a cached LU factorization.
#[derive(Debug, Clone)]
pub enum DenseTransform {
    Real {
        matrix: DMatrix<f64>,
        lu: LU<f64, Dyn, Dyn>,
    },
    Complex {
        matrix: DMatrix<C64>,
        lu: LU<C64, Dyn, Dyn>,
    },
}

impl DenseTransform {
    pub fn real(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::domain("dense transform must be square"));
        }
        let lu = matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::numerical("dense transform is singular"));
        }
        Ok(DenseTransform::Real { matrix, lu })
    }

    pub fn complex(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::domain("dense transform must be square"));
        }
        let lu = matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::numerical("dense transform is singular"));
        }
        Ok(DenseTransform::Complex { matrix, lu })
    }

    pub fn n(&self) -> usize {
        match self {
            DenseTransform::Real { matrix, .. } => matrix.nrows(),
            DenseTransform::Complex { matrix, .. } => matrix.nrows(),
        }
    }

    /// The matrix as complex entries, whatever the field.
    pub fn to_complex(&self) -> DMatrix<C64> {
        match self {
            DenseTransform::Real { matrix, .. } => matrix.map(|v| C64::new(v, 0.0)),
            DenseTransform::Complex { matrix, .. } => matrix.clone(),
        }
    }
}

/// An invertible (or, for Radon, approximately invertible) linear map from
/// signal space to coefficient space.
#[derive(Debug, Clone)]
pub enum Transform {
    Identity(usize),
    /// `(T x)_i = x[perm[i]]`.
    Permutation(Vec<usize>),
    Dct(Dct2d),
    Dft(Dft2d),
    Radon(Radon),
    Dense(DenseTransform),
}

impl Transform {
    pub fn permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::domain("not a permutation"));
            }
            seen[p] = true;
        }
        Ok(Transform::Permutation(perm))
    }

    pub fn dct(rows: usize, cols: usize) -> Self {
        Transform::Dct(Dct2d::new(rows, cols))
    }

    pub fn dft(rows: usize, cols: usize) -> Self {
        Transform::Dft(Dft2d::new(rows, cols))
    }

    /// Parallel-beam geometry with one detector bin per image column.
    pub fn radon(side: usize, n_angles: usize) -> Self {
        Transform::Radon(Radon::new(side, n_angles, side))
    }

    pub fn dense_real(matrix: DMatrix<f64>) -> Result<Self> {
        Ok(Transform::Dense(DenseTransform::real(matrix)?))
    }

    pub fn dense_complex(matrix: DMatrix<C64>) -> Result<Self> {
        Ok(Transform::Dense(DenseTransform::complex(matrix)?))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Transform::Identity(n) => *n,
            Transform::Permutation(p) => p.len(),
            Transform::Dct(d) => d.len(),
            Transform::Dft(d) => d.len(),
            Transform::Radon(r) => r.image_len(),
            Transform::Dense(d) => d.n(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Transform::Radon(r) => r.sinogram_len(),
            _ => self.input_dim(),
        }
    }

    /// Field of the coefficient (and measurement) space.
    pub fn coefficient_field(&self) -> Field {
        match self {
            Transform::Dft(_) | Transform::Dense(DenseTransform::Complex { .. }) => Field::Complex,
            _ => Field::Real,
        }
    }

    /// Field of the signal space. Only complex dense matrices act on complex signals.
    pub fn signal_field(&self) -> Field {
        match self {
            Transform::Dense(DenseTransform::Complex { .. }) => Field::Complex,
            _ => Field::Real,
        }
    }

    pub fn exact_inverse(&self) -> bool {
        !matches!(self, Transform::Radon(_))
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("transform input", self.input_dim(), x.len())?;
        Ok(match self {
            Transform::Identity(_) => x.to_vec(),
            Transform::Permutation(p) => p.iter().map(|&i| x[i]).collect(),
            Transform::Dct(d) => split_real(x, |v| d.forward(v)),
            Transform::Dft(d) => d.forward(x),
            Transform::Radon(r) => split_real(x, |v| r.forward(v, None)),
            Transform::Dense(DenseTransform::Real { matrix, .. }) => {
                split_real(x, |v| (matrix * DVector::from_column_slice(v)).as_slice().to_vec())
            }
            Transform::Dense(DenseTransform::Complex { matrix, .. }) => {
                (matrix * DVector::from_column_slice(x)).as_slice().to_vec()
            }
        })
    }

    /// Exact inverse, or filtered back projection for Radon.
    pub fn apply_inverse(&self, v: &[C64]) -> Result<Vec<C64>> {
        check_len("inverse transform input", self.output_dim(), v.len())?;
        Ok(match self {
            Transform::Identity(_) => v.to_vec(),
            Transform::Permutation(p) => {
                let mut out = vec![C64::default(); p.len()];
                for (vi, &i) in v.iter().zip(p) {
                    out[i] = *vi;
                }
                out
            }
            Transform::Dct(d) => split_real(v, |w| d.inverse(w)),
            Transform::Dft(d) => d.inverse(v),
            Transform::Radon(r) => split_real(v, |w| r.fbp(w)),
            Transform::Dense(DenseTransform::Real { lu, .. }) => split_real(v, |w| {
                lu.solve(&DVector::from_column_slice(w))
                    .expect("LU was checked invertible")
                    .as_slice()
                    .to_vec()
            }),
            Transform::Dense(DenseTransform::Complex { lu, .. }) => lu
                .solve(&DVector::from_column_slice(v))
                .expect("LU was checked invertible")
                .as_slice()
                .to_vec(),
        })
    }

    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<C64>> {
        self.apply(&to_complex(x))
    }

    /// `T x` restricted to the flagged coefficients. Radon only traces the
    /// rays of angles with at least one observed bin.
    pub(crate) fn apply_observed(&self, x: &[C64], flags: &[bool]) -> Result<Vec<C64>> {
        match self {
            Transform::Radon(r) => {
                check_len("transform input", self.input_dim(), x.len())?;
                let angles: Vec<bool> = flags.chunks(r.n_det()).map(|row| row.iter().any(|&f| f)).collect();
                Ok(split_real(x, |v| r.forward(v, Some(&angles))))
            }
            _ => self.apply(x),
        }
    }
}

pub fn to_complex(x: &[f64]) -> Vec<C64> {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}

pub fn real_part(x: &[C64]) -> Vec<f64> {
    x.iter().map(|z| z.re).collect()
}

/// Applies a real linear map to real and imaginary parts separately.
fn split_real(x: &[C64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<C64> {
    let re: Vec<f64> = x.iter().map(|z| z.re).collect();
    let out_re = f(&re);
    if x.iter().all(|z| z.im == 0.0) {
        return out_re.into_iter().map(|r| C64::new(r, 0.0)).collect();
    }
    let im: Vec<f64> = x.iter().map(|z| z.im).collect();
    let out_im = f(&im);
    out_re.into_iter().zip(out_im).map(|(r, i)| C64::new(r, i)).collect()
}
