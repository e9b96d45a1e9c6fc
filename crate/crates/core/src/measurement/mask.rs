use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Diagonal of a 0/1 selection matrix over the coefficient space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    flags: Vec<bool>,
    observed: Vec<usize>,
}

impl Mask {
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        let observed: Vec<usize> = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect();
        if observed.is_empty() {
            return Err(Error::domain("mask selects no coefficients"));
        }
        Ok(Self { flags, observed })
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new(vec![true; n])
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Indices of the observed coefficients, ascending.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn n(&self) -> usize {
        self.flags.len()
    }

    pub fn m(&self) -> usize {
        self.observed.len()
    }

    pub fn subsample<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        check_len("subsample input", self.n(), v.len())?;
        Ok(self.observed.iter().map(|&i| v[i]).collect())
    }

    /// Zero-padding right inverse of `subsample`.
    pub fn pad<T: Copy + Default>(&self, w: &[T]) -> Result<Vec<T>> {
        check_len("pad input", self.m(), w.len())?;
        let mut out = vec![T::default(); self.n()];
        for (&i, &v) in self.observed.iter().zip(w) {
            out[i] = v;
        }
        Ok(out)
    }
}

/// Mask builders for the supported measurement settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MaskKind {
    /// Column pattern over a `rows x n_cols` centered k-space, row-major.
    CartesianEquispaced {
        #[serde(default = "one")]
        rows: usize,
        n_cols: usize,
        acceleration: usize,
        center_fraction: f64,
    },
    /// Equally spaced subset of projection angles, angle-major sinogram.
    SparseView {
        n_angles_total: usize,
        n_angles_kept: usize,
        n_det: usize,
    },
    /// Observed where the sinogram is below the threshold.
    MetalTrace { sinogram: Vec<f64>, threshold: f64 },
    Explicit { flags: Vec<bool> },
}

fn one() -> usize {
    1
}

pub fn make_mask(kind: &MaskKind) -> Result<Mask> {
    match kind {
        MaskKind::CartesianEquispaced {
            rows,
            n_cols,
            acceleration,
            center_fraction,
        } => {
            let cols = cartesian_columns(*n_cols, *acceleration, *center_fraction)?;
            let mut flags = Vec::with_capacity(rows * n_cols);
            for _ in 0..*rows {
                flags.extend_from_slice(&cols);
            }
            Mask::new(flags)
        }
        MaskKind::SparseView {
            n_angles_total,
            n_angles_kept,
            n_det,
        } => {
            let kept = sparse_view_angles(*n_angles_total, *n_angles_kept)?;
            let mut flags = vec![false; n_angles_total * n_det];
            for a in kept {
                flags[a * n_det..(a + 1) * n_det].fill(true);
            }
            Mask::new(flags)
        }
        MaskKind::MetalTrace {
            sinogram,
            threshold,
        } => Mask::new(sinogram.iter().map(|&v| v < *threshold).collect()),
        MaskKind::Explicit { flags } => Mask::new(flags.clone()),
    }
}

/// Fully sampled centered block of `ceil(center_fraction * n_cols)` columns
/// around `n_cols / 2`, united with every `acceleration`-th column from 0.
pub fn cartesian_columns(n_cols: usize, acceleration: usize, center_fraction: f64) -> Result<Vec<bool>> {
    if acceleration < 1 {
        return Err(Error::domain("acceleration must be at least 1"));
    }
    if !(0.0..=1.0).contains(&center_fraction) {
        return Err(Error::domain("center fraction must lie in [0, 1]"));
    }
    if n_cols == 0 {
        return Err(Error::domain("mask needs at least one column"));
    }
    let mut cols = vec![false; n_cols];
    let center = ((center_fraction * n_cols as f64).ceil() as usize).min(n_cols);
    let start = (n_cols / 2).saturating_sub(center / 2).min(n_cols - center);
    cols[start..start + center].fill(true);
    for c in (0..n_cols).step_by(acceleration) {
        cols[c] = true;
    }
    Ok(cols)
}

/// `kept` angle indices equally spaced over `0..total`.
pub fn sparse_view_angles(total: usize, kept: usize) -> Result<Vec<usize>> {
    if kept > total {
        return Err(Error::domain(format!("cannot keep {kept} of {total} angles")));
    }
    if kept == 0 {
        return Err(Error::domain("sparse view needs at least one angle"));
    }
    Ok((0..kept).map(|j| j * total / kept).collect())
}
