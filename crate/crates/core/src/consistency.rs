//! Measurement diffusion and the proximal data-consistency step.
//!
//! With `A = P(mask) T`, the step
//!
//! ```text
//! x' = argmin_z (1 - lambda) |z - x|_T^2 + lambda min_{u : A u = y} |z - u|_T^2
//! ```
//!
//! where `|a|_T = |T a|_2`, has the closed form
//! `x' = T^-1 [lambda pad(y) + (1 - lambda) M T x + (I - M) T x]`, i.e. the
//! observed coefficients of `T x` move a fraction `lambda` of the way toward
//! `y` and everything else is untouched. It is evaluated here as the
//! algebraically identical `x + lambda T^-1 pad(y - A x)`, which only needs
//! the observed coefficients of `T x` and keeps the unobserved part exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::measurement::{real_part, to_complex, Field, MeasurementOperator, C64};
use crate::rng::{standard_normal, Rng};
use crate::sde::SdeSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    lambda: f64,
}

impl ConsistencyParams {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::domain(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// Draws `y_t = alpha(t) y + beta(t) A z` with `z ~ N(0, I)` in signal space.
pub fn sample_y_t(
    op: &MeasurementOperator,
    schedule: &SdeSchedule,
    y: &[C64],
    t: f64,
    rng: &mut Rng,
) -> Result<Vec<C64>> {
    check_len("measurement", op.m(), y.len())?;
    let (alpha, beta) = schedule.marginal_params(t)?;
    if beta == 0.0 {
        return Ok(y.iter().map(|v| v * alpha).collect());
    }
    let z: Vec<C64> = match op.transform().signal_field() {
        Field::Real => (0..op.n()).map(|_| C64::new(standard_normal(rng), 0.0)).collect(),
        Field::Complex => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (0..op.n())
                .map(|_| C64::new(s * standard_normal(rng), s * standard_normal(rng)))
                .collect()
        }
    };
    let az = op.apply_a(&z)?;
    Ok(y.iter().zip(az).map(|(v, w)| v * alpha + w * beta).collect())
}

/// Closed-form proximal consistency step on a (possibly complex) signal.
pub fn consistency_step(
    op: &MeasurementOperator,
    x_hat: &[C64],
    y_hat: &[C64],
    lambda: f64,
) -> Result<Vec<C64>> {
    Ok(consistency_step_with_residual(op, x_hat, y_hat, lambda)?.0)
}

/// Same as [`consistency_step`] on a real signal. Transforms with complex
/// coefficients (the DFT) yield a complex update whose real part is kept.
pub fn consistency_step_real(
    op: &MeasurementOperator,
    x_hat: &[f64],
    y_hat: &[C64],
    lambda: f64,
) -> Result<Vec<f64>> {
    Ok(consistency_step_real_with_residual(op, x_hat, y_hat, lambda)?.0)
}

/// Also returns `|A x_hat - y_hat|_2`, the residual before the step.
pub fn consistency_step_with_residual(
    op: &MeasurementOperator,
    x_hat: &[C64],
    y_hat: &[C64],
    lambda: f64,
) -> Result<(Vec<C64>, f64)> {
    check_lambda(lambda)?;
    check_len("consistency signal", op.n(), x_hat.len())?;
    check_len("consistency measurement", op.m(), y_hat.len())?;
    let ax = op.apply_a(x_hat)?;
    let resid: Vec<C64> = y_hat.iter().zip(&ax).map(|(y, a)| y - a).collect();
    let rnorm = resid.iter().map(|r| r.norm_sqr()).sum::<f64>().sqrt();
    if lambda == 0.0 {
        return Ok((x_hat.to_vec(), rnorm));
    }
    let correction = op.transform().apply_inverse(&op.mask().pad(&resid)?)?;
    let out = x_hat
        .iter()
        .zip(correction)
        .map(|(x, c)| x + c * lambda)
        .collect();
    Ok((out, rnorm))
}

pub fn consistency_step_real_with_residual(
    op: &MeasurementOperator,
    x_hat: &[f64],
    y_hat: &[C64],
    lambda: f64,
) -> Result<(Vec<f64>, f64)> {
    if op.transform().signal_field() != Field::Real {
        return Err(Error::domain("operator acts on complex signals"));
    }
    check_lambda(lambda)?;
    if lambda == 0.0 {
        check_len("consistency signal", op.n(), x_hat.len())?;
        check_len("consistency measurement", op.m(), y_hat.len())?;
        let r = residual_norm(op, x_hat, y_hat)?;
        return Ok((x_hat.to_vec(), r));
    }
    let (out, r) = consistency_step_with_residual(op, &to_complex(x_hat), y_hat, lambda)?;
    Ok((real_part(&out), r))
}

/// `|A x - y|_2` for a real signal.
pub fn residual_norm(op: &MeasurementOperator, x: &[f64], y: &[C64]) -> Result<f64> {
    check_len("measurement", op.m(), y.len())?;
    let ax = op.apply_a_real(x)?;
    Ok(ax.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
}

/// Largest problem the dense oracle accepts.
pub const BRUTE_FORCE_MAX_N: usize = 256;

/// Solves the proximal program directly as an equality-constrained quadratic
/// program in `(z, u)` through its dense KKT system. Independent of the
/// closed form; used as its oracle.
///
/// At `lambda = 1` the program only pins `A z = y`; the minimizer
/// nearest to `x_hat` in the `T` norm is returned, which is the
/// `lambda -> 1` limit of the unique solutions.
pub fn brute_force_proximal(
    op: &MeasurementOperator,
    x_hat: &[C64],
    y_hat: &[C64],
    lambda: f64,
) -> Result<Vec<C64>> {
    check_lambda(lambda)?;
    let n = op.n();
    check_len("oracle signal", n, x_hat.len())?;
    check_len("oracle measurement", op.m(), y_hat.len())?;
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::domain(format!("oracle limited to n <= {BRUTE_FORCE_MAX_N}")));
    }
    if !op.transform().exact_inverse() {
        return Err(Error::domain("oracle needs an exactly invertible transform"));
    }
    if lambda == 0.0 {
        return Ok(x_hat.to_vec());
    }

    // explicit T, probed column by column
    let mut t = DMatrix::<C64>::zeros(n, n);
    let mut e = vec![C64::default(); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        for (i, v) in op.transform().apply(&e)?.into_iter().enumerate() {
            t[(i, j)] = v;
        }
        e[j] = C64::default();
    }

    let is_real = t.iter().all(|v| v.im == 0.0)
        && x_hat.iter().all(|v| v.im == 0.0)
        && y_hat.iter().all(|v| v.im == 0.0);
    // Work over the reals; complex quantities use the embedding
    // a + ib -> [a; b], M -> [[Re M, -Im M], [Im M, Re M]], under which the
    // Hermitian norm becomes the Euclidean one.
    let (tr, xr, yr, obs_rows) = if is_real {
        (
            t.map(|v| v.re),
            DVector::from_iterator(n, x_hat.iter().map(|v| v.re)),
            DVector::from_iterator(op.m(), y_hat.iter().map(|v| v.re)),
            op.mask().observed().to_vec(),
        )
    } else {
        let mut tr = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let v = t[(i, j)];
                tr[(i, j)] = v.re;
                tr[(i, n + j)] = -v.im;
                tr[(n + i, j)] = v.im;
                tr[(n + i, n + j)] = v.re;
            }
        }
        let xr = DVector::from_iterator(2 * n, x_hat.iter().map(|v| v.re).chain(x_hat.iter().map(|v| v.im)));
        let yr = DVector::from_iterator(2 * op.m(), y_hat.iter().map(|v| v.re).chain(y_hat.iter().map(|v| v.im)));
        let obs = op.mask().observed();
        let rows = obs.iter().copied().chain(obs.iter().map(|&i| n + i)).collect();
        (tr, xr, yr, rows)
    };
    let d = tr.nrows();
    let c = obs_rows.len();
    let mut a = DMatrix::zeros(c, d);
    for (k, &r) in obs_rows.iter().enumerate() {
        a.row_mut(k).copy_from(&tr.row(r));
    }
    let g = tr.transpose() * &tr;
    let gx = &g * &xr;

    let (kkt, rhs) = if lambda == 1.0 {
        let mut k = DMatrix::zeros(d + c, d + c);
        k.view_mut((0, 0), (d, d)).copy_from(&g);
        k.view_mut((0, d), (d, c)).copy_from(&a.transpose());
        k.view_mut((d, 0), (c, d)).copy_from(&a);
        let mut rhs = DVector::zeros(d + c);
        rhs.rows_mut(0, d).copy_from(&gx);
        rhs.rows_mut(d, c).copy_from(&yr);
        (k, rhs)
    } else {
        let mut k = DMatrix::zeros(2 * d + c, 2 * d + c);
        k.view_mut((0, 0), (d, d)).copy_from(&g);
        k.view_mut((0, d), (d, d)).copy_from(&(&g * -lambda));
        k.view_mut((d, 0), (d, d)).copy_from(&(&g * -lambda));
        k.view_mut((d, d), (d, d)).copy_from(&(&g * lambda));
        k.view_mut((d, 2 * d), (d, c)).copy_from(&a.transpose());
        k.view_mut((2 * d, d), (c, d)).copy_from(&a);
        let mut rhs = DVector::zeros(2 * d + c);
        rhs.rows_mut(0, d).copy_from(&(gx * (1.0 - lambda)));
        rhs.rows_mut(2 * d, c).copy_from(&yr);
        (k, rhs)
    };

    let lu = kkt.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular KKT system"))?;
    // two rounds of iterative refinement; the KKT matrix squares cond(T)
    for _ in 0..2 {
        let r = &rhs - &kkt * &sol;
        if let Some(delta) = lu.solve(&r) {
            sol += delta;
        }
    }
    let z = sol.rows(0, d);
    Ok(if is_real {
        z.iter().map(|&v| C64::new(v, 0.0)).collect()
    } else {
        (0..n).map(|i| C64::new(z[i], z[n + i])).collect()
    })
}
