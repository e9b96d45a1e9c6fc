//! Randomized invariant checks of the operator and consistency algebra,
//! shared by the `selftest` command and the test suites.

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::consistency::{brute_force_proximal, consistency_step};
use crate::error::Result;
use crate::measurement::{to_complex, Mask, MeasurementOperator, Transform, C64};
use crate::metrics::psnr;
use crate::image::Image;
use crate::rng::{normal_vec, rng_from_seed, standard_normal, Rng};
use crate::sampler::SamplerConfig;

/// Largest condition number accepted for random dense transforms.
pub const MAX_CONDITION: f64 = 1e3;

/// A random consistency problem on a dense transform.
#[derive(Debug, Clone)]
pub struct Instance {
    pub op: MeasurementOperator,
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub lambda: f64,
}

fn condition(singular: &[f64]) -> f64 {
    let max = singular.iter().cloned().fold(0.0, f64::max);
    let min = singular.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Random dense `n x n` transform with condition number at most
/// [`MAX_CONDITION`], real or complex.
pub fn random_transform(rng: &mut Rng, n: usize, complex: bool) -> Result<Transform> {
    loop {
        if complex {
            let t = DMatrix::from_fn(n, n, |_, _| C64::new(standard_normal(rng), standard_normal(rng)));
            if condition(t.singular_values().as_slice()) <= MAX_CONDITION {
                return Transform::dense_complex(t);
            }
        } else {
            let t = DMatrix::from_fn(n, n, |_, _| standard_normal(rng));
            if condition(t.singular_values().as_slice()) <= MAX_CONDITION {
                return Transform::dense_real(t);
            }
        }
    }
}

/// Random mask over `n` entries with at least one observed entry.
pub fn random_mask(rng: &mut Rng, n: usize) -> Result<Mask> {
    let p: f64 = rng.random_range(0.1..0.9);
    let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
    if !flags.iter().any(|&f| f) {
        flags[rng.random_range(0..n)] = true;
    }
    Mask::new(flags)
}

fn random_vec(rng: &mut Rng, n: usize, complex: bool) -> Vec<C64> {
    if complex {
        (0..n).map(|_| C64::new(standard_normal(rng), standard_normal(rng))).collect()
    } else {
        to_complex(&normal_vec(rng, n))
    }
}

/// Random instance with `2 <= n <= max_n` and `lambda` uniform in `[0, 1]`.
pub fn random_instance(rng: &mut Rng, max_n: usize, complex: bool) -> Result<Instance> {
    let n = rng.random_range(2..=max_n.max(2));
    let op = MeasurementOperator::new(random_transform(rng, n, complex)?, random_mask(rng, n)?, 0.0)?;
    let x = random_vec(rng, n, complex);
    let y = random_vec(rng, op.m(), complex);
    Ok(Instance {
        op,
        x,
        y,
        lambda: rng.random_range(0.0..=1.0),
    })
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `|a - b| / |b|`, or the absolute error when `b` vanishes.
pub fn relative_error(a: &[C64], b: &[C64]) -> f64 {
    let diff: Vec<C64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&diff) / nb
    } else {
        norm(&diff)
    }
}

/// Relative disagreement between the closed-form step and the KKT oracle.
pub fn oracle_error(inst: &Instance) -> Result<f64> {
    let fast = consistency_step(&inst.op, &inst.x, &inst.y, inst.lambda)?;
    let slow = brute_force_proximal(&inst.op, &inst.x, &inst.y, inst.lambda)?;
    Ok(relative_error(&fast, &slow))
}

/// `|A x' - y|_inf / |y|_inf` after a full-strength step.
pub fn projection_error(inst: &Instance) -> Result<f64> {
    let out = consistency_step(&inst.op, &inst.x, &inst.y, 1.0)?;
    let ax = inst.op.apply_a(&out)?;
    let diff: Vec<C64> = ax.iter().zip(&inst.y).map(|(a, b)| a - b).collect();
    Ok(max_abs(&diff) / max_abs(&inst.y).max(f64::MIN_POSITIVE))
}

/// Builds `u = T^-1 (pad(y) + unobserved noise)` and returns the largest
/// deviation of `M T u` from `M pad(y)` and of `A u` from `y`.
pub fn prescribed_coefficient_error(inst: &Instance, rng: &mut Rng) -> Result<f64> {
    let mask = inst.op.mask();
    let mut coeffs = mask.pad(&inst.y)?;
    for (c, &obs) in coeffs.iter_mut().zip(mask.flags()) {
        if !obs {
            *c = C64::new(standard_normal(rng), standard_normal(rng));
        }
    }
    let u = inst.op.transform().apply_inverse(&coeffs)?;
    let tu = inst.op.transform().apply(&u)?;
    let padded = mask.pad(&inst.y)?;
    let mut worst: f64 = 0.0;
    for ((a, b), &obs) in tu.iter().zip(&padded).zip(mask.flags()) {
        if obs {
            worst = worst.max((a - b).norm());
        }
    }
    let au = inst.op.apply_a(&u)?;
    for (a, b) in au.iter().zip(&inst.y) {
        worst = worst.max((a - b).norm());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Runs a quick battery of invariant checks with the given seed.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_from_seed(seed);
    let mut checks = Vec::new();

    let mut worst_oracle: f64 = 0.0;
    let mut worst_proj: f64 = 0.0;
    let mut worst_prescribed: f64 = 0.0;
    for k in 0..60 {
        let inst = random_instance(&mut rng, 24, k % 2 == 1)?;
        worst_oracle = worst_oracle.max(oracle_error(&inst)?);
        worst_proj = worst_proj.max(projection_error(&inst)?);
        worst_prescribed = worst_prescribed.max(prescribed_coefficient_error(&inst, &mut rng)?);
    }
    checks.push(Check::new(
        "consistency_matches_oracle",
        worst_oracle <= 1e-8,
        format!("max relative error {worst_oracle:.3e}"),
    ));
    checks.push(Check::new(
        "full_strength_step_is_consistent",
        worst_proj <= 1e-9,
        format!("max relative residual {worst_proj:.3e}"),
    ));
    checks.push(Check::new(
        "masked_coefficients_determine_measurement",
        worst_prescribed <= 1e-10,
        format!("max deviation {worst_prescribed:.3e}"),
    ));

    let mask = random_mask(&mut rng, 40)?;
    let w: Vec<f64> = normal_vec(&mut rng, mask.m());
    checks.push(Check::new(
        "subsample_inverts_pad",
        mask.subsample(&mask.pad(&w)?)? == w,
        format!("{} of {} observed", mask.m(), mask.n()),
    ));

    let mut worst_unitary: f64 = 0.0;
    for t in [Transform::dct(6, 5), Transform::dft(4, 7)] {
        let x = to_complex(&normal_vec(&mut rng, t.input_dim()));
        let v = t.apply(&x)?;
        worst_unitary = worst_unitary.max((norm(&v) - norm(&x)).abs() / norm(&x));
        worst_unitary = worst_unitary.max(relative_error(&t.apply_inverse(&v)?, &x));
    }
    checks.push(Check::new(
        "fourier_transforms_are_unitary",
        worst_unitary <= 1e-12,
        format!("max error {worst_unitary:.3e}"),
    ));

    let ald = SamplerConfig::ald(700, 3, 0.16).expected_score_evaluations();
    let pc = SamplerConfig::pc(1000, 1, 0.16).expected_score_evaluations();
    checks.push(Check::new(
        "score_evaluation_accounting",
        ald == 2100 && pc == 2000,
        format!("ald {ald}, pc {pc}"),
    ));

    let a = Image::new(1, 2, vec![0.0, 1.0])?;
    let b = Image::new(1, 2, vec![0.0, 0.5])?;
    let p = psnr(&b, &a, 1.0)?;
    checks.push(Check::new(
        "psnr_reference_value",
        (p - 9.030899869919435).abs() < 1e-9,
        format!("{p:.12} dB"),
    ));
    Ok(checks)
}
