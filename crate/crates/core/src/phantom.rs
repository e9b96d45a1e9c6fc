//! Synthetic test images on `[0, 1]`.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{Purpose, Rng, StreamSeed};
use crate::score::{Covariance, GaussianPrior, GmmPrior};

pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLoganLike,
    RandomEllipses,
    GmmDraw,
}

/// Ellipse in normalized coordinates `[-1, 1]^2`, `y` pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub x0: f64,
    pub y0: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const fn e(x0: f64, y0: f64, a: f64, b: f64, deg: f64, intensity: f64) -> Ellipse {
    Ellipse {
        x0,
        y0,
        a,
        b,
        theta: deg * PI / 180.0,
        intensity,
    }
}

/// Modified Shepp-Logan table with the asymmetric small features mirrored,
/// so the phantom is exactly left-right symmetric.
pub const SHEPP_LOGAN_LIKE: [Ellipse; 10] = [
    e(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    e(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    e(-0.22, 0.0, 0.11, 0.31, 18.0, -0.2),
    e(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    e(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    e(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    e(0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    e(0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
];

fn check_side(side: usize) -> Result<()> {
    if side < MIN_SIDE {
        return Err(Error::Domain(format!("phantom side must be at least {MIN_SIDE}, got {side}")));
    }
    Ok(())
}

/// Rasterizes additive ellipses at pixel centres and clamps to `[0, 1]`.
pub fn rasterize(ellipses: &[Ellipse], side: usize) -> Image {
    let half = side as f64 / 2.0;
    let c = (side as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(side * side);
    for r in 0..side {
        let y = (c - r as f64) / half;
        for col in 0..side {
            let x = (col as f64 - c) / half;
            let v: f64 = ellipses
                .iter()
                .filter(|el| el.contains(x, y))
                .map(|el| el.intensity)
                .sum();
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Image {
        rows: side,
        cols: side,
        data,
    }
}

pub fn shepp_logan_like(side: usize) -> Result<Image> {
    check_side(side)?;
    Ok(rasterize(&SHEPP_LOGAN_LIKE, side))
}

/// Three to eight random ellipses inside the unit disk.
pub fn random_ellipse_table(rng: &mut Rng) -> Vec<Ellipse> {
    let count = rng.random_range(3..=8);
    (0..count)
        .map(|_| {
            let r = 0.6 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            Ellipse {
                x0: r * phi.cos(),
                y0: r * phi.sin(),
                a: rng.random_range(0.1..0.45),
                b: rng.random_range(0.1..0.45),
                theta: rng.random_range(0.0..PI),
                intensity: rng.random_range(0.2..0.6),
            }
        })
        .collect()
}

pub fn random_ellipses(side: usize, rng: &mut Rng) -> Result<Image> {
    check_side(side)?;
    Ok(rasterize(&random_ellipse_table(rng), side))
}

pub fn gmm_draw(prior: &GmmPrior, side: usize, rng: &mut Rng) -> Result<Image> {
    check_side(side)?;
    if prior.n() != side * side {
        return Err(Error::DimensionMismatch {
            what: "gmm prior",
            expected: side * side,
            got: prior.n(),
        });
    }
    Ok(Image::square(side, prior.sample(rng))?.clamped(0.0, 1.0))
}

/// Generates a phantom from its own stream of `seed`.
pub fn generate_phantom(kind: PhantomKind, side: usize, seed: u64, prior: Option<&GmmPrior>) -> Result<Image> {
    let mut rng = StreamSeed(seed).stream(0, Purpose::Phantom);
    match kind {
        PhantomKind::SheppLoganLike => shepp_logan_like(side),
        PhantomKind::RandomEllipses => random_ellipses(side, &mut rng),
        PhantomKind::GmmDraw => {
            let prior = prior.ok_or_else(|| Error::Config("gmm_draw needs a gmm prior".into()))?;
            gmm_draw(prior, side, &mut rng)
        }
    }
}

/// Mixture prior whose component means are random-ellipse phantoms and whose
/// covariances are isotropic with standard deviation `sigma`.
pub fn ellipse_gmm_prior(side: usize, components: usize, sigma: f64, seed: u64) -> Result<GmmPrior> {
    check_side(side)?;
    if components == 0 {
        return Err(Error::Config("gmm prior needs at least one component".into()));
    }
    let mut rng = StreamSeed(seed).stream(1, Purpose::Phantom);
    let comps = (0..components)
        .map(|_| {
            let mean = random_ellipses(side, &mut rng)?.data;
            GaussianPrior::new(mean, Covariance::isotropic(side * side, sigma * sigma)?)
        })
        .collect::<Result<Vec<_>>>()?;
    GmmPrior::uniform(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn shepp_logan_is_symmetric_and_bounded() {
        for side in [16, 33, 64] {
            let img = shepp_logan_like(side).unwrap();
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            for r in 0..side {
                for c in 0..side {
                    assert!((img.get(r, c) - img.get(r, side - 1 - c)).abs() <= 1e-12);
                }
            }
            assert!(img.max() > 0.0);
        }
    }

    #[test]
    fn random_phantoms_are_reproducible() {
        let a = generate_phantom(PhantomKind::RandomEllipses, 32, 7, None).unwrap();
        let b = generate_phantom(PhantomKind::RandomEllipses, 32, 7, None).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(PhantomKind::RandomEllipses, 32, 8, None).unwrap();
        assert_ne!(a, c);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ellipse_counts() {
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let n = random_ellipse_table(&mut rng).len();
            assert!((3..=8).contains(&n));
        }
    }

    #[test]
    fn gmm_draws() {
        let prior = ellipse_gmm_prior(16, 3, 0.05, 2).unwrap();
        let a = generate_phantom(PhantomKind::GmmDraw, 16, 5, Some(&prior)).unwrap();
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, generate_phantom(PhantomKind::GmmDraw, 16, 5, Some(&prior)).unwrap());
        assert!(generate_phantom(PhantomKind::GmmDraw, 16, 5, None).is_err());
        assert!(generate_phantom(PhantomKind::GmmDraw, 32, 5, Some(&prior)).is_err());
    }

    #[test]
    fn side_too_small() {
        assert!(shepp_logan_like(15).is_err());
    }
}
