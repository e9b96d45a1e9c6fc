//! Forward diffusion schedules with closed-form Gaussian transitions.
//!
//! Both schedules have transition kernels `x_t | x_0 ~ N(alpha(t) x_0, beta(t)^2 I)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeKind {
    /// Variance exploding: no drift, geometric noise scale.
    Ve,
    /// Variance preserving with a linear beta schedule.
    Vp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSchedule {
    pub kind: SdeKind,
    #[serde(default = "default_sigma_min")]
    pub ve_sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub ve_sigma_max: f64,
    #[serde(default = "default_beta_min")]
    pub vp_beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub vp_beta_max: f64,
}

fn default_sigma_min() -> f64 {
    0.01
}
fn default_sigma_max() -> f64 {
    10.0
}
fn default_beta_min() -> f64 {
    0.1
}
fn default_beta_max() -> f64 {
    20.0
}

impl Default for SdeSchedule {
    fn default() -> Self {
        Self::ve(default_sigma_min(), default_sigma_max()).unwrap()
    }
}

impl SdeSchedule {
    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let s = SdeSchedule {
            kind: SdeKind::Ve,
            ve_sigma_min: sigma_min,
            ve_sigma_max: sigma_max,
            vp_beta_min: default_beta_min(),
            vp_beta_max: default_beta_max(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn vp(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = SdeSchedule {
            kind: SdeKind::Vp,
            ve_sigma_min: default_sigma_min(),
            ve_sigma_max: default_sigma_max(),
            vp_beta_min: beta_min,
            vp_beta_max: beta_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SdeKind::Ve => {
                self.ve_sigma_min > 0.0
                    && self.ve_sigma_max > self.ve_sigma_min
                    && self.ve_sigma_max.is_finite()
            }
            SdeKind::Vp => {
                self.vp_beta_min > 0.0
                    && self.vp_beta_max > self.vp_beta_min
                    && self.vp_beta_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid schedule parameters: {self:?}")))
        }
    }

    /// `(alpha(t), beta(t))` of the transition kernel.
    pub fn marginal_params(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok(match self.kind {
            SdeKind::Ve => (1.0, self.ve_sigma(t)),
            SdeKind::Vp => {
                let alpha = self.vp_log_alpha(t).exp();
                // 1 - alpha^2 = -expm1(2 log alpha), accurate near t = 0
                let beta = (-(2.0 * self.vp_log_alpha(t)).exp_m1()).max(0.0).sqrt();
                (alpha, beta)
            }
        })
    }

    /// Drift coefficient `f(t)` and diffusion coefficient `g(t)`.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok(match self.kind {
            SdeKind::Ve => {
                let ratio = (self.ve_sigma_max / self.ve_sigma_min).ln();
                (0.0, self.ve_sigma(t) * (2.0 * ratio).sqrt())
            }
            SdeKind::Vp => {
                let b = self.vp_beta_bar(t);
                (-0.5 * b, b.sqrt())
            }
        })
    }

    /// Standard deviation of the terminal noise distribution.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Ve => self.ve_sigma_max,
            SdeKind::Vp => 1.0,
        }
    }

    /// Draws `x_1` from the terminal noise distribution.
    pub fn sample_prior(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let s = self.prior_std();
        (0..n).map(|_| s * standard_normal(rng)).collect()
    }

    /// Draws `x_t ~ N(alpha(t) x0, beta(t)^2 I)`.
    pub fn perturb(&self, x0: &[f64], t: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let (alpha, beta) = self.marginal_params(t)?;
        Ok(x0
            .iter()
            .map(|&x| alpha * x + beta * standard_normal(rng))
            .collect())
    }

    fn ve_sigma(&self, t: f64) -> f64 {
        self.ve_sigma_min * (self.ve_sigma_max / self.ve_sigma_min).powf(t)
    }

    fn vp_beta_bar(&self, t: f64) -> f64 {
        self.vp_beta_min + t * (self.vp_beta_max - self.vp_beta_min)
    }

    fn vp_log_alpha(&self, t: f64) -> f64 {
        -0.25 * t * t * (self.vp_beta_max - self.vp_beta_min) - 0.5 * t * self.vp_beta_min
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::domain(format!("time {t} outside [0, 1]")))
    }
}
