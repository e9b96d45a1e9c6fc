//! Score functions `s(x, t) ~ grad_x log p_t(x)`.

mod gaussian;
mod gmm;
mod parametric;

pub use gaussian::{Covariance, GaussianPrior};
pub use gmm::GmmPrior;
pub use parametric::{
    draw_dsm_noise, dsm_loss, dsm_loss_and_grad, dsm_loss_with, gaussian_dataset, train_dsm, DsmDraw,
    ParametricScoreModel, ScoreFamily, TrainConfig, TrainOutcome, T_EPS,
};

use crate::error::Result;
use crate::sde::SdeSchedule;

/// Anything that can evaluate a time-dependent score.
pub trait ScoreModel: Send + Sync {
    /// Signal dimension the model accepts, or `None` if it applies to any.
    fn dim(&self) -> Option<usize>;

    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<S: ScoreModel + ?Sized> ScoreModel for &S {
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }

    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).score(schedule, x, t)
    }
}

impl<S: ScoreModel + ?Sized> ScoreModel for Box<S> {
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }

    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).score(schedule, x, t)
    }
}
