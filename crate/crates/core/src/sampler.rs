//! Iterative samplers: Euler-Maruyama, annealed Langevin dynamics and
//! predictor-corrector, each in unconditional and conditional form.
//!
//! The conditional form runs the identical update sequence, but before every
//! predictor and every corrector update it draws `y_t ~ p_t(y_t | y)` and
//! replaces the iterate by the proximal consistency step toward `y_t`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consistency::{consistency_step_real, consistency_step_real_with_residual, sample_y_t};
use crate::error::{check_len, Error, Result};
use crate::measurement::{MeasurementOperator, C64};
use crate::rng::{fill_normal, Purpose, Rng, StreamSeed};
use crate::score::ScoreModel;
use crate::sde::SdeSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EulerMaruyama,
    #[serde(rename = "ald")]
    Ald,
    #[serde(rename = "pc")]
    PredictorCorrector,
}

/// Where the score is evaluated after a consistency step: at the projected
/// iterate, or at the iterate as it was before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAt {
    #[default]
    Projected,
    Preimage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub method: Method,
    pub n_steps: usize,
    #[serde(default = "default_corrector_steps")]
    pub corrector_steps_per_scale: usize,
    #[serde(default = "default_snr")]
    pub snr_eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub final_projection: bool,
    #[serde(default)]
    pub score_at: ScoreAt,
    #[serde(default)]
    pub seed: u64,
}

fn default_corrector_steps() -> usize {
    1
}
fn default_snr() -> f64 {
    0.16
}
fn default_lambda() -> f64 {
    1.0
}

impl SamplerConfig {
    pub fn pc(n_steps: usize, corrector_steps: usize, snr_eta: f64) -> Self {
        Self {
            method: Method::PredictorCorrector,
            n_steps,
            corrector_steps_per_scale: corrector_steps,
            snr_eta,
            lambda: 1.0,
            final_projection: false,
            score_at: ScoreAt::Projected,
            seed: 0,
        }
    }

    pub fn ald(n_steps: usize, corrector_steps: usize, snr_eta: f64) -> Self {
        Self {
            method: Method::Ald,
            ..Self::pc(n_steps, corrector_steps, snr_eta)
        }
    }

    pub fn euler_maruyama(n_steps: usize) -> Self {
        Self {
            method: Method::EulerMaruyama,
            corrector_steps_per_scale: 0,
            ..Self::pc(n_steps, 0, default_snr())
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_final_projection(mut self, on: bool) -> Self {
        self.final_projection = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.method != Method::EulerMaruyama && !(self.snr_eta > 0.0 && self.snr_eta.is_finite()) {
            return Err(Error::Config("snr_eta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Score evaluations a run performs: `N`, `N M` or `N (M + 1)`.
    pub fn expected_score_evaluations(&self) -> u64 {
        let n = self.n_steps as u64;
        let m = self.corrector_steps_per_scale as u64;
        match self.method {
            Method::EulerMaruyama => n,
            Method::Ald => n * m,
            Method::PredictorCorrector => n * (m + 1),
        }
    }
}

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub residual: f64,
    pub score_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub x0_hat: Vec<f64>,
    pub score_evaluations: u64,
    /// `|A x - y_t|` ahead of every consistency step; empty when unconditional.
    pub residual_trace: Vec<StepRecord>,
    /// Langevin updates skipped because the score vanished.
    pub skipped_corrector_steps: u64,
    pub wall_time: f64,
}

impl ReconResult {
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,t,residual,score_evals")?;
        for r in &self.residual_trace {
            writeln!(w, "{},{:.6},{:.9e},{}", r.step, r.t, r.residual, r.score_evaluations)?;
        }
        Ok(())
    }
}

/// `t_i = i / N` for `i = 0..=N`.
pub fn time_grid(n_steps: usize) -> Vec<f64> {
    let n = n_steps.max(1);
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Reverse-time Euler-Maruyama update from `t` to `t - dt`.
pub fn em_step(
    schedule: &SdeSchedule,
    score: &[f64],
    x_hat: &[f64],
    t: f64,
    dt: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    check_len("em score", x_hat.len(), score.len())?;
    check_len("em noise", x_hat.len(), z.len())?;
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::numerical(format!("non-finite score at t = {t}")));
    }
    let (f, g) = schedule.drift_diffusion(t)?;
    let g2dt = g * g * dt;
    let noise = g * dt.sqrt();
    Ok(x_hat
        .iter()
        .zip(score)
        .zip(z)
        .map(|((x, s), zi)| x - f * x * dt + g2dt * s + noise * zi)
        .collect())
}

/// Langevin corrector with step size `eps = 2 (eta |z| / |s|)^2`. Returns
/// `None` when the score is zero and the step is skipped.
pub fn langevin_step(score: &[f64], x_hat: &[f64], eta: f64, z: &[f64]) -> Result<Option<Vec<f64>>> {
    if !(eta > 0.0) {
        return Err(Error::domain("snr must be positive"));
    }
    check_len("langevin score", x_hat.len(), score.len())?;
    check_len("langevin noise", x_hat.len(), z.len())?;
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::numerical("non-finite score in corrector"));
    }
    let s_norm = score.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s_norm == 0.0 {
        return Ok(None);
    }
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 2.0 * (eta * z_norm / s_norm).powi(2);
    let amp = (2.0 * eps).sqrt();
    Ok(Some(
        x_hat
            .iter()
            .zip(score)
            .zip(z)
            .map(|((x, s), zi)| x + eps * s + amp * zi)
            .collect(),
    ))
}

/// Data-consistency hook shared by the conditional sampler.
struct Conditioning<'a> {
    op: &'a MeasurementOperator,
    y: &'a [C64],
    lambda: f64,
    rng: Rng,
}

struct Run<'a, S: ScoreModel + ?Sized> {
    config: &'a SamplerConfig,
    schedule: &'a SdeSchedule,
    score: &'a S,
    cond: Option<Conditioning<'a>>,
    rng: Rng,
    evals: u64,
    skipped: u64,
    trace: Vec<StepRecord>,
    hijacks: usize,
    z: Vec<f64>,
}

impl<S: ScoreModel + ?Sized> Run<'_, S> {
    fn eval(&mut self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.evals += 1;
        let s = self.score.score(self.schedule, x, t)?;
        check_len("score output", x.len(), s.len())?;
        Ok(s)
    }

    /// Applies the consistency step (if conditional), then returns the point
    /// the score should be evaluated at alongside the new iterate.
    fn hijack(&mut self, x: Vec<f64>, t: f64) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let Some(c) = self.cond.as_mut() else {
            return Ok((x, None));
        };
        let y_t = sample_y_t(c.op, self.schedule, c.y, t, &mut c.rng)?;
        let (projected, residual) = consistency_step_real_with_residual(c.op, &x, &y_t, c.lambda)?;
        self.trace.push(StepRecord {
            step: self.hijacks,
            t,
            residual,
            score_evaluations: self.evals,
        });
        self.hijacks += 1;
        let pre = match self.config.score_at {
            ScoreAt::Projected => None,
            ScoreAt::Preimage => Some(x),
        };
        Ok((projected, pre))
    }

    fn corrector(&mut self, x: Vec<f64>, t: f64) -> Result<Vec<f64>> {
        let (x, pre) = self.hijack(x, t)?;
        let s = self.eval(pre.as_deref().unwrap_or(&x), t)?;
        fill_normal(&mut self.rng, &mut self.z);
        match langevin_step(&s, &x, self.config.snr_eta, &self.z)? {
            Some(next) => Ok(next),
            None => {
                self.skipped += 1;
                Ok(x)
            }
        }
    }

    fn predictor(&mut self, x: Vec<f64>, t: f64, dt: f64) -> Result<Vec<f64>> {
        let (x, pre) = self.hijack(x, t)?;
        let s = self.eval(pre.as_deref().unwrap_or(&x), t)?;
        fill_normal(&mut self.rng, &mut self.z);
        em_step(self.schedule, &s, &x, t, dt, &self.z)
    }

    fn run(mut self, n: usize) -> Result<ReconResult> {
        let start = Instant::now();
        let grid = time_grid(self.config.n_steps);
        let steps = self.config.n_steps;
        let dt = 1.0 / steps as f64;
        let mut x = self.schedule.sample_prior(n, &mut self.rng);
        for i in (0..steps).rev() {
            let t = grid[i + 1];
            match self.config.method {
                Method::EulerMaruyama => {
                    x = self.predictor(x, t, dt)?;
                }
                Method::Ald => {
                    for _ in 0..self.config.corrector_steps_per_scale {
                        x = self.corrector(x, t)?;
                    }
                }
                Method::PredictorCorrector => {
                    for _ in 0..self.config.corrector_steps_per_scale {
                        x = self.corrector(x, t)?;
                    }
                    x = self.predictor(x, t, dt)?;
                }
            }
        }
        if self.config.final_projection {
            if let Some(c) = &self.cond {
                if c.op.noise_std() == 0.0 {
                    x = consistency_step_real(c.op, &x, c.y, 1.0)?;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("sampler produced non-finite values"));
        }
        Ok(ReconResult {
            x0_hat: x,
            score_evaluations: self.evals,
            residual_trace: self.trace,
            skipped_corrector_steps: self.skipped,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

fn score_dim<S: ScoreModel + ?Sized>(score: &S, n: usize) -> Result<()> {
    match score.dim() {
        Some(d) => check_len("score model dimension", n, d),
        None => Ok(()),
    }
}

/// Unconditional sampling in dimension `n`. `task` selects the random
/// stream, so chains with different task indices are independent.
pub fn sample_unconditional<S: ScoreModel + ?Sized>(
    config: &SamplerConfig,
    schedule: &SdeSchedule,
    score: &S,
    n: usize,
    task: u64,
) -> Result<ReconResult> {
    config.validate()?;
    score_dim(score, n)?;
    let seed = StreamSeed(config.seed);
    Run {
        config,
        schedule,
        score,
        cond: None,
        rng: seed.stream(task, Purpose::Sampler),
        evals: 0,
        skipped: 0,
        trace: Vec::new(),
        hijacks: 0,
        z: vec![0.0; n],
    }
    .run(n)
}

/// Conditional sampling given `y = A x + eps`.
pub fn sample_conditional<S: ScoreModel + ?Sized>(
    config: &SamplerConfig,
    schedule: &SdeSchedule,
    score: &S,
    op: &MeasurementOperator,
    y: &[C64],
    task: u64,
) -> Result<ReconResult> {
    config.validate()?;
    let n = op.n();
    score_dim(score, n)?;
    check_len("measurement", op.m(), y.len())?;
    let seed = StreamSeed(config.seed);
    Run {
        config,
        schedule,
        score,
        cond: Some(Conditioning {
            op,
            y,
            lambda: config.lambda,
            rng: seed.stream(task, Purpose::MeasurementDiffusion),
        }),
        rng: seed.stream(task, Purpose::Sampler),
        evals: 0,
        skipped: 0,
        trace: Vec::new(),
        hijacks: 0,
        z: vec![0.0; n],
    }
    .run(n)
}

/// Runs `chains` independent conditional chains in parallel; chain `k` uses
/// task index `k`, so the output does not depend on the thread count.
pub fn sample_conditional_chains<S: ScoreModel + ?Sized>(
    config: &SamplerConfig,
    schedule: &SdeSchedule,
    score: &S,
    op: &MeasurementOperator,
    y: &[C64],
    chains: usize,
) -> Result<Vec<ReconResult>> {
    use rayon::prelude::*;
    (0..chains as u64)
        .into_par_iter()
        .map(|k| sample_conditional(config, schedule, score, op, y, k))
        .collect()
}

pub fn sample_unconditional_chains<S: ScoreModel + ?Sized>(
    config: &SamplerConfig,
    schedule: &SdeSchedule,
    score: &S,
    n: usize,
    chains: usize,
) -> Result<Vec<ReconResult>> {
    use rayon::prelude::*;
    (0..chains as u64)
        .into_par_iter()
        .map(|k| sample_unconditional(config, schedule, score, n, k))
        .collect()
}
