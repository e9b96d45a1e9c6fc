use rand::Rng as _;

use super::{GaussianPrior, ScoreModel};
use crate::error::{check_len, Error, Result};
use crate::rng::Rng;
use crate::sde::SdeSchedule;

/// Finite Gaussian mixture with closed-form perturbed scores.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    components: Vec<GaussianPrior>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianPrior>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("mixture needs at least one component"));
        }
        check_len("mixture weights", components.len(), weights.len())?;
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::domain("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("mixture weights sum to {total}, not 1")));
        }
        let n = components[0].n();
        for c in &components {
            check_len("mixture component", n, c.n())?;
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn uniform(components: Vec<GaussianPrior>) -> Result<Self> {
        let k = components.len().max(1);
        Self::new(vec![1.0 / k as f64; components.len()], components)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianPrior] {
        &self.components
    }

    pub fn n(&self) -> usize {
        self.components[0].n()
    }

    pub fn log_density(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<f64> {
        let mut logs = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            logs.push(w.ln() + c.log_density(schedule, x, t)?);
        }
        Ok(log_sum_exp(&logs))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ScoreModel for GmmPrior {
    fn dim(&self) -> Option<usize> {
        Some(self.n())
    }

    /// Responsibility-weighted average of the component scores.
    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len("mixture score", self.n(), x.len())?;
        let mut scores = Vec::with_capacity(self.weights.len());
        let mut logs = Vec::with_capacity(self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            let (s, lp) = c.score_and_log_density(schedule, x, t)?;
            scores.push(s);
            logs.push(w.ln() + lp);
        }
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            // every responsibility underflowed: use the nearest component
            let (alpha, _) = schedule.marginal_params(t)?;
            let nearest = self
                .components
                .iter()
                .map(|c| {
                    c.mean()
                        .iter()
                        .zip(x)
                        .map(|(m, xi)| (xi - alpha * m).powi(2))
                        .sum::<f64>()
                })
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            return Ok(scores.swap_remove(nearest));
        }
        let mut out = vec![0.0; x.len()];
        for (s, lp) in scores.iter().zip(&logs) {
            let r = (lp - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (o, si) in out.iter_mut().zip(s) {
                *o += r * si;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::score::Covariance;

    fn iso(mean: Vec<f64>, var: f64) -> GaussianPrior {
        let n = mean.len();
        GaussianPrior::new(mean, Covariance::isotropic(n, var).unwrap()).unwrap()
    }

    fn ve() -> SdeSchedule {
        SdeSchedule::ve(0.01, 10.0).unwrap()
    }

    #[test]
    fn single_component_matches_gaussian() {
        let g = iso(vec![0.5, -1.0], 0.3);
        let m = GmmPrior::uniform(vec![g.clone()]).unwrap();
        let x = [0.1, 0.7];
        assert_eq!(m.score(&ve(), &x, 0.3).unwrap(), g.score(&ve(), &x, 0.3).unwrap());
    }

    #[test]
    fn symmetric_mixture_vanishes_at_origin() {
        let m = GmmPrior::uniform(vec![iso(vec![2.0, 1.0], 0.1), iso(vec![-2.0, -1.0], 0.1)]).unwrap();
        for t in [0.0, 0.2, 0.7] {
            assert!(m.score(&ve(), &[0.0, 0.0], t).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
    }

    // p_t(x) = int p_0(x0) N(x; alpha x0, beta^2) dx0 by composite Simpson, then
    // central differences of log p_t.
    fn quadrature_log_pt(weights: &[f64], means: &[f64], sds: &[f64], s: &SdeSchedule, x: f64, t: f64) -> f64 {
        let (alpha, beta) = s.marginal_params(t).unwrap();
        let npdf = |v: f64, m: f64, sd: f64| (-(v - m).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let prior = |x0: f64| -> f64 {
            weights.iter().zip(means).zip(sds).map(|((w, m), sd)| w * npdf(x0, *m, *sd)).sum()
        };
        let (lo, hi, n) = (-12.0, 12.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x0 = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * prior(x0) * npdf(x, alpha * x0, beta);
        }
        (acc * h / 3.0).ln()
    }

    #[test]
    fn one_dimensional_score_matches_quadrature() {
        let weights = [0.3, 0.7];
        let means = [-1.0, 1.5];
        let sds = [0.5, 0.8];
        let m = GmmPrior::new(
            weights.to_vec(),
            vec![iso(vec![means[0]], sds[0] * sds[0]), iso(vec![means[1]], sds[1] * sds[1])],
        )
        .unwrap();
        let s = ve();
        let (x, t) = (0.3, 0.2);
        let h = 1e-4;
        let fd = (quadrature_log_pt(&weights, &means, &sds, &s, x + h, t)
            - quadrature_log_pt(&weights, &means, &sds, &s, x - h, t))
            / (2.0 * h);
        let got = m.score(&s, &[x], t).unwrap()[0];
        assert!((fd - got).abs() < 1e-6, "{fd} vs {got}");
    }

    #[test]
    fn score_is_gradient_of_log_mixture() {
        let mut rng = rng_from_seed(4);
        let m1 = GmmPrior::new(vec![0.4, 0.6], vec![iso(vec![-1.0], 0.2), iso(vec![2.0], 0.5)]).unwrap();
        let m2 = GmmPrior::new(
            vec![0.2, 0.5, 0.3],
            vec![iso(vec![1.0, 1.0], 0.3), iso(vec![-1.0, 0.5], 0.1), iso(vec![0.0, -2.0], 0.6)],
        )
        .unwrap();
        for s in [ve(), SdeSchedule::vp(0.1, 20.0).unwrap()] {
            for m in [&m1, &m2] {
                for _ in 0..50 {
                    let t = rng.random_range(0.05..1.0);
                    let x: Vec<f64> = (0..m.n()).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let sc = m.score(&s, &x, t).unwrap();
                    for i in 0..m.n() {
                        let h = 1e-5;
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (m.log_density(&s, &xp, t).unwrap() - m.log_density(&s, &xm, t).unwrap()) / (2.0 * h);
                        assert!((fd - sc[i]).abs() < 1e-5 * (1.0 + sc[i].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn far_points_stay_finite() {
        let m = GmmPrior::uniform(vec![iso(vec![0.0], 1e-4), iso(vec![1.0], 1e-4)]).unwrap();
        let s = SdeSchedule::vp(0.1, 20.0).unwrap();
        let sc = m.score(&s, &[1e6], 0.0).unwrap();
        assert!(sc[0].is_finite() && sc[0] < 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        let g = iso(vec![0.0], 1.0);
        assert!(GmmPrior::new(vec![0.5, 0.6], vec![g.clone(), g.clone()]).is_err());
        assert!(GmmPrior::new(vec![-0.5, 1.5], vec![g.clone(), g.clone()]).is_err());
        assert!(GmmPrior::new(vec![], vec![]).is_err());
    }
}
