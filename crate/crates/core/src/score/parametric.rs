//! Small trainable score models fitted by denoising score matching.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::error::{check_len, Error, Result};
use crate::rng::{normal_vec, standard_normal, Rng, StreamSeed, Purpose};
use crate::sde::SdeSchedule;

/// Lower end of the training time range. The conditional score diverges as
/// the noise scale approaches its floor.
pub const T_EPS: f64 = 1e-5;

const MAX_MLP_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", deny_unknown_fields)]
pub enum ScoreFamily {
    /// `s(x, t) = -x / (c + beta(t)^2)` with one learnable `c > 0`.
    IsotropicGaussianFit,
    /// tanh MLP on `[x, beta(t)]`; `layers` lists every width from input
    /// (`dim + 1`) to output (`dim`).
    TinyMlp { layers: Vec<usize> },
}

impl ScoreFamily {
    pub fn tag(&self) -> u8 {
        match self {
            ScoreFamily::IsotropicGaussianFit => 0,
            ScoreFamily::TinyMlp { .. } => 1,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ScoreFamily::IsotropicGaussianFit => 1,
            ScoreFamily::TinyMlp { layers } => layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricScoreModel {
    family: ScoreFamily,
    params: Vec<f64>,
}

impl ParametricScoreModel {
    pub fn isotropic(c: f64) -> Result<Self> {
        Self::from_params(ScoreFamily::IsotropicGaussianFit, vec![c])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn tiny_mlp(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut layers = vec![dim + 1];
        layers.extend_from_slice(hidden);
        layers.push(dim);
        let family = ScoreFamily::TinyMlp { layers: layers.clone() };
        let mut rng = StreamSeed(seed).stream(0, Purpose::Init);
        let mut params = Vec::with_capacity(family.param_count());
        for w in layers.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self::from_params(family, params)
    }

    pub fn from_params(family: ScoreFamily, params: Vec<f64>) -> Result<Self> {
        check_len("score model parameters", family.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("score model parameters must be finite"));
        }
        match &family {
            ScoreFamily::IsotropicGaussianFit => {
                if !(params[0] > 0.0) {
                    return Err(Error::domain("isotropic fit requires c > 0"));
                }
            }
            ScoreFamily::TinyMlp { layers } => {
                if layers.len() < 2 || layers.len() > MAX_MLP_LAYERS + 1 {
                    return Err(Error::domain(format!(
                        "tiny MLP needs 1..={MAX_MLP_LAYERS} weight layers"
                    )));
                }
                let (first, last) = (layers[0], layers[layers.len() - 1]);
                if last == 0 || first != last + 1 || layers.contains(&0) {
                    return Err(Error::domain("tiny MLP input width must be output width + 1"));
                }
            }
        }
        Ok(Self { family, params })
    }

    pub fn family(&self) -> &ScoreFamily {
        &self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Score together with the parameter gradient of `<upstream, s>`.
    fn forward_backward(
        &self,
        x: &[f64],
        beta: f64,
        upstream: Option<&mut dyn FnMut(&[f64]) -> Vec<f64>>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        match &self.family {
            ScoreFamily::IsotropicGaussianFit => {
                let denom = self.params[0] + beta * beta;
                let out: Vec<f64> = x.iter().map(|v| -v / denom).collect();
                if let Some(up) = upstream {
                    let u = up(&out);
                    // d s_i / dc = x_i / denom^2
                    grad[0] += u.iter().zip(x).map(|(ui, xi)| ui * xi).sum::<f64>() / (denom * denom);
                }
                out
            }
            ScoreFamily::TinyMlp { layers } => {
                let nl = layers.len() - 1;
                let mut acts: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
                let mut input = x.to_vec();
                input.push(beta);
                acts.push(input);
                let mut off = 0;
                let mut offsets = Vec::with_capacity(nl);
                for l in 0..nl {
                    let (ni, no) = (layers[l], layers[l + 1]);
                    offsets.push(off);
                    let w = &self.params[off..off + ni * no];
                    let b = &self.params[off + ni * no..off + ni * no + no];
                    let prev = &acts[l];
                    let mut z: Vec<f64> = (0..no)
                        .map(|o| b[o] + w[o * ni..(o + 1) * ni].iter().zip(prev).map(|(a, c)| a * c).sum::<f64>())
                        .collect();
                    if l + 1 < nl {
                        z.iter_mut().for_each(|v| *v = v.tanh());
                    }
                    acts.push(z);
                    off += ni * no + no;
                }
                let out = acts[nl].clone();
                if let Some(up) = upstream {
                    let mut delta = up(&out);
                    for l in (0..nl).rev() {
                        let (ni, no) = (layers[l], layers[l + 1]);
                        let off = offsets[l];
                        let prev = &acts[l];
                        for o in 0..no {
                            let d = delta[o];
                            for i in 0..ni {
                                grad[off + o * ni + i] += d * prev[i];
                            }
                            grad[off + ni * no + o] += d;
                        }
                        if l > 0 {
                            let w = &self.params[off..off + ni * no];
                            delta = (0..ni)
                                .map(|i| {
                                    let s: f64 = (0..no).map(|o| w[o * ni + i] * delta[o]).sum();
                                    s * (1.0 - prev[i] * prev[i])
                                })
                                .collect();
                        }
                    }
                }
                out
            }
        }
    }

    fn eval(&self, x: &[f64], beta: f64) -> Vec<f64> {
        self.forward_backward(x, beta, None, &mut [])
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(self.family.tag());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// The checkpoint stores only a family tag, so the caller supplies the
    /// architecture and it is checked against the tag and parameter count.
    pub fn from_checkpoint(bytes: &[u8], family: ScoreFamily) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a score model checkpoint".into()));
        }
        if bytes[4] != family.tag() {
            return Err(Error::Format(format!(
                "checkpoint family tag {} does not match expected {}",
                bytes[4],
                family.tag()
            )));
        }
        let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        if bytes.len() != 13 + 8 * count {
            return Err(Error::Format("checkpoint length does not match parameter count".into()));
        }
        let params = bytes[13..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(family, params)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCM1";

impl ScoreModel for ParametricScoreModel {
    fn dim(&self) -> Option<usize> {
        match &self.family {
            ScoreFamily::IsotropicGaussianFit => None,
            ScoreFamily::TinyMlp { layers } => layers.last().copied(),
        }
    }

    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if let Some(d) = self.dim() {
            check_len("parametric score", d, x.len())?;
        }
        let (_, beta) = schedule.marginal_params(t)?;
        Ok(self.eval(x, beta))
    }
}

/// One `(t, z)` draw for a datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmDraw {
    pub t: f64,
    pub z: Vec<f64>,
}

pub fn draw_dsm_noise(count: usize, dim: usize, rng: &mut Rng) -> Vec<DsmDraw> {
    (0..count)
        .map(|_| DsmDraw {
            t: rng.random_range(T_EPS..=1.0),
            z: normal_vec(rng, dim),
        })
        .collect()
}

/// Single-sample denoising score matching loss with fresh draws from `rng`.
pub fn dsm_loss(
    model: &ParametricScoreModel,
    schedule: &SdeSchedule,
    batch: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<f64> {
    let dim = batch.first().map(|b| b.len()).unwrap_or(0);
    let draws = draw_dsm_noise(batch.len(), dim, rng);
    dsm_loss_with(model, schedule, batch, &draws)
}

pub fn dsm_loss_with(
    model: &ParametricScoreModel,
    schedule: &SdeSchedule,
    batch: &[Vec<f64>],
    draws: &[DsmDraw],
) -> Result<f64> {
    dsm_impl(model, schedule, batch, draws, None)
}

pub fn dsm_loss_and_grad(
    model: &ParametricScoreModel,
    schedule: &SdeSchedule,
    batch: &[Vec<f64>],
    draws: &[DsmDraw],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let loss = dsm_impl(model, schedule, batch, draws, Some(&mut grad))?;
    Ok((loss, grad))
}

fn dsm_impl(
    model: &ParametricScoreModel,
    schedule: &SdeSchedule,
    batch: &[Vec<f64>],
    draws: &[DsmDraw],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("dsm loss needs a non-empty batch"));
    }
    check_len("dsm draws", batch.len(), draws.len())?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x0, d) in batch.iter().zip(draws) {
        check_len("dsm noise", x0.len(), d.z.len())?;
        let (alpha, beta) = schedule.marginal_params(d.t)?;
        let xt: Vec<f64> = x0.iter().zip(&d.z).map(|(x, z)| alpha * x + beta * z).collect();
        // grad log p_0t(x_t | x_0) = -(x_t - alpha x_0) / beta^2 = -z / beta
        let target: Vec<f64> = d.z.iter().map(|z| -z / beta).collect();
        let mut sq = 0.0;
        let mut upstream = |s: &[f64]| -> Vec<f64> {
            s.iter()
                .zip(&target)
                .map(|(si, ti)| {
                    sq += (si - ti).powi(2);
                    2.0 * (si - ti) * scale
                })
                .collect()
        };
        match grad.as_deref_mut() {
            Some(g) => {
                model.forward_backward(&xt, beta, Some(&mut upstream), g);
            }
            None => {
                let s = model.eval(&xt, beta);
                upstream(&s);
            }
        }
        total += sq * scale;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ParametricScoreModel,
    pub loss_trace: Vec<f64>,
}

/// Plain fixed-rate SGD on the DSM objective.
pub fn train_dsm(
    model: &ParametricScoreModel,
    schedule: &SdeSchedule,
    dataset: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::domain("training needs a non-empty dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::domain("batch size must be positive"));
    }
    let dim = dataset[0].len();
    let mut rng = StreamSeed(config.seed).stream(0, Purpose::Training);
    let mut current = model.clone();
    let mut trace = Vec::with_capacity(config.steps);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        for _ in 0..config.batch_size {
            batch.push(dataset[rng.random_range(0..dataset.len())].clone());
        }
        let draws = draw_dsm_noise(batch.len(), dim, &mut rng);
        let (loss, grad) = dsm_loss_and_grad(&current, schedule, &batch, &draws)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite loss {loss} at training step {step}"
            )));
        }
        for (p, g) in current.params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        if current.family == ScoreFamily::IsotropicGaussianFit && current.params[0] <= 0.0 {
            current.params[0] = f64::EPSILON;
        }
        trace.push(loss);
    }
    Ok(TrainOutcome {
        model: current,
        loss_trace: trace,
    })
}

/// Draws `n` points of `N(0, var)` in dimension `dim`; used by tests and the CLI.
pub fn gaussian_dataset(n: usize, dim: usize, var: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| var.sqrt() * standard_normal(rng)).collect())
        .collect()
}
