//! Experiment configuration and the end-to-end pipeline: generate test
//! images, simulate measurements, reconstruct, score against a classical
//! baseline, and write artifacts with a reproducibility manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{mask_from_text, mask_to_text, pgm_bytes, read_checkpoint, Array};
use crate::measurement::{
    make_mask, real_part, Mask, MaskKind, MeasurementOperator, Radon, Transform, C64,
};
use crate::metrics::{aggregate, score_image, write_report_csv, ImageScore, MetricReport};
use crate::phantom::{ellipse_gmm_prior, generate_phantom, rasterize, Ellipse, PhantomKind};
use crate::rng::{Purpose, StreamSeed};
use crate::sampler::{sample_conditional, Method, ReconResult, SamplerConfig, ScoreAt};
use crate::score::{Covariance, GaussianPrior, GmmPrior, ParametricScoreModel, ScoreFamily, ScoreModel};
use crate::sde::SdeSchedule;

/// Validation images draw from seeds disjoint from the test images.
const VALIDATION_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SparseViewCt,
    UndersampledMri,
    MetalArtifactRemoval,
    SyntheticGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TransformSpec {
    Identity,
    Dct,
    Dft,
    Radon { n_angles: usize },
}

/// Disk-shaped implant in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Implant {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MaskSpec {
    Full,
    /// Column subsampling of a `side x side` k-space.
    Cartesian { acceleration: usize, center_fraction: f64 },
    SparseView { n_angles_kept: usize },
    /// Sinogram bins whose rays cross an implant are unobserved.
    MetalTrace {
        implants: Vec<Implant>,
        #[serde(default = "default_trace_threshold")]
        threshold: f64,
    },
    File { path: PathBuf },
}

fn default_trace_threshold() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PriorSpec {
    /// Isotropic Gaussian with constant mean.
    Gaussian { mean: f64, std: f64 },
    /// Equal-weight mixture around random-ellipse phantoms.
    EllipseGmm { components: usize, sigma: f64, seed: u64 },
    Checkpoint { path: PathBuf, family: ScoreFamily },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningGrid {
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub side: usize,
    pub transform: TransformSpec,
    pub mask: MaskSpec,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub sde: SdeSchedule,
    /// `sampler.seed` is replaced by a per-image seed derived from `seed`.
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    #[serde(default = "default_phantom")]
    pub phantom: PhantomKind,
    #[serde(default = "default_test_images")]
    pub n_test_images: usize,
    #[serde(default = "default_validation_images")]
    pub n_validation_images: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tuning: Option<TuningGrid>,
}

fn default_phantom() -> PhantomKind {
    PhantomKind::GmmDraw
}
fn default_test_images() -> usize {
    32
}
fn default_validation_images() -> usize {
    8
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a JSON config, applies `key=value` overrides on dotted paths and
    /// resolves relative file paths against the config's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config = Self::from_value(value)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let MaskSpec::File { path } = &mut self.mask {
            fix(path);
        }
        if let PriorSpec::Checkpoint { path, .. } = &mut self.prior {
            fix(path);
        }
    }

    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.side == 0 {
            return bad("side must be positive".into());
        }
        if self.task != Task::SyntheticGaussian && self.side < crate::phantom::MIN_SIDE {
            return bad(format!("image tasks need side >= {}", crate::phantom::MIN_SIDE));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be nonnegative".into());
        }
        self.sde.validate()?;
        self.sampler.validate()?;
        if self.n_test_images == 0 {
            return bad("n_test_images must be positive".into());
        }
        let radon = matches!(self.transform, TransformSpec::Radon { .. });
        let fourier = matches!(self.transform, TransformSpec::Dct | TransformSpec::Dft);
        match (&self.mask, radon) {
            (MaskSpec::SparseView { .. } | MaskSpec::MetalTrace { .. }, false) => {
                return bad("sparse_view and metal_trace masks need the radon transform".into())
            }
            (MaskSpec::Cartesian { .. }, _) if !fourier => {
                return bad("cartesian masks need a dct or dft transform".into())
            }
            _ => {}
        }
        let ok = match self.task {
            Task::SparseViewCt => radon && matches!(self.mask, MaskSpec::SparseView { .. }),
            Task::MetalArtifactRemoval => radon && matches!(self.mask, MaskSpec::MetalTrace { .. }),
            Task::UndersampledMri => fourier,
            Task::SyntheticGaussian => matches!(self.prior, PriorSpec::Gaussian { .. }),
        };
        if !ok {
            return bad(format!("transform/mask/prior do not fit task {:?}", self.task));
        }
        if self.phantom == PhantomKind::GmmDraw && matches!(self.prior, PriorSpec::Checkpoint { .. }) {
            return bad("gmm_draw phantoms need an analytic prior".into());
        }
        match &self.prior {
            PriorSpec::Gaussian { std, .. } if !(*std > 0.0) => bad("prior std must be positive".into()),
            PriorSpec::EllipseGmm { components, sigma, .. } if *components == 0 || !(*sigma > 0.0) => {
                bad("ellipse_gmm needs components >= 1 and sigma > 0".into())
            }
            _ => Ok(()),
        }?;
        if let Some(grid) = &self.tuning {
            if grid.eta.is_empty() || grid.lambda.is_empty() {
                return bad("tuning grid must be non-empty".into());
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c = value` in a JSON document. The value is parsed as JSON and
/// falls back to a plain string. Intermediate objects must exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut node = doc;
    for p in &parts[..parts.len() - 1] {
        node = node
            .get_mut(*p)
            .filter(|v| v.is_object())
            .ok_or_else(|| Error::Config(format!("override path {key:?}: no object at {p:?}")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override path {key:?} does not name an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Score model chosen by the experiment.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
    Parametric(ParametricScoreModel),
}

impl ScoreModel for Prior {
    fn dim(&self) -> Option<usize> {
        match self {
            Prior::Gaussian(p) => p.dim(),
            Prior::Gmm(p) => p.dim(),
            Prior::Parametric(p) => p.dim(),
        }
    }

    fn score(&self, schedule: &SdeSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self {
            Prior::Gaussian(p) => p.score(schedule, x, t),
            Prior::Gmm(p) => p.score(schedule, x, t),
            Prior::Parametric(p) => p.score(schedule, x, t),
        }
    }
}

/// One train/validation split image, end to end.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub id: String,
    pub truth: Image,
    pub measurement: Vec<C64>,
    pub recon: Image,
    pub baseline: Image,
    pub result: ReconResult,
    pub score: ImageScore,
    pub baseline_score: ImageScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Test,
    Validation,
}

/// Configured operator, prior and sampler, ready to process images.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ExperimentConfig,
    pub operator: MeasurementOperator,
    pub prior: Prior,
}

impl Problem {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let side = config.side;
        let n = config.n();
        let transform = match config.transform {
            TransformSpec::Identity => Transform::Identity(n),
            TransformSpec::Dct => Transform::dct(side, side),
            TransformSpec::Dft => Transform::dft(side, side),
            TransformSpec::Radon { n_angles } => {
                if n_angles == 0 {
                    return Err(Error::Config("radon needs at least one angle".into()));
                }
                Transform::radon(side, n_angles)
            }
        };
        let mask = build_mask(&config.mask, &transform, side)?;
        let operator = MeasurementOperator::new(transform, mask, config.noise_std)?;
        let prior = match &config.prior {
            PriorSpec::Gaussian { mean, std } => {
                Prior::Gaussian(GaussianPrior::new(vec![*mean; n], Covariance::isotropic(n, std * std)?)?)
            }
            PriorSpec::EllipseGmm { components, sigma, seed } => {
                Prior::Gmm(ellipse_gmm_prior(side, *components, *sigma, *seed)?)
            }
            PriorSpec::Checkpoint { path, family } => Prior::Parametric(read_checkpoint(path, family.clone())?),
        };
        if let Some(d) = prior.dim() {
            if d != n {
                return Err(Error::Config(format!("prior dimension {d} does not match image size {n}")));
            }
        }
        Ok(Self {
            config: config.clone(),
            operator,
            prior,
        })
    }

    fn clamps(&self) -> bool {
        self.config.task != Task::SyntheticGaussian
    }

    pub fn image_seed(&self, split: Split, index: usize) -> StreamSeed {
        let offset = match split {
            Split::Test => 0,
            Split::Validation => VALIDATION_OFFSET,
        };
        StreamSeed(self.config.seed).child(offset + index as u64)
    }

    pub fn ground_truth(&self, seed: StreamSeed) -> Result<Image> {
        let side = self.config.side;
        match (&self.prior, self.config.phantom) {
            (Prior::Gaussian(p), _) if self.config.task == Task::SyntheticGaussian => {
                Image::square(side, p.sample(&mut seed.stream(0, Purpose::Phantom)))
            }
            (Prior::Gaussian(p), PhantomKind::GmmDraw) => {
                let gmm = GmmPrior::uniform(vec![p.clone()])?;
                generate_phantom(PhantomKind::GmmDraw, side, seed.0, Some(&gmm))
            }
            (Prior::Gmm(g), kind) => generate_phantom(kind, side, seed.0, Some(g)),
            (_, kind) => generate_phantom(kind, side, seed.0, None),
        }
    }

    pub fn measure(&self, truth: &Image, seed: StreamSeed) -> Result<Vec<C64>> {
        self.operator.measure(&truth.data, &mut seed.stream(0, Purpose::MeasurementNoise))
    }

    pub fn sampler_config(&self, seed: StreamSeed) -> SamplerConfig {
        self.config.sampler.clone().with_seed(seed.0)
    }

    pub fn reconstruct(&self, y: &[C64], sampler: &SamplerConfig, task: u64) -> Result<ReconResult> {
        sample_conditional(sampler, &self.config.sde, &self.prior, &self.operator, y, task)
    }

    pub fn to_image(&self, data: Vec<f64>) -> Result<Image> {
        let img = Image::square(self.config.side, data)?;
        Ok(if self.clamps() { img.clamped(0.0, 1.0) } else { img })
    }

    /// Classical reconstruction from the same measurement: FBP on the
    /// observed views, linear interpolation across the metal trace followed
    /// by FBP, or the zero-filled inverse transform.
    pub fn baseline(&self, y: &[C64]) -> Result<Image> {
        let mask = self.operator.mask();
        let padded = mask.pad(y)?;
        let data = match (self.operator.transform(), &self.config.mask) {
            (Transform::Radon(r), MaskSpec::SparseView { .. }) => {
                let rows: Vec<usize> = (0..r.n_angles()).filter(|&a| mask.flags()[a * r.n_det()]).collect();
                r.fbp_subset(&real_part(&padded), &rows)
            }
            (Transform::Radon(r), _) => r.fbp(&interpolate_trace(r, &real_part(&padded), mask.flags())),
            (t, _) => real_part(&t.apply_inverse(&padded)?),
        };
        self.to_image(data)
    }

    pub fn process(&self, split: Split, index: usize) -> Result<ImageOutcome> {
        let seed = self.image_seed(split, index);
        let prefix = match split {
            Split::Test => "img",
            Split::Validation => "val",
        };
        let id = format!("{prefix}_{index:03}");
        let truth = self.ground_truth(seed)?;
        let measurement = self.measure(&truth, seed)?;
        let result = self.reconstruct(&measurement, &self.sampler_config(seed), 0)?;
        let recon = self.to_image(result.x0_hat.clone())?;
        let baseline = self.baseline(&measurement)?;
        let score = score_image(id.clone(), &recon, &truth)?;
        let baseline_score = score_image(id.clone(), &baseline, &truth)?;
        log::info!(
            "{id}: psnr {:.2} dB (baseline {:.2} dB), {} score evaluations",
            score.psnr_db,
            baseline_score.psnr_db,
            result.score_evaluations
        );
        Ok(ImageOutcome {
            id,
            truth,
            measurement,
            recon,
            baseline,
            result,
            score,
            baseline_score,
        })
    }
}

fn build_mask(spec: &MaskSpec, transform: &Transform, side: usize) -> Result<Mask> {
    let n_out = transform.output_dim();
    let mask = match (spec, transform) {
        (MaskSpec::Full, _) => Mask::full(n_out)?,
        (MaskSpec::Cartesian { acceleration, center_fraction }, _) => make_mask(&MaskKind::CartesianEquispaced {
            rows: side,
            n_cols: side,
            acceleration: *acceleration,
            center_fraction: *center_fraction,
        })?,
        (MaskSpec::SparseView { n_angles_kept }, Transform::Radon(r)) => make_mask(&MaskKind::SparseView {
            n_angles_total: r.n_angles(),
            n_angles_kept: *n_angles_kept,
            n_det: r.n_det(),
        })?,
        (MaskSpec::MetalTrace { implants, threshold }, Transform::Radon(r)) => {
            let metal = metal_image(implants, side);
            make_mask(&MaskKind::MetalTrace {
                sinogram: r.forward(&metal.data, None),
                threshold: *threshold,
            })?
        }
        (MaskSpec::File { path }, _) => mask_from_text(&fs::read_to_string(path)?)?,
        _ => return Err(Error::Config("mask does not fit the transform".into())),
    };
    if mask.n() != n_out {
        return Err(Error::Config(format!("mask length {} does not match {n_out} coefficients", mask.n())));
    }
    Ok(mask)
}

/// Binary implant map used to trace the metal region in the sinogram.
pub fn metal_image(implants: &[Implant], side: usize) -> Image {
    let ellipses: Vec<Ellipse> = implants
        .iter()
        .map(|m| Ellipse {
            x0: m.x,
            y0: m.y,
            a: m.radius,
            b: m.radius,
            theta: 0.0,
            intensity: 1.0,
        })
        .collect();
    rasterize(&ellipses, side)
}

/// Fills unobserved detector bins of each view by linear interpolation
/// between the nearest observed bins; runs at the edges are held constant.
pub fn interpolate_trace(radon: &Radon, sinogram: &[f64], observed: &[bool]) -> Vec<f64> {
    let nd = radon.n_det();
    let mut out = sinogram.to_vec();
    for a in 0..radon.n_angles() {
        let row = &mut out[a * nd..(a + 1) * nd];
        let flags = &observed[a * nd..(a + 1) * nd];
        if !flags.iter().any(|&f| f) {
            continue;
        }
        let mut d = 0;
        while d < nd {
            if flags[d] {
                d += 1;
                continue;
            }
            let start = d;
            while d < nd && !flags[d] {
                d += 1;
            }
            let left = start.checked_sub(1).map(|k| row[k]);
            let right = (d < nd).then(|| row[d]);
            for k in start..d {
                row[k] = match (left, right) {
                    (Some(l), Some(r)) => {
                        let w = (k + 1 - start) as f64 / (d + 1 - start) as f64;
                        l + w * (r - l)
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => 0.0,
                };
            }
        }
    }
    out
}

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("thread count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn process_images(problem: &Problem, split: Split, count: usize, threads: Option<usize>) -> Result<Vec<ImageOutcome>> {
    with_threads(threads, || {
        (0..count)
            .into_par_iter()
            .map(|i| problem.process(split, i))
            .collect::<Result<Vec<_>>>()
    })?
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files under a root directory and records their SHA-256 digests.
struct ArtifactWriter {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.hashes.insert(rel.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub n_test_images: usize,
    pub config: ExperimentConfig,
    pub report: MetricReport,
    pub baseline_report: MetricReport,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub baseline_report: MetricReport,
    pub images: Vec<ImageOutcome>,
    pub manifest: Manifest,
}

impl ExperimentOutcome {
    pub fn scores(&self) -> Vec<ImageScore> {
        self.images.iter().map(|i| i.score.clone()).collect()
    }

    pub fn baseline_scores(&self) -> Vec<ImageScore> {
        self.images.iter().map(|i| i.baseline_score.clone()).collect()
    }
}

fn csv_bytes(rows: &[ImageScore]) -> Result<(Vec<u8>, MetricReport)> {
    let mut buf = Vec::new();
    let report = write_report_csv(&mut buf, rows)?;
    Ok((buf, report))
}

/// Evaluates the test split and writes images, `report.csv`,
/// `baseline.csv`, per-image diagnostics and `manifest.json` to the
/// configured output directory.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutcome> {
    let problem = Problem::new(config)?;
    let images = process_images(&problem, Split::Test, config.n_test_images, threads)?;
    let mut out = ArtifactWriter::new(&config.output_dir)?;
    out.write("mask.txt", mask_to_text(problem.operator.mask()).as_bytes())?;
    for img in &images {
        let range = img.truth.max();
        let range = if range > 0.0 { range } else { 1.0 };
        out.write(&format!("images/{}_truth.sba", img.id), &Array::from_image(&img.truth).to_bytes())?;
        out.write(&format!("images/{}_recon.sba", img.id), &Array::from_image(&img.recon).to_bytes())?;
        out.write(&format!("images/{}_baseline.sba", img.id), &Array::from_image(&img.baseline).to_bytes())?;
        let y = Array::complex(vec![img.measurement.len()], img.measurement.clone())?;
        out.write(&format!("images/{}_measurement.sba", img.id), &y.to_bytes())?;
        out.write(&format!("images/{}_truth.pgm", img.id), &pgm_bytes(&img.truth, range)?)?;
        out.write(&format!("images/{}_recon.pgm", img.id), &pgm_bytes(&img.recon, range)?)?;
        let mut diag = Vec::new();
        img.result.write_diagnostics_csv(&mut diag)?;
        out.write(&format!("diagnostics/{}.csv", img.id), &diag)?;
    }
    let scores: Vec<ImageScore> = images.iter().map(|i| i.score.clone()).collect();
    let baseline_scores: Vec<ImageScore> = images.iter().map(|i| i.baseline_score.clone()).collect();
    let (report_csv, report) = csv_bytes(&scores)?;
    let (baseline_csv, baseline_report) = csv_bytes(&baseline_scores)?;
    out.write("report.csv", &report_csv)?;
    out.write("baseline.csv", &baseline_csv)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        n_test_images: config.n_test_images,
        config: config.clone(),
        report: report.clone(),
        baseline_report: baseline_report.clone(),
        files: out.hashes.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(config.output_dir.join("manifest.json"), json)?;
    Ok(ExperimentOutcome {
        report,
        baseline_report,
        images,
        manifest,
    })
}

/// Posterior chains for one measurement.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub chains: Vec<ReconResult>,
    /// Pixelwise mean over chains.
    pub mean: Image,
    /// Pixelwise standard deviation over chains; zero for a single chain.
    pub std: Image,
}

/// Runs `chains` conditional chains on `y` with the configured sampler and
/// `seed`; chain `k` uses task index `k`.
pub fn reconstruct_chains(problem: &Problem, y: &[C64], chains: usize, threads: Option<usize>) -> Result<ChainOutcome> {
    if chains == 0 {
        return Err(Error::Config("need at least one chain".into()));
    }
    let sampler = problem.config.sampler.clone().with_seed(problem.config.seed);
    let results = with_threads(threads, || {
        (0..chains as u64)
            .into_par_iter()
            .map(|k| problem.reconstruct(y, &sampler, k))
            .collect::<Result<Vec<_>>>()
    })??;
    let n = problem.config.n();
    let k = chains as f64;
    let mut mean = vec![0.0; n];
    for r in &results {
        for (m, v) in mean.iter_mut().zip(&r.x0_hat) {
            *m += v / k;
        }
    }
    let mut var = vec![0.0; n];
    if chains > 1 {
        for r in &results {
            for ((s, v), m) in var.iter_mut().zip(&r.x0_hat).zip(&mean) {
                *s += (v - m).powi(2) / (k - 1.0);
            }
        }
    }
    Ok(ChainOutcome {
        mean: problem.to_image(mean)?,
        std: Image::square(problem.config.side, var.into_iter().map(f64::sqrt).collect())?,
        chains: results,
    })
}

/// Writes `recon_mean`/`recon_std` arrays, per-chain diagnostics and
/// `chains.csv` (`chain,final_residual,score_evals,skipped_correctors`).
pub fn write_chains(dir: &Path, outcome: &ChainOutcome) -> Result<()> {
    let mut out = ArtifactWriter::new(dir)?;
    out.write("recon_mean.sba", &Array::from_image(&outcome.mean).to_bytes())?;
    out.write("recon_std.sba", &Array::from_image(&outcome.std).to_bytes())?;
    let range = outcome.mean.max();
    out.write("recon_mean.pgm", &pgm_bytes(&outcome.mean, if range > 0.0 { range } else { 1.0 })?)?;
    let mut summary = String::from("chain,final_residual,score_evals,skipped_correctors\n");
    for (k, r) in outcome.chains.iter().enumerate() {
        let mut diag = Vec::new();
        r.write_diagnostics_csv(&mut diag)?;
        out.write(&format!("diagnostics/chain_{k:03}.csv"), &diag)?;
        let last = r.residual_trace.last().map_or(f64::NAN, |s| s.residual);
        summary.push_str(&format!("{k},{last:.9e},{},{}\n", r.score_evaluations, r.skipped_corrector_steps));
    }
    out.write("chains.csv", summary.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub eta: f64,
    pub lambda: f64,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneOutcome {
    pub best_eta: f64,
    pub best_lambda: f64,
    pub table: Vec<TuneRow>,
}

impl TuneOutcome {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eta,lambda,mean_psnr_db,mean_ssim")?;
        for r in &self.table {
            writeln!(w, "{},{},{:.6},{:.6}", r.eta, r.lambda, r.psnr_mean, r.ssim_mean)?;
        }
        Ok(())
    }
}

/// Grid search over `(eta, lambda)` on the validation split, maximizing mean
/// PSNR. Ties go to the larger `lambda`, then the larger `eta`. Every grid
/// point sees the same images and sampler seeds.
pub fn tune_hyperparams(config: &ExperimentConfig, grid: &TuningGrid, threads: Option<usize>) -> Result<TuneOutcome> {
    if grid.eta.is_empty() || grid.lambda.is_empty() {
        return Err(Error::Config("tuning grid must be non-empty".into()));
    }
    if config.n_validation_images == 0 {
        return Err(Error::Config("tuning needs at least one validation image".into()));
    }
    let problem = Problem::new(config)?;
    let points: Vec<(f64, f64)> = grid
        .eta
        .iter()
        .flat_map(|&e| grid.lambda.iter().map(move |&l| (e, l)))
        .collect();
    for &(eta, lambda) in &points {
        let mut s = config.sampler.clone();
        s.snr_eta = eta;
        s.lambda = lambda;
        s.validate()?;
    }
    let nv = config.n_validation_images;
    let cases: Vec<(Image, Vec<C64>, StreamSeed)> = with_threads(threads, || {
        (0..nv)
            .into_par_iter()
            .map(|i| {
                let seed = problem.image_seed(Split::Validation, i);
                let truth = problem.ground_truth(seed)?;
                let y = problem.measure(&truth, seed)?;
                Ok((truth, y, seed))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..nv).map(move |i| (p, i))).collect();
    let scores: Vec<ImageScore> = with_threads(threads, || {
        jobs.par_iter()
            .map(|&(p, i)| {
                let (truth, y, seed) = &cases[i];
                let mut s = problem.sampler_config(*seed);
                s.snr_eta = points[p].0;
                s.lambda = points[p].1;
                let r = problem.reconstruct(y, &s, 0)?;
                score_image(format!("val_{i:03}"), &problem.to_image(r.x0_hat)?, truth)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut table = Vec::with_capacity(points.len());
    for (p, &(eta, lambda)) in points.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = scores[p * nv..(p + 1) * nv].iter().map(|s| (s.psnr_db, s.ssim)).collect();
        let rep = aggregate(&pairs)?;
        table.push(TuneRow {
            eta,
            lambda,
            psnr_mean: rep.psnr_mean,
            ssim_mean: rep.ssim_mean,
        });
    }
    let best = table
        .iter()
        .max_by(|a, b| {
            a.psnr_mean
                .total_cmp(&b.psnr_mean)
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.eta.total_cmp(&b.eta))
        })
        .expect("grid is non-empty");
    Ok(TuneOutcome {
        best_eta: best.eta,
        best_lambda: best.lambda,
        table,
    })
}

/// Names accepted by [`reference_config`].
pub const REFERENCE_CONFIGS: [&str; 5] = [
    "sparse_view_ct_lidc",
    "sparse_view_ct_ldct",
    "metal_artifact_removal_lidc",
    "undersampled_mri_brats",
    "synthetic_gaussian",
];

fn pc(n_steps: usize, eta: f64, lambda: f64, final_projection: bool) -> SamplerConfig {
    SamplerConfig {
        method: Method::PredictorCorrector,
        n_steps,
        corrector_steps_per_scale: 1,
        snr_eta: eta,
        lambda,
        final_projection,
        score_at: ScoreAt::Projected,
        seed: 0,
    }
}

/// Desk-scale configurations carrying the tuned `(eta,
/// lambda)` of each task.
pub fn reference_config(name: &str) -> Result<ExperimentConfig> {
    let ct_prior = PriorSpec::EllipseGmm {
        components: 8,
        sigma: 0.05,
        seed: 1,
    };
    let base = ExperimentConfig {
        task: Task::SparseViewCt,
        side: 64,
        transform: TransformSpec::Radon { n_angles: 180 },
        mask: MaskSpec::SparseView { n_angles_kept: 23 },
        noise_std: 0.0,
        sde: SdeSchedule::default(),
        sampler: pc(200, 0.246, 0.841, true),
        prior: ct_prior,
        phantom: PhantomKind::GmmDraw,
        n_test_images: 32,
        n_validation_images: 8,
        seed: 0,
        output_dir: PathBuf::from(format!("out/{name}")),
        tuning: Some(TuningGrid {
            eta: vec![0.1, 0.2, 0.4],
            lambda: vec![0.25, 0.5, 0.75, 1.0],
        }),
    };
    let config = match name {
        "sparse_view_ct_lidc" => base,
        "sparse_view_ct_ldct" => ExperimentConfig {
            sampler: pc(200, 0.4, 0.72, true),
            ..base
        },
        "metal_artifact_removal_lidc" => ExperimentConfig {
            task: Task::MetalArtifactRemoval,
            mask: MaskSpec::MetalTrace {
                implants: vec![
                    Implant { x: -0.3, y: -0.15, radius: 0.06 },
                    Implant { x: 0.3, y: -0.15, radius: 0.06 },
                ],
                threshold: default_trace_threshold(),
            },
            sampler: pc(200, 0.209, 0.227, true),
            ..base
        },
        "undersampled_mri_brats" => ExperimentConfig {
            task: Task::UndersampledMri,
            transform: TransformSpec::Dft,
            mask: MaskSpec::Cartesian {
                acceleration: 8,
                center_fraction: 0.08,
            },
            sampler: pc(200, 0.577, 0.982, true),
            ..base
        },
        "synthetic_gaussian" => ExperimentConfig {
            task: Task::SyntheticGaussian,
            side: 8,
            transform: TransformSpec::Dct,
            mask: MaskSpec::Full,
            sampler: pc(100, 0.16, 1.0, true),
            prior: PriorSpec::Gaussian { mean: 0.5, std: 0.2 },
            tuning: None,
            ..base
        },
        other => return Err(Error::Config(format!("unknown reference config {other:?}"))),
    };
    config.validate()?;
    Ok(config)
}
