use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use score_recon::experiment::{reconstruct_chains, run_experiment, tune_hyperparams, write_chains, ExperimentConfig, Problem};
use score_recon::image::Image;
use score_recon::io::{mask_to_text, read_array, write_array, write_checkpoint, write_pgm, Array, ArrayData};
use score_recon::phantom::{generate_phantom, PhantomKind};
use score_recon::rng::{rng_from_seed, StreamSeed};
use score_recon::score::{gaussian_dataset, train_dsm, ParametricScoreModel, TrainConfig};
use score_recon::selftest::run_selftest;
use score_recon::{Error, Result};

const LOG_ENV: &str = "SCORE_RECON_LOG";

#[derive(Parser, Debug)]
#[command(name = "score-recon", version, about = "Score-based reconstruction for linear inverse problems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override `dotted.key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a test phantom.
    Phantom {
        /// Defaults to the config's phantom kind.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Simulate a measurement of an image with the configured operator.
    Measure {
        /// Image array (`.sba`).
        #[arg(long)]
        input: PathBuf,
    },
    /// Reconstruct one measurement with one or more posterior chains.
    Reconstruct {
        /// Measurement array (`.sba`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Grid search over the corrector SNR and the consistency weight.
    Tune {
        /// Comma-separated SNR values; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        eta: Vec<f64>,
        /// Comma-separated consistency weights; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    /// Run the full evaluation on the test split.
    Eval,
    /// Fit a parametric score model by denoising score matching.
    TrainScore(TrainArgs),
    /// Check operator and consistency invariants on random instances.
    Selftest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `isotropic_gaussian_fit` or `tiny_mlp`.
    #[arg(long, default_value = "isotropic_gaussian_fit")]
    family: String,
    /// Hidden widths of `tiny_mlp`, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    hidden: Vec<usize>,
    /// Training data as a `[count, dim...]` array; otherwise N(0, variance) draws.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// Initial value of `c` for the isotropic family.
    #[arg(long, default_value_t = 2.0)]
    init: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Invariant(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Format(_) => Failure::Io(msg),
            Error::Invariant(_) | Error::Numerical(_) => Failure::Invariant(msg),
            Error::Config(_) | Error::Domain(_) | Error::DimensionMismatch { .. } | Error::Json(_) => {
                Failure::Usage(msg)
            }
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(g: &Global) -> CliResult<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    if !path.exists() {
        return Err(Failure::Io(format!("config {} not found", path.display())));
    }
    let mut config = ExperimentConfig::load(path, &g.overrides)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn out_dir(g: &Global, config: Option<&ExperimentConfig>) -> PathBuf {
    g.out
        .clone()
        .or_else(|| config.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_kind(s: &str) -> CliResult<PhantomKind> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Failure::Usage(format!("unknown phantom kind {s:?}")))
}

fn save_image(dir: &Path, stem: &str, img: &Image) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_array(&dir.join(format!("{stem}.sba")), &Array::from_image(img))?;
    let range = img.max();
    write_pgm(&dir.join(format!("{stem}.pgm")), img, if range > 0.0 { range } else { 1.0 })
}

fn phantom(g: &Global, kind: Option<&str>, side: Option<usize>) -> CliResult<()> {
    let config = match &g.config {
        Some(_) => Some(load_config(g)?),
        None => None,
    };
    let kind = match kind {
        Some(k) => parse_kind(k)?,
        None => config.as_ref().map_or(PhantomKind::SheppLoganLike, |c| c.phantom),
    };
    let img = match &config {
        Some(c) => {
            let mut c = c.clone();
            c.phantom = kind;
            if let Some(side) = side {
                c.side = side;
            }
            let problem = Problem::new(&c)?;
            problem.ground_truth(StreamSeed(c.seed))?
        }
        None => {
            if kind == PhantomKind::GmmDraw {
                return Err(Failure::Usage("gmm_draw phantoms need --config with a prior".into()));
            }
            generate_phantom(kind, side.unwrap_or(64), g.seed.unwrap_or(0), None)?
        }
    };
    let dir = out_dir(g, config.as_ref());
    save_image(&dir, "phantom", &img)?;
    println!("{}", dir.join("phantom.sba").display());
    Ok(())
}

fn measure(g: &Global, input: &Path) -> CliResult<()> {
    let config = load_config(g)?;
    let problem = Problem::new(&config)?;
    let img = read_array(input)?.to_image()?;
    if img.rows != config.side || img.cols != config.side {
        return Err(Failure::Usage(format!(
            "image is {}x{}, config expects side {}",
            img.rows, img.cols, config.side
        )));
    }
    let y = problem.measure(&img, StreamSeed(config.seed))?;
    let dir = out_dir(g, Some(&config));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    write_array(&dir.join("measurement.sba"), &Array::complex(vec![y.len()], y)?)?;
    fs::write(dir.join("mask.txt"), mask_to_text(problem.operator.mask())).map_err(Error::from)?;
    println!("{}", dir.join("measurement.sba").display());
    Ok(())
}

fn reconstruct(g: &Global, input: &Path, chains: usize) -> CliResult<()> {
    let config = load_config(g)?;
    let problem = Problem::new(&config)?;
    let y = read_array(input)?.into_complex();
    if y.len() != problem.operator.m() {
        return Err(Failure::Usage(format!(
            "measurement has {} entries, operator expects {}",
            y.len(),
            problem.operator.m()
        )));
    }
    let outcome = reconstruct_chains(&problem, &y, chains, g.threads)?;
    let dir = out_dir(g, Some(&config));
    write_chains(&dir, &outcome)?;
    println!("{}", dir.join("recon_mean.sba").display());
    Ok(())
}

fn tune(g: &Global, eta: Vec<f64>, lambda: Vec<f64>) -> CliResult<()> {
    let config = load_config(g)?;
    let mut grid = config.tuning.clone().unwrap_or(score_recon::experiment::TuningGrid {
        eta: vec![config.sampler.snr_eta],
        lambda: vec![config.sampler.lambda],
    });
    if !eta.is_empty() {
        grid.eta = eta;
    }
    if !lambda.is_empty() {
        grid.lambda = lambda;
    }
    let outcome = tune_hyperparams(&config, &grid, g.threads)?;
    let dir = out_dir(g, Some(&config));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let mut csv = Vec::new();
    outcome.write_csv(&mut csv)?;
    fs::write(dir.join("tune.csv"), csv).map_err(Error::from)?;
    println!("{}", serde_json::json!({"eta": outcome.best_eta, "lambda": outcome.best_lambda}));
    Ok(())
}

fn eval(g: &Global) -> CliResult<()> {
    let config = load_config(g)?;
    let outcome = run_experiment(&config, g.threads)?;
    let r = &outcome.report;
    let b = &outcome.baseline_report;
    println!(
        "psnr {:.3} +- {:.3} dB, ssim {:.4} +- {:.4} (baseline psnr {:.3} dB, ssim {:.4}) over {} images",
        r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std, b.psnr_mean, b.ssim_mean, r.n_images
    );
    Ok(())
}

fn train_score(g: &Global, a: &TrainArgs) -> CliResult<()> {
    let seed = g.seed.unwrap_or(0);
    let data: Vec<Vec<f64>> = match &a.data {
        Some(path) => {
            let arr = read_array(path)?;
            let count = *arr.dims.first().ok_or_else(|| Failure::Usage("empty data array".into()))?;
            let values = match arr.data {
                ArrayData::Real(v) => v,
                ArrayData::Complex(_) => return Err(Failure::Usage("training data must be real".into())),
            };
            if count == 0 {
                return Err(Failure::Usage("empty data array".into()));
            }
            let dim = values.len() / count;
            if dim == 0 {
                return Err(Failure::Usage("training data has zero dimension".into()));
            }
            values.chunks(dim).map(<[f64]>::to_vec).collect()
        }
        None => {
            if !(a.variance > 0.0) {
                return Err(Failure::Usage("variance must be positive".into()));
            }
            gaussian_dataset(a.samples, a.dim, a.variance, &mut rng_from_seed(seed))
        }
    };
    let dim = data.first().map_or(0, Vec::len);
    let model = match a.family.as_str() {
        "isotropic_gaussian_fit" => ParametricScoreModel::isotropic(a.init)?,
        "tiny_mlp" => ParametricScoreModel::tiny_mlp(dim, &a.hidden, seed)?,
        other => return Err(Failure::Usage(format!("unknown score family {other:?}"))),
    };
    let schedule = match &g.config {
        Some(_) => load_config(g)?.sde,
        None => Default::default(),
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed,
    };
    let out = train_dsm(&model, &schedule, &data, &cfg)?;
    let dir = out_dir(g, None);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    write_checkpoint(&dir.join("checkpoint.bin"), &out.model)?;
    let family = serde_json::to_string_pretty(out.model.family()).map_err(Error::from)?;
    fs::write(dir.join("family.json"), family + "\n").map_err(Error::from)?;
    let mut loss = String::from("step,loss\n");
    for (i, l) in out.loss_trace.iter().enumerate() {
        loss.push_str(&format!("{i},{l:.9e}\n"));
    }
    fs::write(dir.join("loss.csv"), loss).map_err(Error::from)?;
    if out.model.family() == &score_recon::score::ScoreFamily::IsotropicGaussianFit {
        println!("c = {:.6}", out.model.params()[0]);
    }
    println!("{}", dir.join("checkpoint.bin").display());
    Ok(())
}

fn selftest(g: &Global) -> CliResult<()> {
    let checks = run_selftest(g.seed.unwrap_or(0))?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    if g.threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    match &cli.command {
        Command::Phantom { kind, side } => phantom(g, kind.as_deref(), *side),
        Command::Measure { input } => measure(g, input),
        Command::Reconstruct { input, chains } => reconstruct(g, input, *chains),
        Command::Tune { eta, lambda } => tune(g, eta.clone(), lambda.clone()),
        Command::Eval => eval(g),
        Command::TrainScore(a) => train_score(g, a),
        Command::Selftest => selftest(g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Invariant(m) | Failure::Io(m) => m,
            };
            eprintln!("score-recon: {msg}");
            ExitCode::from(f.code())
        }
    }
}
