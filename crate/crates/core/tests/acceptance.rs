//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use score_recon::consistency::sample_y_t;
use score_recon::experiment::{
    process_images, reconstruct_chains, reference_config, run_experiment, write_chains, ExperimentConfig, MaskSpec,
    PriorSpec, Problem, Split, TransformSpec,
};
use score_recon::image::Image;
use score_recon::measurement::{real_part, to_complex, Mask, MeasurementOperator, Transform, C64};
use score_recon::metrics::{psnr, ssim, PSNR_CAP_DB};
use score_recon::rng::{normal_vec, rng_from_seed, standard_normal, Purpose, StreamSeed};
use score_recon::sampler::{sample_conditional, sample_conditional_chains, SamplerConfig};
use score_recon::score::{
    draw_dsm_noise, dsm_loss_and_grad, dsm_loss_with, gaussian_dataset, train_dsm, DsmDraw, GaussianPrior,
    ParametricScoreModel, TrainConfig,
};
use score_recon::sde::SdeSchedule;
use score_recon::selftest::{prescribed_coefficient_error, oracle_error, projection_error, random_instance, random_mask, random_transform};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(1001);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let inst = random_instance(&mut rng, 64, k % 2 == 1).map_err(|e| e.to_string())?;
        worst = worst.max(oracle_error(&inst).map_err(|e| e.to_string())?);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-8 && secs < 30.0,
        format!("1000 instances, max relative error {worst:.2e}, {secs:.1} s"),
    )
}

fn exact_consistency() -> Outcome {
    let mut rng = rng_from_seed(1002);
    let mut worst: f64 = 0.0;
    for k in 0..90 {
        let inst = random_instance(&mut rng, 48, k % 2 == 1).map_err(|e| e.to_string())?;
        worst = worst.max(projection_error(&inst).map_err(|e| e.to_string())?);
    }
    // terminal projection after a short conditional run on exact transforms
    let ve = SdeSchedule::default();
    for k in 0..10u64 {
        let (t, n) = if k % 2 == 0 {
            (Transform::dct(6, 6), 36)
        } else {
            (random_transform(&mut rng, 20, false).map_err(|e| e.to_string())?, 20)
        };
        let op = MeasurementOperator::new(t, random_mask(&mut rng, n).unwrap(), 0.0).unwrap();
        let y = op.apply_a_real(&normal_vec(&mut rng, n)).unwrap();
        let cfg = SamplerConfig::pc(20, 1, 0.16).with_lambda(0.5).with_final_projection(true).with_seed(k);
        let r = sample_conditional(&cfg, &ve, &GaussianPrior::standard(n), &op, &y, 0).unwrap();
        let ax = op.apply_a_real(&r.x0_hat).unwrap();
        let err = ax.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    ensure(worst <= 1e-9, format!("100 cases, max |Ax - y|inf / |y|inf = {worst:.2e}"))
}

fn evaluation_accounting() -> Outcome {
    let prior = GaussianPrior::standard(2);
    let ve = SdeSchedule::default();
    let ald = SamplerConfig::ald(700, 3, 0.16);
    let pc = SamplerConfig::pc(1000, 1, 0.16);
    let op = MeasurementOperator::new(Transform::Identity(2), Mask::new(vec![true, false]).unwrap(), 0.0).unwrap();
    let y = vec![C64::new(0.3, 0.0)];
    let ald_run = sample_conditional(&ald, &ve, &prior, &op, &y, 0).unwrap().score_evaluations;
    let pc_run = sample_conditional(&pc, &ve, &prior, &op, &y, 0).unwrap().score_evaluations;
    let counts = [ald.expected_score_evaluations(), ald_run, pc.expected_score_evaluations(), pc_run];
    ensure(
        counts == [2100, 2100, 2000, 2000],
        format!("ald 700x3 -> {ald_run}, pc 1000+1 -> {pc_run}"),
    )
}

fn posterior_recovery() -> Outcome {
    let start = Instant::now();
    let (m, n) = (8, 16);
    let mut rng = rng_from_seed(42);
    let a = DMatrix::from_fn(m, n, |_, _| standard_normal(&mut rng));
    let x = normal_vec(&mut rng, n);
    let op = MeasurementOperator::from_matrix(&a, 0.0).unwrap();
    let y = op.apply_a_real(&x).unwrap();

    // conditional of N(0, I) given A x = y: mean A^T (A A^T)^-1 y,
    // covariance I - A^T (A A^T)^-1 A
    let gram_inv = (&a * a.transpose()).try_inverse().ok_or("singular Gram matrix")?;
    let yv = nalgebra::DVector::from_iterator(m, y.iter().map(|v| v.re));
    let mean = a.transpose() * &gram_inv * yv;
    let cov = DMatrix::identity(n, n) - a.transpose() * &gram_inv * &a;

    let cfg = SamplerConfig::pc(500, 1, 0.01).with_lambda(0.9).with_final_projection(true).with_seed(7);
    let chains = 2000;
    let runs = sample_conditional_chains(&cfg, &SdeSchedule::default(), &GaussianPrior::standard(n), &op, &y, chains)
        .map_err(|e| e.to_string())?;
    let k = chains as f64;
    let mut mean_err: f64 = 0.0;
    let mut var_err: f64 = 0.0;
    for i in 0..n {
        let xs: Vec<f64> = runs.iter().map(|r| r.x0_hat[i]).collect();
        let mu = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0);
        mean_err = mean_err.max((mu - mean[i]).abs());
        var_err = var_err.max((var / cov[(i, i)] - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        mean_err <= 0.05 && var_err <= 0.15 && secs < 300.0,
        format!("max mean error {mean_err:.4}, max variance error {:.1}%, {secs:.1} s", var_err * 100.0),
    )
}

/// `(alpha, beta)` from the closed-form marginals of both schedules.
fn marginals(t: f64, vp: bool) -> (f64, f64) {
    if vp {
        let alpha = (-0.25 * t * t * (20.0 - 0.1) - 0.5 * t * 0.1).exp();
        (alpha, (1.0 - alpha * alpha).sqrt())
    } else {
        (1.0, 0.01 * 1000f64.powf(t))
    }
}

fn moment_errors(draws: &[Vec<f64>], mean: &[f64], cov: &DMatrix<f64>) -> (f64, f64) {
    let k = draws.len() as f64;
    let d = mean.len();
    let mut emp_mean = vec![0.0; d];
    for x in draws {
        for (m, v) in emp_mean.iter_mut().zip(x) {
            *m += v / k;
        }
    }
    let mut emp_cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = nalgebra::DVector::from_iterator(d, x.iter().zip(&emp_mean).map(|(v, m)| v - m));
        emp_cov += &c * c.transpose() / (k - 1.0);
    }
    // largest standardized mean error, relative Frobenius covariance error
    let z = (0..d)
        .map(|i| (emp_mean[i] - mean[i]).abs() / (cov[(i, i)] / k).sqrt())
        .fold(0.0, f64::max);
    (z, (emp_cov - cov).norm() / cov.norm())
}

fn diffusion_moments() -> Outcome {
    let draws = 10_000;
    let mut rng = rng_from_seed(1005);
    let x0 = normal_vec(&mut rng, 4);
    let a = DMatrix::from_fn(3, 5, |_, _| standard_normal(&mut rng));
    let op = MeasurementOperator::from_matrix(&a, 0.0).unwrap();
    let y: Vec<C64> = to_complex(&normal_vec(&mut rng, 3));
    let aat = &a * a.transpose();
    let mut details = Vec::new();
    let mut ok = true;
    for (vp, t) in [(false, 0.3), (false, 0.7), (true, 0.2), (true, 0.6)] {
        let s = if vp { SdeSchedule::vp(0.1, 20.0).unwrap() } else { SdeSchedule::ve(0.01, 10.0).unwrap() };
        let (alpha, beta) = marginals(t, vp);
        let seed = StreamSeed(t.to_bits());
        let mut r1 = seed.stream(0, Purpose::Sampler);
        let xs: Vec<Vec<f64>> = (0..draws).map(|_| s.perturb(&x0, t, &mut r1).unwrap()).collect();
        let mean: Vec<f64> = x0.iter().map(|v| alpha * v).collect();
        let (z1, f1) = moment_errors(&xs, &mean, &(DMatrix::identity(4, 4) * beta * beta));
        let mut r2 = seed.stream(0, Purpose::MeasurementDiffusion);
        let ys: Vec<Vec<f64>> = (0..draws)
            .map(|_| real_part(&sample_y_t(&op, &s, &y, t, &mut r2).unwrap()))
            .collect();
        let mean: Vec<f64> = y.iter().map(|v| alpha * v.re).collect();
        let (z2, f2) = moment_errors(&ys, &mean, &(&aat * beta * beta));
        ok &= z1 <= 4.0 && z2 <= 4.0 && f1 <= 0.1 && f2 <= 0.1;
        details.push(format!("{}@{t}: z {:.2}/{:.2} frob {:.3}/{:.3}", if vp { "vp" } else { "ve" }, z1, z2, f1, f2));
    }
    ensure(ok, details.join("; "))
}

fn dsm_recovery() -> Outcome {
    let ve = SdeSchedule::default();
    let mut rng = rng_from_seed(21);
    let data = gaussian_dataset(1_000_000, 1, 1.0, &mut rng);
    let cfg = TrainConfig {
        steps: 3000,
        batch_size: 16384,
        learning_rate: 1e-2,
        seed: 5,
    };
    let out = train_dsm(&ParametricScoreModel::isotropic(2.0).unwrap(), &ve, &data, &cfg).map_err(|e| e.to_string())?;
    let c = out.model.params()[0];

    let mut worst: f64 = 0.0;
    let models = [
        (ParametricScoreModel::isotropic(0.7).unwrap(), 1),
        (ParametricScoreModel::tiny_mlp(3, &[8, 5], 9).unwrap(), 3),
    ];
    for (model, dim) in models {
        let batch = gaussian_dataset(10, dim, 1.0, &mut rng);
        let draws: Vec<DsmDraw> = draw_dsm_noise(10, dim, &mut rng)
            .into_iter()
            .map(|d| DsmDraw { t: 0.2 + 0.8 * d.t, ..d })
            .collect();
        let (_, grad) = dsm_loss_and_grad(&model, &ve, &batch, &draws).unwrap();
        for i in 0..grad.len() {
            let mut p = model.params().to_vec();
            let h = 1e-6 * p[i].abs().max(1e-2);
            p[i] += h;
            let up = dsm_loss_with(&ParametricScoreModel::from_params(model.family().clone(), p.clone()).unwrap(), &ve, &batch, &draws).unwrap();
            p[i] -= 2.0 * h;
            let down = dsm_loss_with(&ParametricScoreModel::from_params(model.family().clone(), p).unwrap(), &ve, &batch, &draws).unwrap();
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
        }
    }
    ensure(
        (c - 1.0).abs() <= 0.05 && worst <= 1e-4,
        format!("trained c = {c:.4}, max gradient relative error {worst:.2e}"),
    )
}

fn decomposition_algebra() -> Outcome {
    let mut rng = rng_from_seed(1007);
    let mut worst_entry: f64 = 0.0;
    for (m, n) in [(3, 5), (4, 4), (6, 10)] {
        let a = DMatrix::from_fn(m, n, |_, _| standard_normal(&mut rng));
        let op = MeasurementOperator::from_matrix(&a, 0.0).unwrap();
        let e = op.explicit_matrix().unwrap();
        for i in 0..m {
            for j in 0..n {
                worst_entry = worst_entry.max((e[(i, j)] - C64::new(a[(i, j)], 0.0)).norm());
            }
        }
    }
    for n in [5, 9] {
        let t = DMatrix::from_fn(n, n, |i, j| standard_normal(&mut rng) + if i == j { 3.0 } else { 0.0 });
        let mask = random_mask(&mut rng, n).unwrap();
        let op = MeasurementOperator::new(Transform::dense_real(t.clone()).unwrap(), mask.clone(), 0.0).unwrap();
        let e = op.explicit_matrix().unwrap();
        for (r, &row) in mask.observed().iter().enumerate() {
            for j in 0..n {
                worst_entry = worst_entry.max((e[(r, j)] - C64::new(t[(row, j)], 0.0)).norm());
            }
        }
    }

    let mut pad_exact = true;
    for _ in 0..50 {
        let mask = random_mask(&mut rng, 30).unwrap();
        let w: Vec<C64> = (0..mask.m()).map(|_| C64::new(standard_normal(&mut rng), standard_normal(&mut rng))).collect();
        pad_exact &= mask.subsample(&mask.pad(&w).unwrap()).unwrap() == w;
    }

    let mut worst_prescribed: f64 = 0.0;
    for k in 0..100 {
        let inst = random_instance(&mut rng, 32, k % 2 == 1).unwrap();
        worst_prescribed = worst_prescribed.max(prescribed_coefficient_error(&inst, &mut rng).unwrap());
    }
    ensure(
        worst_entry <= 1e-12 && pad_exact && worst_prescribed <= 1e-10,
        format!("max entry error {worst_entry:.2e}, subsample(pad) exact: {pad_exact}, 100 prescribed-coefficient cases max {worst_prescribed:.2e}"),
    )
}

fn pattern(rows: usize, cols: usize) -> (Image, Image) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let (fi, fj) = (i as f64, j as f64);
            let v = 0.5 + 0.4 * (0.3 * fi).sin() * (0.2 * fj).cos();
            x.push(v);
            y.push(v + 0.1 * (0.7 * fi + 0.4 * fj).cos());
        }
    }
    (Image::new(rows, cols, x).unwrap(), Image::new(rows, cols, y).unwrap())
}

fn metric_identities() -> Outcome {
    let a = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
    let b = Image::new(1, 2, vec![0.0, 0.5]).unwrap();
    let cap = psnr(&a, &a, 1.0).unwrap();
    let derived = psnr(&b, &a, 1.0).unwrap();
    let (x, y) = pattern(24, 20);
    let self_ssim = ssim(&x, &x, 1.0).unwrap();
    let sym = ssim(&x, &y, 1.0).unwrap() == ssim(&y, &x, 1.0).unwrap();
    // scikit-image structural_similarity, gaussian_weights=True, sigma=1.5,
    // use_sample_covariance=False
    let reference = (ssim(&x, &y, 1.0).unwrap() - 0.8030807907381283).abs();
    let psnr_sym = psnr(&x, &y, 1.0).unwrap() == psnr(&y, &x, 1.0).unwrap();
    ensure(
        cap == PSNR_CAP_DB
            && (derived - 10.0 * 8f64.log10()).abs() < 1e-10
            && (self_ssim - 1.0).abs() < 1e-12
            && sym
            && psnr_sym
            && reference < 1e-10,
        format!("cap {cap}, derived {derived:.6} dB, ssim(x,x) {self_ssim:.15}, skimage diff {reference:.1e}"),
    )
}

fn ct_config() -> ExperimentConfig {
    let mut c = reference_config("sparse_view_ct_lidc").unwrap();
    c.n_test_images = 32;
    c
}

fn end_to_end_ct() -> Outcome {
    let start = Instant::now();
    let config = ct_config();
    let problem = Problem::new(&config).map_err(|e| e.to_string())?;
    let images = process_images(&problem, Split::Test, config.n_test_images, None).map_err(|e| e.to_string())?;
    let d: Vec<f64> = images.iter().map(|i| i.score.psnr_db - i.baseline_score.psnr_db).collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let se = sd / k.sqrt();
    let sampler = images.iter().map(|i| i.score.psnr_db).sum::<f64>() / k;
    let fbp = images.iter().map(|i| i.baseline_score.psnr_db).sum::<f64>() / k;
    ensure(
        images.len() >= 32 && mean > 3.0 * se,
        format!(
            "{} images, sampler {sampler:.2} dB vs FBP {fbp:.2} dB, paired gain {mean:.2} +- {se:.2} dB, {:.0} s",
            images.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn collect_csv(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut base = ct_config();
    base.side = 32;
    base.transform = TransformSpec::Radon { n_angles: 60 };
    base.mask = MaskSpec::SparseView { n_angles_kept: 12 };
    base.prior = PriorSpec::EllipseGmm { components: 4, sigma: 0.05, seed: 1 };
    base.sampler.n_steps = 30;
    base.n_test_images = 6;
    let mut outputs = Vec::new();
    for threads in [1, 2, 4] {
        let mut c = base.clone();
        c.output_dir = tmp.path().join(format!("eval_{threads}"));
        run_experiment(&c, Some(threads)).map_err(|e| e.to_string())?;
        let problem = Problem::new(&c).unwrap();
        let truth = problem.ground_truth(problem.image_seed(Split::Test, 0)).unwrap();
        let y = problem.measure(&truth, problem.image_seed(Split::Test, 0)).unwrap();
        let chains = reconstruct_chains(&problem, &y, 5, Some(threads)).map_err(|e| e.to_string())?;
        write_chains(&c.output_dir.join("recon"), &chains).map_err(|e| e.to_string())?;
        outputs.push(collect_csv(&c.output_dir));
    }
    let files = outputs[0].len();
    ensure(
        files > 0 && outputs.iter().all(|o| *o == outputs[0]),
        format!("{files} CSV files byte-identical across 1, 2 and 4 threads"),
    )
}

fn main() {
    // `cargo test` passes harness flags such as --quiet; a filter argument
    // selects criteria by number.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("consistency step equals proximal oracle", oracle_equivalence),
        ("exact data consistency at full strength", exact_consistency),
        ("score evaluation accounting", evaluation_accounting),
        ("analytic posterior recovery", posterior_recovery),
        ("perturbation and measurement diffusion moments", diffusion_moments),
        ("denoising score matching optimum", dsm_recovery),
        ("decomposition and mask algebra", decomposition_algebra),
        ("metric identities", metric_identities),
        ("sparse-view CT beats FBP", end_to_end_ct),
        ("thread-count determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {id:>2}: {name} ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2}: {name} ({detail})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
