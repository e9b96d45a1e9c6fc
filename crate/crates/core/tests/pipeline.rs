use std::fs;

use score_recon::experiment::{
    reference_config, run_experiment, tune_hyperparams, ExperimentConfig, MaskSpec, PriorSpec, Problem, Split,
    TransformSpec, TuningGrid,
};
use score_recon::io::{mask_to_text, read_array, write_checkpoint};
use score_recon::score::{ParametricScoreModel, ScoreFamily};
use sha2::{Digest, Sha256};

fn tiny_ct() -> ExperimentConfig {
    let mut c = reference_config("sparse_view_ct_lidc").unwrap();
    c.side = 24;
    c.transform = TransformSpec::Radon { n_angles: 36 };
    c.mask = MaskSpec::SparseView { n_angles_kept: 8 };
    c.prior = PriorSpec::EllipseGmm {
        components: 3,
        sigma: 0.05,
        seed: 2,
    };
    c.sampler.n_steps = 20;
    c.n_test_images = 3;
    c.n_validation_images = 2;
    c
}

#[test]
fn experiment_writes_hashed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_ct();
    c.output_dir = dir.path().join("run");
    let out = run_experiment(&c, Some(2)).unwrap();
    assert_eq!(out.images.len(), 3);
    assert_eq!(out.report.n_images, 3);
    for name in ["report.csv", "baseline.csv", "mask.txt", "manifest.json", "images/img_000_recon.sba"] {
        assert!(c.output_dir.join(name).exists(), "{name}");
    }
    for (rel, hash) in &out.manifest.files {
        let bytes = fs::read(c.output_dir.join(rel)).unwrap();
        let got: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(&got, hash, "{rel}");
    }
    let report = fs::read_to_string(c.output_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "image_id,psnr_db,ssim");
    assert_eq!(lines.len(), 1 + 3 + 2);
    assert!(lines[4].starts_with("mean,") && lines[5].starts_with("std,"));

    let recon = read_array(&c.output_dir.join("images/img_001_recon.sba")).unwrap().to_image().unwrap();
    assert_eq!(recon, out.images[1].recon);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(c.output_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert!(manifest.get("wall_time").is_none());
}

#[test]
fn config_files_resolve_relative_paths_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut mri = reference_config("undersampled_mri_brats").unwrap();
    mri.side = 16;
    mri.prior = PriorSpec::Gaussian { mean: 0.5, std: 0.2 };
    let cartesian = Problem::new(&mri).unwrap();
    fs::write(dir.path().join("kspace.txt"), mask_to_text(cartesian.operator.mask())).unwrap();
    mri.mask = MaskSpec::File { path: "kspace.txt".into() };
    let path = dir.path().join("exp.json");
    fs::write(&path, serde_json::to_string_pretty(&mri).unwrap()).unwrap();
    let loaded = ExperimentConfig::load(&path, &[]).unwrap();
    assert_eq!(Problem::new(&loaded).unwrap().operator.mask(), cartesian.operator.mask());

    let mut c = tiny_ct();
    c.prior = PriorSpec::Checkpoint {
        path: "ckpt.bin".into(),
        family: ScoreFamily::IsotropicGaussianFit,
    };
    c.phantom = score_recon::phantom::PhantomKind::RandomEllipses;
    write_checkpoint(&dir.path().join("ckpt.bin"), &ParametricScoreModel::isotropic(0.3).unwrap()).unwrap();
    fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();
    let loaded = ExperimentConfig::load(&path, &["seed=11".into(), "sampler.n_steps=5".into()]).unwrap();
    assert_eq!(loaded.seed, 11);
    assert_eq!(loaded.sampler.n_steps, 5);
    match &loaded.prior {
        PriorSpec::Checkpoint { path, .. } => assert_eq!(path, &dir.path().join("ckpt.bin")),
        other => panic!("{other:?}"),
    }
    let p = Problem::new(&loaded).unwrap();
    let o = p.process(Split::Test, 0).unwrap();
    assert!(o.score.psnr_db.is_finite());
    assert!(ExperimentConfig::load(&dir.path().join("missing.json"), &[]).is_err());
}

#[test]
fn tuning_picks_the_best_grid_point() {
    let c = tiny_ct();
    let grid = TuningGrid {
        eta: vec![0.1, 0.3],
        lambda: vec![0.0, 1.0],
    };
    let out = tune_hyperparams(&c, &grid, Some(2)).unwrap();
    assert_eq!(out.table.len(), 4);
    let best = out
        .table
        .iter()
        .find(|r| r.eta == out.best_eta && r.lambda == out.best_lambda)
        .unwrap();
    assert!(out.table.iter().all(|r| r.psnr_mean <= best.psnr_mean));
    // unconditional sampling ignores the measurement and cannot win
    assert_eq!(out.best_lambda, 1.0);
    let again = tune_hyperparams(&c, &grid, Some(1)).unwrap();
    assert_eq!(out, again);
    let mut csv = Vec::new();
    out.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("eta,lambda,mean_psnr_db,mean_ssim\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn mri_and_metal_tasks_run() {
    let mut mri = reference_config("undersampled_mri_brats").unwrap();
    mri.side = 32;
    mri.mask = MaskSpec::Cartesian {
        acceleration: 4,
        center_fraction: 0.1,
    };
    mri.sampler.n_steps = 40;
    mri.prior = PriorSpec::EllipseGmm {
        components: 3,
        sigma: 0.05,
        seed: 2,
    };
    let mut mar = reference_config("metal_artifact_removal_lidc").unwrap();
    mar.side = 32;
    mar.transform = TransformSpec::Radon { n_angles: 48 };
    mar.sampler.n_steps = 40;
    mar.prior = mri.prior.clone();
    for c in [mri, mar] {
        let p = Problem::new(&c).unwrap();
        let o = p.process(Split::Test, 0).unwrap();
        assert!(o.recon.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(o.score.psnr_db > 15.0, "{:?}: {}", c.task, o.score.psnr_db);
        assert!(o.baseline_score.psnr_db.is_finite());
    }
}

#[test]
fn unconditional_grid_point_loses_on_gaussian_task() {
    let mut c = reference_config("synthetic_gaussian").unwrap();
    c.side = 4;
    c.transform = TransformSpec::Dct;
    c.mask = MaskSpec::Cartesian {
        acceleration: 2,
        center_fraction: 0.25,
    };
    c.sampler.n_steps = 50;
    // with an isotropic prior the unobserved coefficients are independent of
    // the observed ones, so only a run without the terminal projection can
    // tell the grid points apart
    c.sampler.final_projection = false;
    c.n_validation_images = 6;
    let grid = TuningGrid {
        eta: vec![0.05, 0.16],
        lambda: vec![0.0, 0.3, 1.0],
    };
    let out = tune_hyperparams(&c, &grid, None).unwrap();
    assert!(out.best_lambda > 0.0, "{:?}", out.table);
    let single = TuningGrid {
        eta: vec![0.16],
        lambda: vec![0.0],
    };
    let out = tune_hyperparams(&c, &single, None).unwrap();
    assert_eq!((out.best_eta, out.best_lambda), (0.16, 0.0));
}
