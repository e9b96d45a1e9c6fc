//! PSNR, SSIM and mean/standard-deviation aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_range(data_range: f64) -> Result<()> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::domain("data_range must be positive"));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    x.same_shape(reference)?;
    check_range(data_range)?;
    let n = x.len() as f64;
    let mse = x
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable weighted mean over every fully contained window.
fn filter_valid(data: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (vr, vc) = (rows - k + 1, cols - k + 1);
    let mut horiz = vec![0.0; rows * vc];
    for r in 0..rows {
        for c in 0..vc {
            horiz[r * vc + c] = (0..k).map(|j| taps[j] * data[r * cols + c + j]).sum();
        }
    }
    let mut out = vec![0.0; vr * vc];
    for r in 0..vr {
        for c in 0..vc {
            out[r * vc + c] = (0..k).map(|i| taps[i] * horiz[(r + i) * vc + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over 11x11 Gaussian windows (sigma 1.5),
/// population statistics, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    x.same_shape(reference)?;
    check_range(data_range)?;
    let (rows, cols) = (x.rows, x.cols);
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "image {rows}x{cols} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps();
    let a = &x.data;
    let b = &reference.data;
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<_>>();
    let mu_a = filter_valid(a, rows, cols, &taps);
    let mu_b = filter_valid(b, rows, cols, &taps);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), rows, cols, &taps);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), rows, cols, &taps);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), rows, cols, &taps);
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub n_images: usize,
}

/// Sample mean and standard deviation (`n - 1` denominator; zero for one value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("cannot aggregate an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Aggregates per-image `(psnr, ssim)` pairs.
pub fn aggregate(values: &[(f64, f64)]) -> Result<MetricReport> {
    let p: Vec<f64> = values.iter().map(|v| v.0).collect();
    let s: Vec<f64> = values.iter().map(|v| v.1).collect();
    let (psnr_mean, psnr_std) = mean_std(&p)?;
    let (ssim_mean, ssim_std) = mean_std(&s)?;
    Ok(MetricReport {
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        n_images: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Writes the per-image CSV followed by `mean` and `std` summary rows.
pub fn write_report_csv<W: Write>(mut w: W, rows: &[ImageScore]) -> Result<MetricReport> {
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.psnr_db, r.ssim)).collect();
    let report = aggregate(&pairs)?;
    writeln!(w, "image_id,psnr_db,ssim")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6}", r.image_id, r.psnr_db, r.ssim)?;
    }
    writeln!(w, "mean,{:.6},{:.6}", report.psnr_mean, report.ssim_mean)?;
    writeln!(w, "std,{:.6},{:.6}", report.psnr_std, report.ssim_std)?;
    Ok(report)
}

/// Scores a reconstruction against ground truth with the data range set to
/// the ground-truth maximum. SSIM is NaN for images smaller than the window.
pub fn score_image(image_id: impl Into<String>, x: &Image, truth: &Image) -> Result<ImageScore> {
    let range = truth.max();
    let range = if range > 0.0 { range } else { 1.0 };
    Ok(ImageScore {
        image_id: image_id.into(),
        psnr_db: psnr(x, truth, range)?,
        ssim: if truth.rows < SSIM_WINDOW || truth.cols < SSIM_WINDOW {
            f64::NAN
        } else {
            ssim(x, truth, range)?
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, rng_from_seed};

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

    #[test]
    fn psnr_cases() {
        let a = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        let b = Image::new(1, 2, vec![0.0, 0.5]).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 99.0);
        assert!((psnr(&a, &b, 1.0).unwrap() - 9.030899869919435).abs() < 1e-10);
        assert!(psnr(&a, &Image::zeros(2, 1), 1.0).is_err());
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let (x, _) = pattern(16, 16);
        let mut rng = rng_from_seed(3);
        let z = normal_vec(&mut rng, x.len());
        let mut prev = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let noisy = Image::new(16, 16, x.data.iter().zip(&z).map(|(a, b)| a + sigma * b).collect()).unwrap();
            let p = psnr(&noisy, &x, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // scikit-image 0.25 structural_similarity with gaussian_weights=True,
        // sigma=1.5, use_sample_covariance=False
        let (x, y) = pattern(24, 20);
        assert!((ssim(&x, &y, 1.0).unwrap() - 0.8030807907381283).abs() < 1e-10);
        let c1 = Image::new(16, 16, vec![0.2; 256]).unwrap();
        let c2 = Image::new(16, 16, vec![0.7; 256]).unwrap();
        assert!((ssim(&c1, &c2, 1.0).unwrap() - 0.5283908696472038).abs() < 1e-6);
    }

    #[test]
    fn ssim_identities() {
        let (x, y) = pattern(24, 20);
        assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&x, &y, 1.0).unwrap(), ssim(&y, &x, 1.0).unwrap());
        assert!(ssim(&Image::zeros(10, 20), &Image::zeros(10, 20), 1.0).is_err());
    }

    #[test]
    fn aggregation() {
        let r = aggregate(&[(1.0, 0.1), (2.0, 0.2), (3.0, 0.3)]).unwrap();
        assert_eq!((r.psnr_mean, r.psnr_std, r.n_images), (2.0, 1.0, 3));
        let single = aggregate(&[(5.0, 0.5)]).unwrap();
        assert_eq!((single.psnr_mean, single.psnr_std), (5.0, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn report_rows() {
        let rows = vec![
            ImageScore { image_id: "img_000".into(), psnr_db: 30.0, ssim: 0.9 },
            ImageScore { image_id: "img_001".into(), psnr_db: 32.0, ssim: 0.8 },
        ];
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image_id,psnr_db,ssim");
        assert_eq!(lines[1], "img_000,30.000000,0.900000");
        assert_eq!(lines[3], "mean,31.000000,0.850000");
        assert_eq!(lines.len(), 5);
    }
}
