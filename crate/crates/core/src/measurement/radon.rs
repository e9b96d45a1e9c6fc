//! Parallel-beam Radon transform and filtered back projection.
//!
//! Images are `side x side`, row-major, with the rotation center at
//! `((side - 1) / 2, (side - 1) / 2)`. Sinograms are angle-major with
//! `n_det` unit-spaced bins centered on the rotation axis and angles
//! `k * 180 / n_angles` degrees.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Radon {
    side: usize,
    n_angles: usize,
    n_det: usize,
    trig: Vec<(f64, f64)>,
    ramp: Arc<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Radon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Radon")
            .field("side", &self.side)
            .field("n_angles", &self.n_angles)
            .field("n_det", &self.n_det)
            .finish()
    }
}

/// Step between samples along a ray, in pixels.
const RAY_STEP: f64 = 0.5;

impl Radon {
    pub fn new(side: usize, n_angles: usize, n_det: usize) -> Self {
        let trig = (0..n_angles)
            .map(|k| {
                let th = PI * k as f64 / n_angles as f64;
                (th.cos(), th.sin())
            })
            .collect();
        let pad = (2 * n_det).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(pad);
        let ifft = planner.plan_fft_inverse(pad);
        Self {
            side,
            n_angles,
            n_det,
            trig,
            ramp: Arc::new(ram_lak(pad, &*fft)),
            fft,
            ifft,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn image_len(&self) -> usize {
        self.side * self.side
    }

    pub fn sinogram_len(&self) -> usize {
        self.n_angles * self.n_det
    }

    fn center(&self) -> f64 {
        (self.side as f64 - 1.0) / 2.0
    }

    fn det_center(&self) -> f64 {
        (self.n_det as f64 - 1.0) / 2.0
    }

    /// Line integrals for every angle, or only for the angles flagged in
    /// `angles` (other rows are left zero).
    pub fn forward(&self, image: &[f64], angles: Option<&[bool]>) -> Vec<f64> {
        debug_assert_eq!(image.len(), self.image_len());
        let mut sino = vec![0.0; self.sinogram_len()];
        let c = self.center();
        let dc = self.det_center();
        let half = (self.side as f64) * std::f64::consts::FRAC_1_SQRT_2 + 1.0;
        let n_samples = (2.0 * half / RAY_STEP).ceil() as usize + 1;
        for (a, &(cos, sin)) in self.trig.iter().enumerate() {
            if angles.is_some_and(|f| !f[a]) {
                continue;
            }
            let row = &mut sino[a * self.n_det..(a + 1) * self.n_det];
            for (d, out) in row.iter_mut().enumerate() {
                let s = d as f64 - dc;
                let Some((k0, k1)) = self.sample_range(s, cos, sin, half, n_samples) else {
                    continue;
                };
                let mut acc = 0.0;
                for k in k0..k1 {
                    let tau = -half + k as f64 * RAY_STEP;
                    // point s * (cos, sin) + tau * (-sin, cos) in (x = col, y = row) offsets
                    let x = s * cos - tau * sin + c;
                    let y = s * sin + tau * cos + c;
                    acc += self.bilinear(image, x, y);
                }
                *out = acc * RAY_STEP;
            }
        }
        sino
    }

    /// Sample indices whose points can touch the image support
    /// `[-1, side]^2`; all other samples are exactly zero.
    fn sample_range(&self, s: f64, cos: f64, sin: f64, half: f64, n_samples: usize) -> Option<(usize, usize)> {
        let c = self.center();
        let (lo, hi) = (-1.0 - c, self.side as f64 - c);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        // x - c = s cos - tau sin, y - c = s sin + tau cos
        for (p, q) in [(s * cos, -sin), (s * sin, cos)] {
            if q.abs() < 1e-12 {
                if p < lo || p > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - p) / q, (hi - p) / q);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 > t1 {
            return None;
        }
        let k0 = ((t0 + half) / RAY_STEP).floor().max(0.0) as usize;
        let k1 = (((t1 + half) / RAY_STEP).ceil() as usize + 1).min(n_samples);
        (k0 < k1).then_some((k0, k1))
    }

    fn bilinear(&self, image: &[f64], x: f64, y: f64) -> f64 {
        let n = self.side as isize;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        if x0 < -1 || y0 < -1 || x0 >= n || y0 >= n {
            return 0.0;
        }
        if x0 >= 0 && y0 >= 0 && x0 + 1 < n && y0 + 1 < n {
            let k = (y0 * n + x0) as usize;
            let w = self.side;
            return (1.0 - fy) * ((1.0 - fx) * image[k] + fx * image[k + 1])
                + fy * ((1.0 - fx) * image[k + w] + fx * image[k + w + 1]);
        }
        let px = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= n || j >= n {
                0.0
            } else {
                image[(i * n + j) as usize]
            }
        };
        (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1))
            + fy * ((1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1))
    }

    /// Ramp-filtered back projection over all angles. Rows that are entirely
    /// zero contribute nothing and are skipped.
    pub fn fbp(&self, sinogram: &[f64]) -> Vec<f64> {
        self.fbp_weighted(sinogram, PI / self.n_angles as f64)
    }

    /// Filtered back projection using only `rows`, weighted as if they were
    /// the complete, evenly spread angle set.
    pub fn fbp_subset(&self, sinogram: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut masked = vec![0.0; sinogram.len()];
        for &a in rows {
            let r = a * self.n_det..(a + 1) * self.n_det;
            masked[r.clone()].copy_from_slice(&sinogram[r]);
        }
        self.fbp_weighted(&masked, PI / rows.len().max(1) as f64)
    }

    fn fbp_weighted(&self, sinogram: &[f64], weight: f64) -> Vec<f64> {
        debug_assert_eq!(sinogram.len(), self.sinogram_len());
        let pad = self.ramp.len();
        let mut image = vec![0.0; self.image_len()];
        let mut buf = vec![Complex64::default(); pad];
        let mut filtered = vec![0.0; self.n_det];
        let c = self.center();
        let dc = self.det_center();
        let n = self.side;
        for (a, &(cos, sin)) in self.trig.iter().enumerate() {
            let row = &sinogram[a * self.n_det..(a + 1) * self.n_det];
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            buf.iter_mut().for_each(|z| *z = Complex64::default());
            for (b, &v) in buf.iter_mut().zip(row) {
                b.re = v;
            }
            self.fft.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(self.ramp.iter()) {
                *b *= *h;
            }
            self.ifft.process(&mut buf);
            for (f, b) in filtered.iter_mut().zip(&buf) {
                *f = b.re / pad as f64;
            }
            for i in 0..n {
                let y = i as f64 - c;
                for j in 0..n {
                    let s = (j as f64 - c) * cos + y * sin + dc;
                    let s0 = s.floor();
                    let k = s0 as isize;
                    if k < -1 || k >= self.n_det as isize {
                        continue;
                    }
                    let f = s - s0;
                    let get = |k: isize| {
                        if k < 0 || k >= self.n_det as isize {
                            0.0
                        } else {
                            filtered[k as usize]
                        }
                    };
                    image[i * n + j] += (1.0 - f) * get(k) + f * get(k + 1);
                }
            }
        }
        image.iter_mut().for_each(|v| *v *= weight);
        image
    }
}

/// Frequency response of the band-limited ramp filter, built from its
/// spatial kernel so it carries no DC bias.
fn ram_lak(pad: usize, fft: &dyn Fft<f64>) -> Vec<f64> {
    let mut h = vec![Complex64::default(); pad];
    h[0].re = 0.25;
    for k in 1..pad / 2 {
        if k % 2 == 1 {
            let v = -1.0 / (PI * k as f64).powi(2);
            h[k].re = v;
            h[pad - k].re = v;
        }
    }
    fft.process(&mut h);
    h.iter().map(|z| z.re).collect()
}
