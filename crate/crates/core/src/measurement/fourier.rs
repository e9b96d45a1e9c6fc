//! Orthonormal 2-D DCT-II and centered unitary 2-D DFT.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustdct::{DctPlanner, TransformType2And3};
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Dct2d {
    rows: usize,
    cols: usize,
    row_plan: Arc<dyn TransformType2And3<f64>>,
    col_plan: Arc<dyn TransformType2And3<f64>>,
}

impl fmt::Debug for Dct2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dct2d").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Dct2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            rows,
            cols,
            row_plan: planner.plan_dct2(cols),
            col_plan: planner.plan_dct2(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut data = x.to_vec();
        self.separable(&mut data, true);
        data
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut data = v.to_vec();
        self.separable(&mut data, false);
        data
    }

    fn separable(&self, data: &mut [f64], forward: bool) {
        let (r, c) = (self.rows, self.cols);
        let mut scratch = vec![0.0; self.row_plan.get_scratch_len().max(self.col_plan.get_scratch_len())];
        for row in data.chunks_exact_mut(c) {
            ortho_1d(&*self.row_plan, row, &mut scratch, forward);
        }
        if r > 1 {
            let mut column = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    column[i] = data[i * c + j];
                }
                ortho_1d(&*self.col_plan, &mut column, &mut scratch, forward);
                for i in 0..r {
                    data[i * c + j] = column[i];
                }
            }
        }
    }
}

// rustdct's DCT-II and DCT-III are unnormalized; rescale to the orthonormal pair.
fn ortho_1d(plan: &dyn TransformType2And3<f64>, buf: &mut [f64], scratch: &mut [f64], forward: bool) {
    let n = buf.len() as f64;
    let w0 = (1.0 / n).sqrt();
    let wk = (2.0 / n).sqrt();
    if forward {
        plan.process_dct2_with_scratch(buf, scratch);
        buf[0] *= w0;
        buf[1..].iter_mut().for_each(|v| *v *= wk);
    } else {
        buf[0] *= 2.0 * w0;
        buf[1..].iter_mut().for_each(|v| *v *= wk);
        plan.process_dct3_with_scratch(buf, scratch);
    }
}

/// Unitary DFT with the zero frequency moved to index `(rows/2, cols/2)`.
#[derive(Clone)]
pub struct Dft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft2d").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Dft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut data = x.to_vec();
        self.fft2(&mut data, true);
        let scale = 1.0 / (self.len() as f64).sqrt();
        let (r, c) = (self.rows, self.cols);
        let mut out = vec![Complex64::default(); data.len()];
        for i in 0..r {
            for j in 0..c {
                out[((i + r / 2) % r) * c + (j + c / 2) % c] = data[i * c + j] * scale;
            }
        }
        out
    }

    pub fn inverse(&self, v: &[Complex64]) -> Vec<Complex64> {
        let (r, c) = (self.rows, self.cols);
        let mut data = vec![Complex64::default(); v.len()];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = v[((i + r / 2) % r) * c + (j + c / 2) % c];
            }
        }
        self.fft2(&mut data, false);
        let scale = 1.0 / (self.len() as f64).sqrt();
        data.iter_mut().for_each(|z| *z *= scale);
        data
    }

    fn fft2(&self, data: &mut [Complex64], forward: bool) {
        let (r, c) = (self.rows, self.cols);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(data);
        if r > 1 {
            let mut column = vec![Complex64::default(); r];
            for j in 0..c {
                for i in 0..r {
                    column[i] = data[i * c + j];
                }
                col.process(&mut column);
                for i in 0..r {
                    data[i * c + j] = column[i];
                }
            }
        }
    }
}
