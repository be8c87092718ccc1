//! Feature similarity (FSIM): phase congruency from a log-Gabor filter bank
//! plus Scharr gradient magnitude, pooled with max-PC weights. Constants
//! follow the reference formulation; luminance is scaled to `[0, 255]`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{AfhError, Result};
use crate::image::{to_luminance, Image};

const N_SCALE: usize = 4;
const N_ORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ON_F: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const PC_EPS: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;
const T1: f64 = 0.85;
const T2: f64 = 160.0;
const MIN_DIM: usize = 32;

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        let (rf, cf) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in data.chunks_exact_mut(cols) {
            rf.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                col[r] = data[r * cols + c];
            }
            cf.process(&mut col);
            for r in 0..rows {
                data[r * cols + c] = col[r];
            }
        }
        if inverse {
            let s = 1.0 / (rows * cols) as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Frequency coordinates normalized to `[-0.5, 0.5]`, already quadrant
/// shifted so that zero frequency sits at index 0.
fn shifted_range(n: usize) -> Vec<f64> {
    let centered: Vec<f64> = if n % 2 == 1 {
        let half = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - half) / (n - 1).max(1) as f64).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    };
    (0..n).map(|i| centered[(i + n / 2) % n]).collect()
}

/// Average of the two middle values for even counts.
fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase congruency map of a `rows x cols` image (row-major).
pub fn phase_congruency(im: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let n = rows * cols;
    let fft = Fft2::new(rows, cols);
    let mut image_fft: Vec<Complex64> = im.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.transform(&mut image_fft, false);

    let xs = shifted_range(cols);
    let ys = shifted_range(rows);
    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let (x, y) = (xs[c], ys[r]);
            let rad = (x * x + y * y).sqrt();
            lowpass[i] = 1.0 / (1.0 + (rad / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER));
            radius[i] = rad;
            let theta = (-y).atan2(x);
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }
    radius[0] = 1.0;

    let log_gabor: Vec<Vec<f64>> = (0..N_SCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ON_F.ln().powi(2);
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / denom).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / N_ORIENT as f64 / D_THETA_ON_SIGMA;
    let root_n = (n as f64).sqrt();
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];

    for o in 0..N_ORIENT {
        let angle = o as f64 * PI / N_ORIENT as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut responses: Vec<Vec<Complex64>> = Vec::with_capacity(N_SCALE);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(N_SCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            let mut spatial: Vec<Complex64> =
                filter.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.transform(&mut spatial, true);
            spatial_filters.push(spatial.iter().map(|v| v.re * root_n).collect());
            let mut eo: Vec<Complex64> =
                image_fft.iter().zip(&filter).map(|(z, &f)| z * f).collect();
            fft.transform(&mut eo, true);
            for i in 0..n {
                sum_an[i] += eo[i].norm();
                sum_e[i] += eo[i].re;
                sum_o[i] += eo[i].im;
            }
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            responses.push(eo);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + PC_EPS;
            let mean_e = sum_e[i] / x_energy;
            let mean_o = sum_o[i] / x_energy;
            for eo in &responses {
                let (e, od) = (eo[i].re, eo[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }

        let median_e2n = median(responses[0].iter().map(|z| z.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut sum_an2 = 0.0;
        for f in &spatial_filters {
            sum_an2 += f.iter().map(|v| v * v).sum::<f64>();
        }
        let mut sum_ai_aj = 0.0;
        for si in 0..N_SCALE - 1 {
            for sj in si + 1..N_SCALE {
                sum_ai_aj += spatial_filters[si]
                    .iter()
                    .zip(&spatial_filters[sj])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_ai_aj;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (est_noise_energy + NOISE_K * est_noise_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += (energy[i] - threshold).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all.iter().zip(&an_all).map(|(e, a)| e / a).collect()
}

/// Zero-padded 2-D convolution with a 3x3 kernel, output the size of the input.
fn conv3_same(im: &[f64], rows: usize, cols: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (a, krow) in k.iter().enumerate() {
                for (b, &kv) in krow.iter().enumerate() {
                    let sr = r as i64 + 1 - a as i64;
                    let sc = c as i64 + 1 - b as i64;
                    if sr >= 0 && sc >= 0 && (sr as usize) < rows && (sc as usize) < cols {
                        acc += kv * im[sr as usize * cols + sc as usize];
                    }
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

fn gradient_magnitude(im: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let s = 1.0 / 16.0;
    let dx = [[3.0 * s, 0.0, -3.0 * s], [10.0 * s, 0.0, -10.0 * s], [3.0 * s, 0.0, -3.0 * s]];
    let dy = [[3.0 * s, 10.0 * s, 3.0 * s], [0.0; 3], [-3.0 * s, -10.0 * s, -3.0 * s]];
    let gx = conv3_same(im, rows, cols, &dx);
    let gy = conv3_same(im, rows, cols, &dy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// `F x F` box average ('same' alignment, zero padding) sampled every `F` pixels.
fn downsample(im: &[f64], rows: usize, cols: usize, f: usize) -> (Vec<f64>, usize, usize) {
    if f == 1 {
        return (im.to_vec(), rows, cols);
    }
    let off = f / 2;
    let at = |r: i64, c: i64| {
        if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
            im[r as usize * cols + c as usize]
        } else {
            0.0
        }
    };
    let (or, oc) = (rows.div_ceil(f), cols.div_ceil(f));
    let mut out = Vec::with_capacity(or * oc);
    for r in (0..rows).step_by(f) {
        for c in (0..cols).step_by(f) {
            let mut acc = 0.0;
            for i in 0..f {
                for j in 0..f {
                    acc += at(
                        (r + off) as i64 - i as i64,
                        (c + off) as i64 - j as i64,
                    );
                }
            }
            out.push(acc / (f * f) as f64);
        }
    }
    (out, or, oc)
}

/// FSIM of two images of equal size; each side must be at least 32 pixels.
pub fn fsim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(AfhError::Dimension(format!(
            "metric inputs {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    let (rows, cols) = (a.height(), a.width());
    if rows.min(cols) < MIN_DIM {
        return Err(AfhError::TooSmall(format!(
            "FSIM needs at least {MIN_DIM}x{MIN_DIM}, got {rows}x{cols}"
        )));
    }
    let scaled = |img: &Image| -> Result<Vec<f64>> {
        Ok(to_luminance(img)?.data().iter().map(|v| v * 255.0).collect())
    };
    let f = ((rows.min(cols) as f64 / 256.0).round() as usize).max(1);
    let (y1, r, c) = downsample(&scaled(a)?, rows, cols, f);
    let (y2, ..) = downsample(&scaled(b)?, rows, cols, f);
    let pc1 = phase_congruency(&y1, r, c);
    let pc2 = phase_congruency(&y2, r, c);
    let g1 = gradient_magnitude(&y1, r, c);
    let g2 = gradient_magnitude(&y2, r, c);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..r * c {
        let pc_sim = (2.0 * pc1[i] * pc2[i] + T1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + T1);
        let g_sim = (2.0 * g1[i] * g2[i] + T2) / (g1[i] * g1[i] + g2[i] * g2[i] + T2);
        let pcm = pc1[i].max(pc2[i]);
        num += g_sim * pc_sim * pcm;
        den += pcm;
    }
    Ok(num / den)
}
