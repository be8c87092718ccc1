//! Image-quality metrics on the BT.601 luminance of `[0, 1]` images, and
//! dataset-level reports. No border cropping is applied.

mod fsim;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Scalar;
use crate::data::SamplePair;
use crate::episode::{run_episode, EpisodeConfig};
use crate::error::{AfhError, Result};
use crate::image::{to_luminance, Image};
use crate::nets::ParamSet;

pub use fsim::{fsim, phase_congruency};

fn luminance_pair(a: &Image, b: &Image) -> Result<(Image, Image)> {
    if !a.same_dims(b) {
        return Err(AfhError::Dimension(format!(
            "metric inputs {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok((to_luminance(a)?, to_luminance(b)?))
}

/// `10 log10(1 / MSE)` in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = luminance_pair(a, b)?;
    let mse = ya.mse(&yb)?;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-10.0 * mse.log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with the normalized Gaussian window.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03,
/// dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = luminance_pair(a, b)?;
    let (h, w) = (ya.height(), ya.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(AfhError::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (x, y) = (ya.data(), yb.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let (mu_a, oh, ow) = filter_valid(x, h, w, &k);
    let (mu_b, ..) = filter_valid(y, h, w, &k);
    let (aa, ..) = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &k);
    let (bb, ..) = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &k);
    let (ab, ..) = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &k);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (oh * ow) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub fsim: f64,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, output: &Image, gt: &Image) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr: psnr(output, gt)?,
            ssim: ssim(output, gt)?,
            fsim: fsim(output, gt)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_fsim: f64,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(AfhError::Dataset("cannot report on an empty dataset".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mean_psnr: mean(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            mean_fsim: mean(|m| m.fsim),
            per_image,
        })
    }

    /// Per-image rows followed by a `mean` row. Infinite PSNR is written as `inf`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id", "psnr", "ssim", "fsim"])?;
        let fmt = |v: f64| {
            if v == f64::INFINITY {
                "inf".to_string()
            } else {
                v.to_string()
            }
        };
        for m in &self.per_image {
            w.write_record([m.id.clone(), fmt(m.psnr), fmt(m.ssim), fmt(m.fsim)])?;
        }
        w.write_record([
            "mean".to_string(),
            fmt(self.mean_psnr),
            fmt(self.mean_ssim),
            fmt(self.mean_fsim),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Metrics of the bicubic inputs themselves.
pub fn bicubic_report(pairs: &[SamplePair]) -> Result<MetricReport> {
    let rows = pairs
        .iter()
        .map(|p| ImageMetrics::compute(&p.id, &p.lr_up, &p.hr))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_images(rows)
}

/// Final images of one episode per pair. Stochastic selectors draw from a
/// stream seeded by `seed`.
pub fn hallucinate_all<T: Scalar>(
    params: &ParamSet<T>,
    pairs: &[SamplePair],
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lean = EpisodeConfig {
        keep_patches: false,
        ..cfg.clone()
    };
    pairs
        .iter()
        .map(|p| Ok(run_episode(params, &p.lr_up, &lean, &mut rng)?.final_image))
        .collect()
}

/// Runs one episode per pair and scores the final images against `hr`.
pub fn evaluate<T: Scalar>(
    params: &ParamSet<T>,
    pairs: &[SamplePair],
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(AfhError::Dataset("cannot evaluate an empty dataset".into()));
    }
    let outputs = hallucinate_all(params, pairs, cfg, seed)?;
    let rows = pairs
        .iter()
        .zip(&outputs)
        .map(|(p, out)| ImageMetrics::compute(&p.id, out, &p.hr))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_images(rows)
}

/// Mean PSNR only; cheaper than [`evaluate`] for periodic validation.
pub fn mean_psnr<T: Scalar>(
    params: &ParamSet<T>,
    pairs: &[SamplePair],
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(AfhError::Dataset("cannot evaluate an empty dataset".into()));
    }
    let outputs = hallucinate_all(params, pairs, cfg, seed)?;
    let mut total = 0.0;
    for (p, out) in pairs.iter().zip(&outputs) {
        total += psnr(out, &p.hr)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let zero = Image::filled(8, 8, 3, 0.0);
        assert_eq!(psnr(&zero, &zero).unwrap(), f64::INFINITY);
        assert!((psnr(&zero, &Image::filled(8, 8, 3, 0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&zero, &Image::filled(8, 8, 3, 1.0)).unwrap().abs() < 1e-12);
        assert!(psnr(&zero, &Image::filled(8, 9, 3, 1.0)).is_err());
    }

    #[test]
    fn ssim_of_constants() {
        let a = Image::filled(16, 16, 1, 0.25);
        let b = Image::filled(16, 16, 1, 0.75);
        let c1 = 1e-4;
        let want = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Image::filled(10, 16, 1, 0.2), &Image::filled(10, 16, 1, 0.2)).is_err());
    }

    #[test]
    fn csv_report_marks_infinity() {
        let rows = vec![
            ImageMetrics {
                id: "a".into(),
                psnr: f64::INFINITY,
                ssim: 1.0,
                fsim: 1.0,
            },
            ImageMetrics {
                id: "b".into(),
                psnr: 30.0,
                ssim: 0.5,
                fsim: 0.75,
            },
        ];
        let report = MetricReport::from_images(rows).unwrap();
        assert_eq!(report.mean_ssim, 0.75);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image_id,psnr,ssim,fsim");
        assert_eq!(lines[1], "a,inf,1,1");
        assert_eq!(lines[3], "mean,inf,0.75,0.875");
    }
}
