//! Image fidelity metrics on `[0, 1]` grayscale images stored row-major.

use crate::error::{Error, Result};

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(format!(
            "mse over {} and {} pixels",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const MIN_SCALE_SIDE: usize = 4;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Scales and per-scale window sizes used for an `h x w` image.
///
/// Up to five scales, halving with 2x2 average pooling, while the short side
/// stays at least 4 pixels. The Gaussian window (sigma 1.5) is 11 taps, cut
/// to the largest odd size that fits the short side at that scale. Exponents
/// are the standard five, truncated to the scales used and renormalized to
/// sum to one.
pub fn ms_ssim_plan(h: usize, w: usize) -> Result<Vec<usize>> {
    let mut side = h.min(w);
    if side < MIN_SCALE_SIDE {
        return Err(Error::shape(format!(
            "ms-ssim needs images of at least {MIN_SCALE_SIDE}x{MIN_SCALE_SIDE}, got {h}x{w}"
        )));
    }
    let mut windows = Vec::new();
    while windows.len() < MS_SSIM_WEIGHTS.len() && side >= MIN_SCALE_SIDE {
        let win = WINDOW.min(if side % 2 == 1 { side } else { side - 1 });
        windows.push(win);
        side /= 2;
    }
    Ok(windows)
}

fn gaussian_taps(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-mode separable filtering of an `h x w` image.
fn filter(img: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| taps[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance term and mean contrast-structure term at one scale.
fn ssim_terms(x: &[f64], y: &[f64], h: usize, w: usize, win: usize) -> (f64, f64) {
    let taps = gaussian_taps(win);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, oh, ow) = filter(x, h, w, &taps);
    let (my, _, _) = filter(y, h, w, &taps);
    let (mxx, _, _) = filter(&prod(x, x), h, w, &taps);
    let (myy, _, _) = filter(&prod(y, y), h, w, &taps);
    let (mxy, _, _) = filter(&prod(x, y), h, w, &taps);
    let n = (oh * ow) as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..oh * ow {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cov = mxy[i] - mx[i] * my[i];
        let c = (2.0 * cov + C2) / (vx + vy + C2);
        let l = (2.0 * mx[i] * my[i] + C1) / (mx[i] * mx[i] + my[i] * my[i] + C1);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let at = |dy: usize, dx: usize| img[(2 * y + dy) * w + 2 * x + dx];
            out[y * ow + x] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `h x w` images (see [`ms_ssim_plan`] for the
/// scale schedule). Negative per-scale terms are clamped to zero before
/// exponentiation, so the result lies in `[0, 1]`.
pub fn ms_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if x.len() != h * w || y.len() != h * w {
        return Err(Error::shape(format!(
            "ms-ssim: {} and {} pixels for {h}x{w}",
            x.len(),
            y.len()
        )));
    }
    let plan = ms_ssim_plan(h, w)?;
    let norm: f64 = MS_SSIM_WEIGHTS[..plan.len()].iter().sum();
    let (mut a, mut b) = (x.to_vec(), y.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut out = 1.0;
    for (j, &win) in plan.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b, ch, cw, win);
        let term = if j + 1 == plan.len() { ssim } else { cs };
        out *= term.max(0.0).powf(MS_SSIM_WEIGHTS[j] / norm);
        if j + 1 < plan.len() {
            let (na, nh, nw) = downsample(&a, ch, cw);
            b = downsample(&b, ch, cw).0;
            a = na;
            ch = nh;
            cw = nw;
        }
    }
    Ok(out.min(1.0))
}
