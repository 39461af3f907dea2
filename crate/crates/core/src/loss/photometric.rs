//! L1 + differentiable SSIM, and PSNR.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss::abs_grad;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    /// Mean absolute error.
    pub l1: f64,
    /// `1 − SSIM`.
    pub dssim: f64,
    /// `λ1·l1 + λ_SSIM·dssim`.
    pub total: f64,
    /// `d total / d render`, interleaved RGB.
    pub grad: Vec<f64>,
}

fn window() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same" convolution with zero padding on one channel plane.
/// The kernel is symmetric, so this is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "images are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn check_mask(mask: Option<&Mask>, img: &Image) -> Result<()> {
    if let Some(m) = mask {
        if m.width != img.width || m.height != img.height {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, image is {}x{}",
                m.width, m.height, img.width, img.height
            )));
        }
    }
    Ok(())
}

/// SSIM map value and the coefficients of its derivative: the map at `p`
/// changes with `x_q` by `w_pq · (alpha + beta·x_q + gamma·y_q)`. Each term
/// vanishes exactly when the windows are identical.
struct SsimTerms {
    value: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

fn ssim_terms(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> SsimTerms {
    let vx = sxx - mx * mx;
    let vy = syy - my * my;
    let cxy = sxy - mx * my;
    let a1 = 2.0 * mx * my + C1;
    let a2 = 2.0 * cxy + C2;
    let b1 = mx * mx + my * my + C1;
    let b2 = vx + vy + C2;
    let p = 1.0 / (b1 * b2);
    let value = a1 * a2 * p;
    let r1 = a1 / b1;
    let r2 = a2 / b2;
    let gamma = 2.0 * a1 * p;
    SsimTerms {
        value,
        alpha: 2.0 * a2 * p * (my - mx * r1) + gamma * (mx * r2 - my),
        beta: -gamma * r2,
        gamma,
    }
}

/// Mean SSIM map plus, when `weight` is given, `d(Σ weight·map)/dx`.
fn ssim_impl(x: &Image, y: &Image, weight: Option<&[f64]>) -> (f64, Option<Vec<f64>>, Vec<f64>) {
    let (w, h) = (x.width, x.height);
    let k = window();
    let mut map_all = vec![0.0; w * h * 3];
    let mut grad = weight.map(|_| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let xp = plane(x, c);
        let yp = plane(y, c);
        let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();
        let mx = blur(&xp, w, h, &k);
        let my = blur(&yp, w, h, &k);
        let sxx = blur(&xx, w, h, &k);
        let syy = blur(&yy, w, h, &k);
        let sxy = blur(&xy, w, h, &k);
        let mut d_alpha = vec![0.0; w * h];
        let mut d_beta = vec![0.0; w * h];
        let mut d_gamma = vec![0.0; w * h];
        for p in 0..w * h {
            let t = ssim_terms(mx[p], my[p], sxx[p], syy[p], sxy[p]);
            map_all[3 * p + c] = t.value;
            if let Some(wt) = weight {
                let s = wt[3 * p + c];
                d_alpha[p] = t.alpha * s;
                d_beta[p] = t.beta * s;
                d_gamma[p] = t.gamma * s;
            }
        }
        if let Some(g) = grad.as_mut() {
            let b_alpha = blur(&d_alpha, w, h, &k);
            let b_beta = blur(&d_beta, w, h, &k);
            let b_gamma = blur(&d_gamma, w, h, &k);
            for p in 0..w * h {
                g[3 * p + c] = b_alpha[p] + xp[p] * b_beta[p] + yp[p] * b_gamma[p];
            }
        }
    }
    let mean = map_all.iter().sum::<f64>() / map_all.len() as f64;
    (mean, grad, map_all)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) per channel.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    Ok(ssim_impl(a, b, None).0)
}

/// `λ1 · mean|I − I_ref| + λ_SSIM · (1 − SSIM(I, I_ref))` and its gradient
/// with respect to `render`. With a mask, only weighted pixels contribute and
/// the means are taken over the mask's total weight.
pub fn photometric_loss(
    render: &Image,
    reference: &Image,
    lambda_l1: f64,
    lambda_ssim: f64,
    mask: Option<&Mask>,
) -> Result<PhotometricLoss> {
    check_dims(render, reference)?;
    check_mask(mask, render)?;
    let n_px = render.pixel_count();
    let pixel_weight = |p: usize| mask.map_or(1.0, |m| m.data[p]);
    let total_weight: f64 = (0..n_px).map(pixel_weight).sum::<f64>() * 3.0;
    let mut grad = vec![0.0; n_px * 3];
    if total_weight == 0.0 {
        return Ok(PhotometricLoss {
            l1: 0.0,
            dssim: 0.0,
            total: 0.0,
            grad,
        });
    }
    let mut l1 = 0.0;
    for (i, (r, t)) in render.data.iter().zip(&reference.data).enumerate() {
        let wt = pixel_weight(i / 3);
        let diff = r - t;
        l1 += wt * diff.abs();
        grad[i] = lambda_l1 * wt * abs_grad(diff) / total_weight;
    }
    l1 /= total_weight;

    let weights: Vec<f64> = (0..n_px * 3)
        .map(|i| -lambda_ssim * pixel_weight(i / 3) / total_weight)
        .collect();
    let (_, sgrad, map) = ssim_impl(render, reference, Some(&weights));
    let ssim_val: f64 = map
        .iter()
        .enumerate()
        .map(|(i, v)| v * pixel_weight(i / 3))
        .sum::<f64>()
        / total_weight;
    for (g, s) in grad.iter_mut().zip(sgrad.unwrap()) {
        *g += s;
    }
    let dssim = 1.0 - ssim_val;
    Ok(PhotometricLoss {
        l1,
        dssim,
        total: lambda_l1 * l1 + lambda_ssim * dssim,
        grad,
    })
}

/// `10·log10(1/MSE)`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}
