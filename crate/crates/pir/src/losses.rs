//! Training losses and evaluation metrics.
//!
//! The total objective is
//! `rgb + ssim + l1*eikonal + l2*roughness_range + l3*smoothness + l4*feature`,
//! with the RGB term computed on Gaussian pyramids. Every term ships with an
//! analytic gradient that the test suites check against finite differences.

use serde::{Deserialize, Serialize};

use crate::core::error::{Error, Result};
use crate::core::image::ImageBuffer;
use crate::core::math::Vec3;
use crate::core::rng::Rng;
use crate::geometry::SdfScene;
use crate::shading::{GradSink, MaterialModel};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub eikonal: f64,
    pub roughness_range: f64,
    pub smoothness: f64,
    pub feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // the reference training configuration
        LossWeights {
            eikonal: 1e-4,
            roughness_range: 0.1,
            smoothness: 1e-5,
            feature: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub ssim: f64,
    pub eikonal: f64,
    pub roughness_range: f64,
    pub smoothness: f64,
    pub feature: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
}

/// Weighted total per the training objective; errors on a non-finite term.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    let named = [
        ("rgb", terms.rgb),
        ("ssim", terms.ssim),
        ("eikonal", terms.eikonal),
        ("roughness_range", terms.roughness_range),
        ("smoothness", terms.smoothness),
        ("feature", terms.feature),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: name.into(),
                value: v,
            });
        }
    }
    let total = terms.rgb
        + terms.ssim
        + weights.eikonal * terms.eikonal
        + weights.roughness_range * terms.roughness_range
        + weights.smoothness * terms.smoothness
        + weights.feature * terms.feature;
    Ok(LossReport {
        terms: *terms,
        total,
    })
}

// ---------------------------------------------------------------------------
// Gaussian pyramid L2
// ---------------------------------------------------------------------------

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 5-tap binomial blur + stride-2 decimation, one axis at a time with
/// clamp-to-edge padding (constants are preserved exactly).
fn downsample(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut rows = ImageBuffer::zeros(h.div_ceil(2), w, c);
    for orow in 0..rows.height {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in BINOMIAL.iter().enumerate() {
                    let r = clamp_idx(2 * orow as isize + k as isize - 2, h);
                    acc += wt * img.get(r, col, ch);
                }
                rows.set(orow, col, ch, acc);
            }
        }
    }
    let mut out = ImageBuffer::zeros(rows.height, w.div_ceil(2), c);
    for row in 0..out.height {
        for ocol in 0..out.width {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in BINOMIAL.iter().enumerate() {
                    let cidx = clamp_idx(2 * ocol as isize + k as isize - 2, w);
                    acc += wt * rows.get(row, cidx, ch);
                }
                out.set(row, ocol, ch, acc);
            }
        }
    }
    out
}

/// Exact adjoint of [`downsample`]: scatter with the same weights.
fn downsample_adjoint(up: &ImageBuffer, in_h: usize, in_w: usize) -> ImageBuffer {
    let c = up.channels;
    let mut rows_hat = ImageBuffer::zeros(in_h.div_ceil(2), in_w, c);
    for row in 0..up.height {
        for ocol in 0..up.width {
            for ch in 0..c {
                let g = up.get(row, ocol, ch);
                if g == 0.0 {
                    continue;
                }
                for (k, wt) in BINOMIAL.iter().enumerate() {
                    let cidx = clamp_idx(2 * ocol as isize + k as isize - 2, in_w);
                    let i = rows_hat.index(row, cidx, ch);
                    rows_hat.data[i] += wt * g;
                }
            }
        }
    }
    let mut out = ImageBuffer::zeros(in_h, in_w, c);
    for orow in 0..rows_hat.height {
        for col in 0..in_w {
            for ch in 0..c {
                let g = rows_hat.get(orow, col, ch);
                if g == 0.0 {
                    continue;
                }
                for (k, wt) in BINOMIAL.iter().enumerate() {
                    let r = clamp_idx(2 * orow as isize + k as isize - 2, in_h);
                    let i = out.index(r, col, ch);
                    out.data[i] += wt * g;
                }
            }
        }
    }
    out
}

/// Mean over pyramid levels of the per-level mean squared error.
pub fn pyramid_l2(pred: &ImageBuffer, reference: &ImageBuffer, levels: usize) -> Result<f64> {
    Ok(pyramid_l2_backward(pred, reference, levels)?.0)
}

/// Value plus gradient with respect to the prediction.
pub fn pyramid_l2_backward(
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    levels: usize,
) -> Result<(f64, ImageBuffer)> {
    if !pred.same_dims(reference) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", reference.height, reference.width, reference.channels),
            got: format!("{}x{}x{}", pred.height, pred.width, pred.channels),
            context: "pyramid_l2".into(),
        });
    }
    assert!(levels >= 1);
    let mut preds = vec![pred.clone()];
    let mut refs = vec![reference.clone()];
    for _ in 1..levels {
        preds.push(downsample(preds.last().unwrap()));
        refs.push(downsample(refs.last().unwrap()));
    }
    let mut value = 0.0;
    let mut level_grads: Vec<ImageBuffer> = Vec::with_capacity(levels);
    for (p, r) in preds.iter().zip(refs.iter()) {
        let n = p.data.len() as f64;
        let mut g = ImageBuffer::zeros(p.height, p.width, p.channels);
        let mut mse = 0.0;
        for i in 0..p.data.len() {
            let d = p.data[i] - r.data[i];
            mse += d * d;
            g.data[i] = 2.0 * d / (n * levels as f64);
        }
        value += mse / n;
        level_grads.push(g);
    }
    value /= levels as f64;

    // pull every level's gradient back to full resolution
    let mut grad = level_grads.pop().unwrap();
    for lvl in (0..levels - 1).rev() {
        let mut g = downsample_adjoint(&grad, preds[lvl].height, preds[lvl].width);
        for (a, b) in g.data.iter_mut().zip(level_grads[lvl].data.iter()) {
            *a += b;
        }
        grad = g;
    }
    Ok((value, grad))
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let y = (i / SSIM_WINDOW) as f64 - c;
        let x = (i % SSIM_WINDOW) as f64 - c;
        *v = (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Mean structural similarity over valid 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    Ok(ssim_backward(pred, reference)?.0)
}

/// SSIM plus its gradient with respect to the prediction.
pub fn ssim_backward(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    if !pred.same_dims(reference) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", reference.height, reference.width, reference.channels),
            got: format!("{}x{}x{}", pred.height, pred.width, pred.channels),
            context: "ssim".into(),
        });
    }
    let (h, w, chn) = (pred.height, pred.width, pred.channels);
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
    );
    let kernel = ssim_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let vh = h - SSIM_WINDOW + 1;
    let vw = w - SSIM_WINDOW + 1;
    let count = (vh * vw * chn) as f64;

    let mut total = 0.0;
    let mut grad = ImageBuffer::zeros(h, w, chn);
    // per-position auxiliary fields for the adjoint convolution
    let mut f1 = vec![0.0; vh * vw];
    let mut f2 = vec![0.0; vh * vw];
    let mut f3 = vec![0.0; vh * vw];

    for ch in 0..chn {
        for p in f1.iter_mut() {
            *p = 0.0;
        }
        for row in 0..vh {
            for col in 0..vw {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut sxx = 0.0;
                let mut syy = 0.0;
                let mut sxy = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wt = kernel[ky * SSIM_WINDOW + kx];
                        let xv = pred.get(row + ky, col + kx, ch);
                        let yv = reference.get(row + ky, col + kx, ch);
                        mx += wt * xv;
                        my += wt * yv;
                        sxx += wt * xv * xv;
                        syy += wt * yv * yv;
                        sxy += wt * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                let a1 = 2.0 * mx * my + c1;
                let a2 = 2.0 * cxy + c2;
                let b1 = mx * mx + my * my + c1;
                let b2 = vx + vy + c2;
                let l = a1 / b1;
                let cs = a2 / b2;
                total += l * cs;

                // partials for the adjoint pass
                let dl_dmx = (2.0 * my * b1 - 2.0 * mx * a1) / (b1 * b1);
                let dcs_dmx = 2.0 * (mx * a2 - my * b2) / (b2 * b2);
                let dcs_dsxx = -a2 / (b2 * b2);
                let dcs_dsxy = 2.0 / b2;
                let idx = row * vw + col;
                f1[idx] = cs * dl_dmx + l * dcs_dmx;
                f2[idx] = 2.0 * l * dcs_dsxx;
                f3[idx] = l * dcs_dsxy;
            }
        }
        // dL/dx_q = sum_p w[q-p] (F1_p + x_q F2_p + y_q F3_p), mean-scaled
        for row in 0..vh {
            for col in 0..vw {
                let idx = row * vw + col;
                let (g1, g2, g3) = (f1[idx], f2[idx], f3[idx]);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wt = kernel[ky * SSIM_WINDOW + kx];
                        let q = grad.index(row + ky, col + kx, ch);
                        let xq = pred.get(row + ky, col + kx, ch);
                        let yq = reference.get(row + ky, col + kx, ch);
                        grad.data[q] += wt * (g1 + xq * g2 + yq * g3) / count;
                    }
                }
            }
        }
    }
    Ok((total / count, grad))
}

// ---------------------------------------------------------------------------
// Regularizers
// ---------------------------------------------------------------------------

/// Mean squared deviation of the SDF gradient norm from 1. When the geometry
/// is learned, parameter gradients are accumulated into `sink.sdf`.
pub fn eikonal_loss(scene: &SdfScene, points: &[Vec3], sink: Option<&mut GradSink>) -> f64 {
    assert!(!points.is_empty());
    let n = points.len() as f64;
    let mut value = 0.0;
    match (scene, sink) {
        (SdfScene::Learned(field), Some(sink)) => {
            for &x in points {
                let (_, jac, cache) = field.eval_with_jacobian(x, &[]).expect("eikonal eval");
                let g = Vec3::from_array(jac[0]);
                let norm = g.norm().max(1e-12);
                let r = norm - 1.0;
                value += r * r;
                let up_g = g * (2.0 * r / (norm * n));
                let mut up_jac = vec![[0.0; 3]; field.spec.output_dim];
                up_jac[0] = up_g.to_array();
                let up = vec![0.0; field.spec.output_dim];
                field.backward_with_jacobian(&cache, &up, &up_jac, &mut sink.sdf);
            }
        }
        _ => {
            for &x in points {
                let r = scene.grad(x).norm() - 1.0;
                value += r * r;
            }
        }
    }
    value / n
}

/// One-sided hinge penalizing roughness above 0.5: `mean(max(r - 0.5, 0)^2)`.
pub fn roughness_range_loss(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    values
        .iter()
        .map(|&r| {
            let e = (r - 0.5).max(0.0);
            e * e
        })
        .sum::<f64>()
        / values.len() as f64
}

/// Per-sample derivative of the hinge (before the mean scaling).
pub fn roughness_range_grad(value: f64) -> f64 {
    2.0 * (value - 0.5).max(0.0)
}

/// L1 difference of specular albedo and roughness between each surface point
/// and a Gaussian-perturbed neighbor. Gradients flow into the material
/// fields when a sink is provided.
pub fn smoothness_loss(
    materials: &MaterialModel,
    points: &[Vec3],
    sigma: f64,
    rng: &mut Rng,
    mut sink: Option<&mut GradSink>,
) -> f64 {
    assert!(!points.is_empty());
    let n = points.len() as f64;
    let mut value = 0.0;
    for &x in points {
        let eps = Vec3 {
            x: rng.normal() * sigma,
            y: rng.normal() * sigma,
            z: rng.normal() * sigma,
        };
        let a = materials.eval_at(x).expect("smoothness eval");
        let b = materials.eval_at(x + eps).expect("smoothness eval");
        let ds = a.sample.specular - b.sample.specular;
        let dr = a.sample.roughness - b.sample.roughness;
        value += (ds.abs().sum() + dr.abs()) / n;
        if let Some(sink) = sink.as_deref_mut() {
            let sgn = Vec3 {
                x: ds.x.signum(),
                y: ds.y.signum(),
                z: ds.z.signum(),
            } / n;
            let rsgn = dr.signum() / n;
            a.backward(materials, Vec3::ZERO, sgn, rsgn, sink);
            b.backward(materials, Vec3::ZERO, -sgn, -rsgn, sink);
        }
    }
    value
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

pub fn mse(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    if !pred.same_dims(reference) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", reference.height, reference.width, reference.channels),
            got: format!("{}x{}x{}", pred.height, pred.width, pred.channels),
            context: "mse".into(),
        });
    }
    let n = pred.data.len() as f64;
    Ok(pred
        .data
        .iter()
        .zip(reference.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Masked MSE over the entries where `mask` is true (per pixel).
pub fn masked_mse(pred: &ImageBuffer, reference: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    if !pred.same_dims(reference) || mask.len() != pred.height * pred.width {
        return Err(Error::ShapeMismatch {
            expected: "matching dims and mask".into(),
            got: "mismatch".into(),
            context: "masked_mse".into(),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for row in 0..pred.height {
        for col in 0..pred.width {
            if !mask[row * pred.width + col] {
                continue;
            }
            for ch in 0..pred.channels {
                let d = pred.get(row, col, ch) - reference.get(row, col, ch);
                acc += d * d;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { acc / count as f64 })
}

pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio for unit peak, capped at 99 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

pub fn psnr(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, reference)?))
}

/// Global scalar `c` minimizing `|c*pred - ref|^2` (absorbing the
/// light-intensity/albedo ambiguity), plus the scaled prediction.
pub fn albedo_scale_match(
    pred: &ImageBuffer,
    reference: &ImageBuffer,
) -> Result<(f64, ImageBuffer)> {
    albedo_scale_match_masked(pred, reference, None)
}

/// Scale matching restricted to masked pixels (foreground only).
pub fn albedo_scale_match_masked(
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    mask: Option<&[bool]>,
) -> Result<(f64, ImageBuffer)> {
    if !pred.same_dims(reference) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", reference.height, reference.width, reference.channels),
            got: format!("{}x{}x{}", pred.height, pred.width, pred.channels),
            context: "albedo_scale_match".into(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for row in 0..pred.height {
        for col in 0..pred.width {
            if let Some(m) = mask {
                if !m[row * pred.width + col] {
                    continue;
                }
            }
            for ch in 0..pred.channels {
                let p = pred.get(row, col, ch);
                let r = reference.get(row, col, ch);
                num += p * r;
                den += p * p;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::Diverged {
            reason: "albedo scale match on an identically zero prediction".into(),
        });
    }
    let c = num / den;
    let mut scaled = pred.clone();
    for v in scaled.data.iter_mut() {
        *v *= c;
    }
    Ok((c, scaled))
}
