//! Evaluation: render views with the current model and compare against the
//! dataset's references and ground-truth material maps.
//!
//! Albedo comparisons are scale-matched: a single global scalar per view
//! absorbs the light-intensity/albedo ambiguity before metrics are computed.

use serde::{Deserialize, Serialize};

use crate::core::error::Result;
use crate::core::image::ImageBuffer;
use crate::losses::{
    albedo_scale_match_masked, masked_mse, mse, psnr_from_mse, ssim,
};
use crate::render::{render_image, render_material_maps, RenderOptions, SceneModel};
use crate::scenegen::Dataset;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub albedo_scale: f64,
    pub albedo_psnr: f64,
    pub albedo_mse: f64,
    pub specular_mse: f64,
    pub roughness_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_albedo_psnr: f64,
    pub mean_albedo_mse: f64,
    pub mean_specular_mse: f64,
    pub mean_roughness_mse: f64,
}

/// Foreground = pixels where the GT roughness map is positive (all preset
/// materials have positive roughness; the background is written as zero).
pub fn gt_mask(gt_rough: &ImageBuffer) -> Vec<bool> {
    let mut mask = vec![false; gt_rough.height * gt_rough.width];
    for row in 0..gt_rough.height {
        for col in 0..gt_rough.width {
            mask[row * gt_rough.width + col] = gt_rough.get(row, col, 0) > 0.0;
        }
    }
    mask
}

/// Evaluate one view: RGB metrics on the rendered image and scale-matched
/// material metrics over the GT foreground.
pub fn evaluate_view(
    scene: &SceneModel,
    dataset: &Dataset,
    view: usize,
    opts: &RenderOptions,
) -> Result<ViewMetrics> {
    let camera = dataset.camera(view);
    let reference = dataset.image(view)?;
    let (rendered, _) = render_image(scene, camera, opts)?;
    let rgb_mse = mse(&rendered, &reference)?;
    let rgb_ssim = ssim(&rendered, &reference)?;

    let gt_diffuse = dataset.gt_diffuse(view)?;
    let gt_specular = dataset.gt_specular(view)?;
    let gt_rough = dataset.gt_rough(view)?;
    let mask = gt_mask(&gt_rough);

    let (pred_diffuse, pred_specular, pred_rough, _) =
        render_material_maps(scene, camera, opts)?;
    let (scale, scaled_diffuse) = albedo_scale_match_masked(&pred_diffuse, &gt_diffuse, Some(&mask))?;
    let albedo_mse = masked_mse(&scaled_diffuse, &gt_diffuse, &mask)?;
    let specular_mse = masked_mse(&pred_specular, &gt_specular, &mask)?;
    let roughness_mse = masked_mse(&pred_rough, &gt_rough, &mask)?;

    Ok(ViewMetrics {
        view,
        psnr: psnr_from_mse(rgb_mse),
        ssim: rgb_ssim,
        mse: rgb_mse,
        albedo_scale: scale,
        albedo_psnr: psnr_from_mse(albedo_mse),
        albedo_mse,
        specular_mse,
        roughness_mse,
    })
}

/// Evaluate a set of views and aggregate.
pub fn evaluate(
    scene: &SceneModel,
    dataset: &Dataset,
    views: &[usize],
    opts: &RenderOptions,
) -> Result<EvalReport> {
    assert!(!views.is_empty());
    let mut out = Vec::with_capacity(views.len());
    for &v in views {
        out.push(evaluate_view(scene, dataset, v, opts)?);
    }
    let n = out.len() as f64;
    let mean = |f: fn(&ViewMetrics) -> f64| out.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        mean_psnr: mean(|m| m.psnr),
        mean_ssim: mean(|m| m.ssim),
        mean_albedo_psnr: mean(|m| m.albedo_psnr),
        mean_albedo_mse: mean(|m| m.albedo_mse),
        mean_specular_mse: mean(|m| m.specular_mse),
        mean_roughness_mse: mean(|m| m.roughness_mse),
        views: out,
    })
}
