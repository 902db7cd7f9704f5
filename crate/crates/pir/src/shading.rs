//! Point-light model with learnable rig offset, roughplastic BRDF, soft
//! visibility, and direct surface shading.
//!
//! The direct term is
//! `L_i(w_i; x) f_r(w_o, w_i; x) max(w_i.n, 0) f_v(w_i; x)`,
//! with materials evaluated at the reparameterized surface point so geometry
//! parameters receive gradients, and visibility computed online so geometry
//! and light position are jointly optimizable.

use std::sync::Arc;

use crate::core::camera::Camera;
use crate::core::error::{Error, Result};
use crate::core::math::{sigmoid, softplus, softplus_inv, vec3, Vec3};
use crate::fields::{Activation, Field, FieldCache, ParamBlock};
use crate::geometry::{reparam_surface_point, ReparamPoint, SdfCache, SdfScene, SurfaceHit};
use crate::volinit::{
    alpha_from_phis, alpha_from_phis_grad, residual_transmittance, residual_transmittance_grad,
    NeusDensity,
};

/// Roughness field output (0,1) is mapped affinely into this range to keep
/// the GGX lobe away from its zero-width singularity.
pub const ROUGHNESS_LO: f64 = 0.01;
pub const ROUGHNESS_HI: f64 = 1.0;

/// White point light rigidly mounted near the camera.
///
/// Raw parameters: `[offset_x, offset_y, offset_z, intensity_raw]`. The
/// offset lives in the camera rig frame and is rotated into world space per
/// view; intensity is kept positive through softplus storage.
#[derive(Debug, Clone)]
pub struct PointLight {
    pub params: ParamBlock,
}

impl PointLight {
    pub fn new(offset: Vec3, intensity: f64) -> PointLight {
        let mut params = ParamBlock::zeros("light", 4);
        params.values[0] = offset.x;
        params.values[1] = offset.y;
        params.values[2] = offset.z;
        params.values[3] = softplus_inv(intensity);
        PointLight { params }
    }

    pub fn offset(&self) -> Vec3 {
        vec3(
            self.params.values[0],
            self.params.values[1],
            self.params.values[2],
        )
    }

    pub fn intensity(&self) -> f64 {
        softplus(self.params.values[3])
    }

    pub(crate) fn intensity_d_raw(&self) -> f64 {
        sigmoid(self.params.values[3])
    }

    /// World-space light position for a view.
    pub fn world_position(&self, camera: &Camera) -> Vec3 {
        camera.origin + camera.rig_to_world(self.offset())
    }
}

/// Material values at a surface point.
#[derive(Debug, Clone, Copy)]
pub struct BrdfSample {
    pub diffuse: Vec3,
    pub specular: Vec3,
    pub roughness: f64,
}

/// Spatially-varying materials: learned fields, or exact per-point values
/// for oracle scenes.
pub enum MaterialModel {
    Fields(MaterialFields),
    Analytic(Arc<dyn Fn(Vec3) -> BrdfSample + Send + Sync>),
}

pub struct MaterialFields {
    pub diffuse: Field,
    pub specular: Field,
    pub roughness: Field,
    /// Frozen surface feature field injected into specular and roughness.
    pub feature: Option<Field>,
}

impl MaterialFields {
    pub fn validate(&self) -> Result<()> {
        for (f, name) in [
            (&self.diffuse, "diffuse"),
            (&self.specular, "specular"),
            (&self.roughness, "roughness"),
        ] {
            if f.spec.activation != Activation::Sigmoid {
                return Err(Error::FieldSpec {
                    reason: format!("{name} field must use sigmoid activation"),
                });
            }
        }
        // nonzero extras are allowed before injection: distillation attaches
        // the feature field later; until then only the dims must be able to
        // match an eventual injection
        if let Some(feat) = &self.feature {
            let feat_dim = feat.spec.output_dim;
            for (f, name) in [(&self.specular, "specular"), (&self.roughness, "roughness")] {
                if f.spec.extra_input_dim != 0 && f.spec.extra_input_dim != feat_dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("extra dim 0 or {feat_dim}"),
                        got: format!("{}", f.spec.extra_input_dim),
                        context: format!("{name} field feature injection"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Cached material evaluation at one point.
pub struct MaterialEval {
    pub sample: BrdfSample,
    cache: Option<MaterialCaches>,
}

struct MaterialCaches {
    diffuse: FieldCache,
    specular: FieldCache,
    roughness: FieldCache,
}

impl MaterialModel {
    pub fn fields(&self) -> Option<&MaterialFields> {
        match self {
            MaterialModel::Fields(f) => Some(f),
            MaterialModel::Analytic(_) => None,
        }
    }

    pub fn fields_mut(&mut self) -> Option<&mut MaterialFields> {
        match self {
            MaterialModel::Fields(f) => Some(f),
            MaterialModel::Analytic(_) => None,
        }
    }

    /// Evaluate all three material quantities at `x`. The injected feature
    /// (if any) is evaluated here and treated as a detached constant.
    pub fn eval_at(&self, x: Vec3) -> Result<MaterialEval> {
        match self {
            MaterialModel::Analytic(f) => Ok(MaterialEval {
                sample: f(x),
                cache: None,
            }),
            MaterialModel::Fields(mf) => {
                let feat: Vec<f64> = match &mf.feature {
                    Some(ff) => ff.eval(x, &[])?,
                    None => Vec::new(),
                };
                let take = |dim: usize| -> Result<&[f64]> {
                    if dim == 0 {
                        Ok(&[])
                    } else if feat.len() >= dim {
                        Ok(&feat[..dim])
                    } else {
                        Err(Error::ShapeMismatch {
                            expected: format!("{dim} injected feature channels"),
                            got: format!("{}", feat.len()),
                            context: "material evaluation before feature injection".into(),
                        })
                    }
                };
                let (rd, cd) = mf.diffuse.eval_cached(x, take(mf.diffuse.spec.extra_input_dim)?)?;
                let (rs, cs) = mf
                    .specular
                    .eval_cached(x, take(mf.specular.spec.extra_input_dim)?)?;
                let (rr, cr) = mf
                    .roughness
                    .eval_cached(x, take(mf.roughness.spec.extra_input_dim)?)?;
                Ok(MaterialEval {
                    sample: BrdfSample {
                        diffuse: vec3(rd[0], rd[1], rd[2]),
                        specular: vec3(rs[0], rs[1], rs[2]),
                        roughness: ROUGHNESS_LO + (ROUGHNESS_HI - ROUGHNESS_LO) * rr[0],
                    },
                    cache: Some(MaterialCaches {
                        diffuse: cd,
                        specular: cs,
                        roughness: cr,
                    }),
                })
            }
        }
    }
}

impl MaterialEval {
    /// Accumulate parameter gradients for the three fields and return the
    /// gradient with respect to the evaluation point.
    pub fn backward(
        &self,
        model: &MaterialModel,
        up_diffuse: Vec3,
        up_specular: Vec3,
        up_roughness: f64,
        sink: &mut GradSink,
    ) -> Vec3 {
        match (model, &self.cache) {
            (MaterialModel::Analytic(_), _) => Vec3::ZERO,
            (MaterialModel::Fields(mf), Some(caches)) => {
                let mut dx = Vec3::ZERO;
                if up_diffuse != Vec3::ZERO {
                    let (d, _) =
                        mf.diffuse
                            .backward(&caches.diffuse, &up_diffuse.to_array(), &mut sink.diffuse);
                    dx += d;
                }
                if up_specular != Vec3::ZERO {
                    let (d, _) = mf.specular.backward(
                        &caches.specular,
                        &up_specular.to_array(),
                        &mut sink.specular,
                    );
                    dx += d;
                }
                if up_roughness != 0.0 {
                    let up = [up_roughness * (ROUGHNESS_HI - ROUGHNESS_LO)];
                    let (d, _) = mf
                        .roughness
                        .backward(&caches.roughness, &up, &mut sink.roughness);
                    dx += d;
                }
                // the injected feature is detached: no gradient through its
                // spatial variation or parameters
                dx
            }
            _ => unreachable!("material cache missing"),
        }
    }
}

/// Per-worker gradient buffers for every learnable block. Workers keep
/// private sinks that are merged in a fixed order after the parallel region.
#[derive(Debug, Clone, Default)]
pub struct GradSink {
    pub sdf: Vec<f64>,
    pub diffuse: Vec<f64>,
    pub specular: Vec<f64>,
    pub roughness: Vec<f64>,
    pub feature: Vec<f64>,
    pub light: Vec<f64>,
    pub density: Vec<f64>,
    pub blend: Vec<f64>,
    pub head: Vec<f64>,
}

impl GradSink {
    pub fn merge_from(&mut self, other: &GradSink) {
        self.merge_scaled(other, 1.0);
    }

    /// Add `scale * other` into this sink (fixed merge order across blocks).
    pub fn merge_scaled(&mut self, other: &GradSink, scale: f64) {
        fn add(a: &mut [f64], b: &[f64], s: f64) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += s * y;
            }
        }
        add(&mut self.sdf, &other.sdf, scale);
        add(&mut self.diffuse, &other.diffuse, scale);
        add(&mut self.specular, &other.specular, scale);
        add(&mut self.roughness, &other.roughness, scale);
        add(&mut self.feature, &other.feature, scale);
        add(&mut self.light, &other.light, scale);
        add(&mut self.density, &other.density, scale);
        add(&mut self.blend, &other.blend, scale);
        add(&mut self.head, &other.head, scale);
    }
}

/// Sampled incident light at a point: direction, per-channel radiance, and
/// the geometry needed for gradients.
pub struct LightSample {
    pub w_i: Vec3,
    pub radiance: f64,
    pub distance: f64,
    pub world_pos: Vec3,
}

/// Incident direction and inverse-square radiance from the point light.
/// The offset is interpreted in the camera rig frame.
pub fn light_sample(light: &PointLight, camera: &Camera, x: Vec3) -> Result<LightSample> {
    let p = light.world_position(camera);
    let v = p - x;
    let d2 = v.norm_sq();
    if d2 < 1e-24 {
        return Err(Error::ZeroLightDistance);
    }
    let d = d2.sqrt();
    Ok(LightSample {
        w_i: v / d,
        radiance: light.intensity() / d2,
        distance: d,
        world_pos: p,
    })
}

// ---------------------------------------------------------------------------
// GGX microfacet specular lobe with Smith shadowing and dielectric Fresnel
// ---------------------------------------------------------------------------

fn ggx_d(ch: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let aa = ch * ch * (a2 - 1.0) + 1.0;
    a2 / (std::f64::consts::PI * aa * aa)
}

fn ggx_d_grads(ch: f64, alpha: f64) -> (f64, f64, f64) {
    // returns (D, dD/dalpha, dD/dch)
    let a2 = alpha * alpha;
    let aa = ch * ch * (a2 - 1.0) + 1.0;
    let pi = std::f64::consts::PI;
    let d = a2 / (pi * aa * aa);
    let d_alpha = 2.0 * alpha * (aa - 2.0 * a2 * ch * ch) / (pi * aa * aa * aa);
    let d_ch = -4.0 * a2 * ch * (a2 - 1.0) / (pi * aa * aa * aa);
    (d, d_alpha, d_ch)
}

fn smith_g1(c: f64, alpha: f64) -> f64 {
    let r = (alpha * alpha + (1.0 - alpha * alpha) * c * c).sqrt();
    2.0 * c / (c + r)
}

fn smith_g1_grads(c: f64, alpha: f64) -> (f64, f64, f64) {
    // returns (G1, dG1/dalpha, dG1/dc)
    let a2 = alpha * alpha;
    let r = (a2 + (1.0 - a2) * c * c).sqrt();
    let g = 2.0 * c / (c + r);
    let dr_da = alpha * (1.0 - c * c) / r;
    let dg_da = -2.0 * c * dr_da / ((c + r) * (c + r));
    let dg_dc = 2.0 * a2 / (r * (c + r) * (c + r));
    (g, dg_da, dg_dc)
}

fn fresnel_dielectric(c: f64, eta: f64) -> f64 {
    fresnel_dielectric_grad(c, eta).0
}

fn fresnel_dielectric_grad(c: f64, eta: f64) -> (f64, f64) {
    // unpolarized Fresnel for a dielectric, incident from outside;
    // returns (F, dF/dc)
    let c = c.clamp(1e-9, 1.0);
    let g2 = eta * eta - 1.0 + c * c;
    if g2 <= 0.0 {
        return (1.0, 0.0); // total internal reflection region
    }
    let g = g2.sqrt();
    let a = (g - c) / (g + c);
    let num = c * (g + c) - 1.0;
    let den = c * (g - c) + 1.0;
    let b = num / den;
    let f = 0.5 * a * a * (1.0 + b * b);

    let da = -2.0 * (eta * eta - 1.0) / (g * (g + c) * (g + c));
    let dnum = g + c * c / g + 2.0 * c;
    let dden = g + c * c / g - 2.0 * c;
    let db = (dnum * den - num * dden) / (den * den);
    let df = a * da * (1.0 + b * b) + a * a * b * db;
    (f, df)
}

/// Specular lobe scalar `D G F / (4 (n.wi)(n.wo))` with partials.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpecularLobe {
    pub value: f64,
    pub d_alpha: f64,
    /// Gradient with respect to w_i (n, w_o held fixed); includes the
    /// (n.w_i) route inside the lobe.
    pub d_wi: Vec3,
}

/// Evaluate the specular scalar and its derivatives. Returns zeros when
/// either direction is below the horizon.
pub fn specular_scalar(n: Vec3, w_i: Vec3, w_o: Vec3, alpha: f64, eta: f64) -> SpecularLobe {
    let ci = n.dot(w_i);
    let co = n.dot(w_o);
    if ci <= 0.0 || co <= 0.0 {
        return SpecularLobe::default();
    }
    let m = w_i + w_o;
    let mlen = m.norm();
    if mlen < 1e-12 {
        return SpecularLobe::default();
    }
    let h = m / mlen;
    let ch = n.dot(h);
    let chi = w_i.dot(h);
    if ch <= 0.0 || chi <= 0.0 {
        return SpecularLobe::default();
    }

    let (d, d_da, d_dch) = ggx_d_grads(ch, alpha);
    let (gi, gi_da, gi_dc) = smith_g1_grads(ci, alpha);
    let (go, go_da, _) = smith_g1_grads(co, alpha);
    let (f, f_dc) = fresnel_dielectric_grad(chi, eta);

    let k = 1.0 / (4.0 * ci * co);
    let value = k * d * gi * go * f;

    let d_alpha = k * f * (d_da * gi * go + d * gi_da * go + d * gi * go_da);

    let ds_dci = k * d * gi_dc * go * f - value / ci;
    let ds_dch = k * d_dch * gi * go * f;
    let ds_dchi = k * d * gi * go * f_dc;

    // chain rule through h = (w_i + w_o)/|w_i + w_o|
    let dch_dwi = (n - h * ch) / mlen;
    let dchi_dwi = h + (w_i - h * chi) / mlen;
    let d_wi = n * ds_dci + dch_dwi * ds_dch + dchi_dwi * ds_dchi;

    SpecularLobe {
        value,
        d_alpha,
        d_wi,
    }
}

/// Roughplastic BRDF: Lambertian diffuse plus the GGX dielectric lobe.
/// Zero when either direction is below the horizon.
pub fn brdf_eval(sample: &BrdfSample, n: Vec3, w_i: Vec3, w_o: Vec3, eta: f64) -> Vec3 {
    if n.dot(w_i) <= 0.0 || n.dot(w_o) <= 0.0 {
        return Vec3::ZERO;
    }
    let lobe = specular_scalar(n, w_i, w_o, sample.roughness, eta);
    sample.diffuse / std::f64::consts::PI + sample.specular * lobe.value
}

// ---------------------------------------------------------------------------
// Soft visibility
// ---------------------------------------------------------------------------

/// Soft visibility of the light from a surface point: residual transmittance
/// of `n_samples` opacities converted from uniform SDF samples along the
/// segment from `start` (already offset off the surface) to `light_pos`.
pub struct VisibilityEval {
    pub value: f64,
    start: Vec3,
    fractions: Vec<f64>,
    s_values: Vec<f64>,
    phis: Vec<f64>,
    alphas: Vec<f64>,
    caches: Vec<SdfCache>,
}

pub fn visibility(
    geometry: &SdfScene,
    density: &NeusDensity,
    start: Vec3,
    light_pos: Vec3,
    n_samples: usize,
) -> VisibilityEval {
    let k = density.sharpness();
    let n_pts = n_samples + 1;
    let mut fractions = Vec::with_capacity(n_pts);
    let mut s_values = Vec::with_capacity(n_pts);
    let mut phis = Vec::with_capacity(n_pts);
    let mut caches = Vec::with_capacity(n_pts);
    for j in 0..n_pts {
        let u = j as f64 / n_samples as f64;
        let p = start + (light_pos - start) * u;
        let (s, cache) = geometry.value_cached(p);
        fractions.push(u);
        s_values.push(s);
        phis.push(sigmoid(k * s));
        caches.push(cache);
    }
    let alphas: Vec<f64> = (0..n_samples)
        .map(|j| alpha_from_phis(phis[j], phis[j + 1]))
        .collect();
    let value = residual_transmittance(&alphas);
    VisibilityEval {
        value,
        start,
        fractions,
        s_values,
        phis,
        alphas,
        caches,
    }
}

impl VisibilityEval {
    /// Accumulate geometry and sharpness gradients of `up * f_v`; returns
    /// `d(up * f_v)/d light_pos`.
    pub fn backward(
        &self,
        geometry: &SdfScene,
        density: &NeusDensity,
        up: f64,
        sink: &mut GradSink,
    ) -> Vec3 {
        if up == 0.0 {
            return Vec3::ZERO;
        }
        let k = density.sharpness();
        let dk_draw = density.sharpness_d_raw();
        let d_alpha = residual_transmittance_grad(&self.alphas);
        let n_pts = self.phis.len();
        // adjoint of each phi
        let mut phi_hat = vec![0.0; n_pts];
        for j in 0..self.alphas.len() {
            let (da_dpi, da_dpn) = alpha_from_phis_grad(self.phis[j], self.phis[j + 1]);
            let a_hat = up * d_alpha[j];
            phi_hat[j] += a_hat * da_dpi;
            phi_hat[j + 1] += a_hat * da_dpn;
        }
        let mut d_light = Vec3::ZERO;
        let mut k_hat = 0.0;
        for j in 0..n_pts {
            if phi_hat[j] == 0.0 {
                continue;
            }
            let s = self.s_values[j];
            let sig_d = self.phis[j] * (1.0 - self.phis[j]);
            // phi = sigmoid(k s): d/ds = k sig', d/dk = s sig'
            let s_hat = phi_hat[j] * k * sig_d;
            k_hat += phi_hat[j] * s * sig_d;
            let dx = geometry.backward_value(&self.caches[j], s_hat, &mut sink.sdf);
            // sample position moves with the light: x_j = a + u_j (p - a)
            d_light += dx * self.fractions[j];
        }
        if !sink.density.is_empty() {
            sink.density[0] += k_hat * dk_draw;
        }
        let _ = self.start;
        d_light
    }
}

// ---------------------------------------------------------------------------
// Direct shading
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ShadeOptions {
    pub visibility_samples: usize,
    pub surface_eps: f64,
    pub eta: f64,
    /// Forward-model ablation switch: when false, f_v is fixed at 1.
    pub enable_visibility: bool,
}

impl Default for ShadeOptions {
    fn default() -> Self {
        ShadeOptions {
            visibility_samples: 128,
            surface_eps: crate::geometry::SURFACE_EPS,
            eta: 1.5,
            enable_visibility: true,
        }
    }
}

/// Direct radiance at a converged hit, with everything needed to backprop.
pub struct DirectShade {
    pub radiance: Vec3,
    pub f_v: f64,
    /// Materials at the reparameterized point (shared with the indirect term).
    pub material: MaterialEval,
    pub reparam: ReparamPoint,
    pub light: LightSample,
    cos: f64,
    lobe: SpecularLobe,
    n: Vec3,
    vis: Option<VisibilityEval>,
}

/// Evaluate the direct term at `hit` as seen from `camera`.
pub fn shade_direct(
    geometry: &SdfScene,
    materials: &MaterialModel,
    light: &PointLight,
    density: &NeusDensity,
    camera: &Camera,
    hit: &SurfaceHit,
    opts: &ShadeOptions,
) -> Result<DirectShade> {
    debug_assert!(hit.converged);
    let reparam = reparam_surface_point(geometry, hit);
    let material = materials.eval_at(reparam.value)?;
    let ls = light_sample(light, camera, hit.x)?;
    let n = hit.n;
    let w_o = (camera.origin - hit.x).normalized();
    let cos = ls.w_i.dot(n).max(0.0);

    let lobe = if cos > 0.0 && w_o.dot(n) > 0.0 {
        specular_scalar(n, ls.w_i, w_o, material.sample.roughness, opts.eta)
    } else {
        SpecularLobe::default()
    };
    let f_r = if cos > 0.0 && w_o.dot(n) > 0.0 {
        material.sample.diffuse / std::f64::consts::PI + material.sample.specular * lobe.value
    } else {
        Vec3::ZERO
    };

    let vis = if opts.enable_visibility && cos > 0.0 {
        Some(visibility(
            geometry,
            density,
            hit.x + n * opts.surface_eps,
            ls.world_pos,
            opts.visibility_samples,
        ))
    } else {
        None
    };
    let f_v = vis.as_ref().map_or(1.0, |v| v.value);

    let radiance = f_r * (ls.radiance * cos * f_v);
    Ok(DirectShade {
        radiance,
        f_v,
        material,
        reparam,
        light: ls,
        cos,
        lobe,
        n,
        vis,
    })
}

impl DirectShade {
    /// Accumulate gradients of `up . radiance` into `sink`.
    pub fn backward(
        &self,
        geometry: &SdfScene,
        materials: &MaterialModel,
        light: &PointLight,
        density: &NeusDensity,
        camera: &Camera,
        up: Vec3,
        sink: &mut GradSink,
    ) {
        if self.cos == 0.0 || up == Vec3::ZERO {
            return;
        }
        let li = self.light.radiance;
        let cos = self.cos;
        let fv = self.f_v;
        let sample = &self.material.sample;
        let f_r = sample.diffuse / std::f64::consts::PI + sample.specular * self.lobe.value;

        // material upstreams
        let scale = li * cos * fv;
        let up_rd = up * (scale / std::f64::consts::PI);
        let up_rs = up * (scale * self.lobe.value);
        let u_dot_rs = up.dot(sample.specular);
        let up_alpha = u_dot_rs * scale * self.lobe.d_alpha;
        let dx_material =
            self.material
                .backward(materials, up_rd, up_rs, up_alpha, sink);
        // geometry chain through the reparameterized evaluation point
        self.reparam.backward(geometry, dx_material, &mut sink.sdf);

        // light-side chains
        let b = up.dot(f_r);
        let d_li = b * cos * fv;
        let d_cos = b * li * fv;
        let d_fv = b * li * cos;
        // w_i gradient: explicit cosine factor plus the lobe's internal route
        let g_wi = self.n * d_cos + self.lobe.d_wi * (u_dot_rs * li * cos * fv);

        // d w_i/d p = (I - w_i w_i^T)/d ; d L_i/d p = -(2 L_i/d) w_i
        let w_i = self.light.w_i;
        let d = self.light.distance;
        let mut d_light_pos = (g_wi - w_i * g_wi.dot(w_i)) / d;
        d_light_pos += w_i * (d_li * (-2.0 * li / d));

        if let Some(vis) = &self.vis {
            d_light_pos += vis.backward(geometry, density, d_fv, sink);
        }

        // rig frame: p = o + R delta_o
        let d_offset = camera.rotation.transpose().mul_vec(d_light_pos);
        if !sink.light.is_empty() {
            sink.light[0] += d_offset.x;
            sink.light[1] += d_offset.y;
            sink.light[2] += d_offset.z;
            // L = softplus(raw); L_i = L/d^2
            sink.light[3] += d_li / (d * d) * light.intensity_d_raw();
        }
    }
}
