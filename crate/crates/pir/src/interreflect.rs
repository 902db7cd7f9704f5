//! Single-bounce indirect illumination.
//!
//! Directions are importance-sampled from the GGX lobe around the reflected
//! view direction; each retained sample is shaded at its secondary hit with
//! the flashlight only (hard 20-sample occlusion test, no soft visibility)
//! and gated by a learned blending scalar gamma(distance, incidence cosine,
//! roughness).
//!
//! Gradient rules: sampled directions and pdf weights are detached; the
//! roughness fed to the blending network is detached; geometry receives no
//! gradient at the secondary point (its materials do); the primary-point
//! BRDF factors keep their full chains, including geometry through the
//! reparameterized material lookup.

use crate::core::camera::Camera;
use crate::core::error::{Error, Result};
use crate::core::math::{sigmoid, Ray, Vec3};
use crate::core::rng::Rng;
use crate::fields::encoding;
use crate::fields::mlp::{Mlp, MlpCache, MlpShape};
use crate::fields::ParamBlock;
use crate::geometry::{sphere_trace, ReparamPoint, SdfScene, SurfaceHit, TraceOptions};
use crate::shading::{
    light_sample, specular_scalar, GradSink, LightSample, MaterialEval, MaterialModel, PointLight,
    ShadeOptions, SpecularLobe,
};

/// Mirror reflection `w_r = 2 (n.w) n - w`; requires `w.n > 0`.
pub fn reflect_dir(w: Vec3, n: Vec3) -> Result<Vec3> {
    let c = w.dot(n);
    if c <= 0.0 {
        return Err(Error::ReflectionBelowHorizon { cos: c });
    }
    Ok(w.reflect_about(n))
}

/// Learned blending scalar in [0, 1], conditioned on hit distance, incidence
/// cosine (positionally encoded), and detached roughness.
#[derive(Debug, Clone)]
pub struct BlendNet {
    pub shape: MlpShape,
    pub params: ParamBlock,
    pub cos_freqs: usize,
}

impl BlendNet {
    pub fn new(layers: usize, width: usize, gamma_init: f64, rng: &mut Rng) -> BlendNet {
        let cos_freqs = 6;
        let shape = MlpShape {
            input_dim: 1 + encoding::encoded_dim(1, cos_freqs) + 1,
            layers,
            width,
            output_dim: 1,
            hidden_beta: 10.0,
        };
        let mut params = ParamBlock::zeros("blend", shape.param_count());
        for l in 0..layers {
            let (inp, out) = shape.layer_dims(l);
            let off = shape.layer_offset(l);
            let std = (2.0 / inp as f64).sqrt();
            let last = l + 1 == layers;
            for i in 0..out * inp {
                params.values[off + i] = rng.normal() * if last { 1e-3 } else { std };
            }
            for i in 0..out {
                params.values[off + out * inp + i] = 0.0;
            }
            if last {
                // sigmoid(bias) = gamma_init at the start of training
                let g = gamma_init.clamp(1e-6, 1.0 - 1e-6);
                params.values[off + out * inp] = (g / (1.0 - g)).ln();
            }
        }
        BlendNet {
            shape,
            params,
            cos_freqs,
        }
    }

    fn encode_input(&self, distance: f64, cos: f64, roughness: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.shape.input_dim);
        input.push(distance);
        encoding::encode_into(&[cos], self.cos_freqs, &mut input);
        input.push(roughness);
        input
    }

    /// gamma plus cache; every input is a constant of the pass.
    pub fn eval_cached(&self, distance: f64, cos: f64, roughness: f64) -> (f64, MlpCache) {
        let input = self.encode_input(distance, cos, roughness);
        let cache = Mlp::forward(&self.shape, &self.params.values, &input);
        (sigmoid(cache.output[0]), cache)
    }

    pub fn eval(&self, distance: f64, cos: f64, roughness: f64) -> f64 {
        self.eval_cached(distance, cos, roughness).0
    }

    /// Accumulate `d(up * gamma)/dparams`. No gradient leaves through the
    /// inputs: distance and cosine are geometric constants and the roughness
    /// input is detached by design.
    pub fn backward(&self, cache: &MlpCache, up: f64, grad_buf: &mut [f64]) {
        let y = cache.output[0];
        let s = sigmoid(y);
        let up_raw = [up * s * (1.0 - s)];
        let _ = Mlp::backward(&self.shape, &self.params.values, cache, &up_raw, grad_buf);
    }
}

/// Importance-sampled directions around the reflected direction.
#[derive(Debug, Clone)]
pub struct LobeSampleSet {
    /// Unit directions in the upper hemisphere of `n`, with pdf values.
    pub dirs: Vec<(Vec3, f64)>,
    /// Requested sample count before horizon rejection.
    pub requested: usize,
}

/// Draw `k` directions from the GGX half-vector distribution with
/// `alpha = roughness`, reflected into the lobe around `w_r`. Below-horizon
/// draws are dropped: they correspond to a zero integrand, so the estimator
/// keeps dividing by the requested count and stays unbiased. (Resampling or
/// renormalizing by the retained count would inflate the estimate by the
/// inverse of the above-horizon lobe mass.)
pub fn sample_lobe(
    rng: &mut Rng,
    w_r: Vec3,
    n: Vec3,
    roughness: f64,
    k: usize,
) -> Result<LobeSampleSet> {
    assert!(k >= 1);
    // recover the view direction: w_r is the mirror of w_o about n
    let w_o = reflect_dir(w_r, n)?;
    let alpha = roughness.max(1e-4);
    let tx = n.any_orthonormal();
    let ty = n.cross(tx);

    // stratify the unit square when k admits a grid; jittered cells keep
    // the draws unbiased and cut the estimator variance at large k
    let grid = (k as f64).sqrt().floor() as usize;
    let gridded = grid * grid;
    let mut dirs = Vec::with_capacity(k);
    for i in 0..k {
        let (u1, u2): (f64, f64) = if i < gridded {
            let cell_a = (i / grid) as f64;
            let cell_b = (i % grid) as f64;
            (
                (cell_a + rng.uniform()) / grid as f64,
                (cell_b + rng.uniform()) / grid as f64,
            )
        } else {
            (rng.uniform(), rng.uniform())
        };
        let tan2 = alpha * alpha * u1 / (1.0 - u1).max(1e-16);
        let cos_h = 1.0 / (1.0 + tan2).sqrt();
        let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        let h = tx * (sin_h * phi.cos()) + ty * (sin_h * phi.sin()) + n * cos_h;
        let oh = w_o.dot(h);
        if oh <= 1e-9 {
            continue;
        }
        let w = h * (2.0 * oh) - w_o;
        if w.dot(n) <= 1e-9 {
            continue;
        }
        let d = ggx_ndf(cos_h, alpha);
        let pdf = d * cos_h / (4.0 * oh);
        if pdf > 0.0 && pdf.is_finite() {
            dirs.push((w.normalized(), pdf));
        }
    }
    Ok(LobeSampleSet { dirs, requested: k })
}

fn ggx_ndf(ch: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let aa = ch * ch * (a2 - 1.0) + 1.0;
    a2 / (std::f64::consts::PI * aa * aa)
}

/// Trace the indirect bounce from `x` along `w`, offsetting the origin by
/// eps along the surface normal.
pub fn secondary_hit(
    scene: &SdfScene,
    x: Vec3,
    n: Vec3,
    w: Vec3,
    eps: f64,
    t_max: f64,
    trace: &TraceOptions,
) -> Option<SurfaceHit> {
    let origin = x + n * eps;
    sphere_trace(scene, &Ray { origin, dir: w }, 0.0, t_max, trace)
}

/// Hard occlusion test between a secondary point and the light: 20 uniform
/// samples along the path (endpoints' eps-neighborhoods excluded) are
/// occluded if any sample has a strictly negative signed distance.
pub fn secondary_occlusion(scene: &SdfScene, x_prime: Vec3, light_pos: Vec3, eps: f64) -> bool {
    let v = light_pos - x_prime;
    let len = v.norm();
    if len < 2.0 * eps {
        return false;
    }
    let dir = v / len;
    let a = x_prime + dir * eps;
    let span = len - 2.0 * eps;
    for j in 0..20 {
        let u = (j as f64 + 0.5) / 20.0;
        if scene.value(a + dir * (span * u)) < 0.0 {
            return true;
        }
    }
    false
}

/// Direct-only outgoing radiance of a secondary hit toward the primary
/// point, with the chains needed for material and light gradients.
struct SecondaryShade {
    value: Vec3,
    material: MaterialEval,
    light: LightSample,
    cos: f64,
    lobe: SpecularLobe,
    n: Vec3,
}

fn shade_secondary(
    materials: &MaterialModel,
    light: &PointLight,
    camera: &Camera,
    hit: &SurfaceHit,
    toward_primary: Vec3,
    opts: &ShadeOptions,
) -> Result<Option<SecondaryShade>> {
    let ls = light_sample(light, camera, hit.x)?;
    let cos = ls.w_i.dot(hit.n).max(0.0);
    if cos == 0.0 || toward_primary.dot(hit.n) <= 0.0 {
        return Ok(None);
    }
    // material position at the secondary point is detached (no reparam)
    let material = materials.eval_at(hit.x)?;
    let lobe = specular_scalar(
        hit.n,
        ls.w_i,
        toward_primary,
        material.sample.roughness,
        opts.eta,
    );
    let f_r =
        material.sample.diffuse / std::f64::consts::PI + material.sample.specular * lobe.value;
    let value = f_r * (ls.radiance * cos);
    Ok(Some(SecondaryShade {
        value,
        material,
        light: ls,
        cos,
        lobe,
        n: hit.n,
    }))
}

struct IndirectTerm {
    /// 1/(retained * pdf)
    weight: f64,
    gamma: f64,
    blend_cache: MlpCache,
    /// Secondary shading; `None` contributes zero (miss or occluded).
    secondary: Option<SecondaryShade>,
    /// Specular lobe at the primary point for this sample direction.
    lobe: SpecularLobe,
    cos_i: f64,
}

/// The summed, gamma-gated indirect radiance at a primary hit.
pub struct IndirectShade {
    pub value: Vec3,
    terms: Vec<IndirectTerm>,
}

/// One traced bounce: everything the estimator treats as a constant of the
/// pass (sampled direction, pdf, secondary hit, hard occlusion).
#[derive(Debug, Clone)]
pub struct IndirectPath {
    pub dir: Vec3,
    pub pdf: f64,
    pub hit: Option<SurfaceHit>,
    pub occluded: bool,
}

/// Trace the sampled directions and run the hard occlusion test. The result
/// is the non-differentiable skeleton of the indirect term; geometry and
/// light receive no gradient through it.
#[allow(clippy::too_many_arguments)]
pub fn gather_indirect_paths(
    geometry: &SdfScene,
    light: &PointLight,
    camera: &Camera,
    x: Vec3,
    n: Vec3,
    samples: &LobeSampleSet,
    opts: &ShadeOptions,
    trace: &TraceOptions,
    t_max: f64,
) -> Vec<IndirectPath> {
    let light_pos = light.world_position(camera);
    samples
        .dirs
        .iter()
        .map(|&(dir, pdf)| {
            let hit = secondary_hit(geometry, x, n, dir, opts.surface_eps, t_max, trace);
            let occluded = hit
                .as_ref()
                .map(|h| secondary_occlusion(geometry, h.x, light_pos, opts.surface_eps))
                .unwrap_or(false);
            IndirectPath {
                dir,
                pdf,
                hit,
                occluded,
            }
        })
        .collect()
}

/// Differentiable estimator over pre-traced paths: per-sample gamma gates,
/// secondary direct-only shading, and the primary BRDF factors.
#[allow(clippy::too_many_arguments)]
pub fn indirect_radiance_on_paths(
    materials: &MaterialModel,
    light: &PointLight,
    blend: &BlendNet,
    camera: &Camera,
    hit: &SurfaceHit,
    material: &MaterialEval,
    blend_roughness: f64,
    w_o: Vec3,
    paths: &[IndirectPath],
    requested_k: usize,
    opts: &ShadeOptions,
    t_max: f64,
) -> Result<IndirectShade> {
    let n = hit.n;
    let x = hit.x;
    let retained = requested_k.max(1) as f64;
    let mut value = Vec3::ZERO;
    let mut terms = Vec::with_capacity(paths.len());
    for path in paths {
        let weight = 1.0 / (retained * path.pdf);
        let cos_i = path.dir.dot(n).max(0.0);
        let (secondary, gamma, blend_cache, lobe) = match &path.hit {
            None => {
                let (g, c) = blend.eval_cached(t_max, cos_i, blend_roughness);
                (None, g, c, SpecularLobe::default())
            }
            Some(sh) => {
                let dist = (sh.x - x).norm();
                // rule (a): the roughness input is detached
                let (g, c) = blend.eval_cached(dist, cos_i, blend_roughness);
                let sec_shade = if path.occluded {
                    None
                } else {
                    let toward_primary = (x - sh.x).normalized();
                    shade_secondary(materials, light, camera, sh, toward_primary, opts)?
                };
                let lobe = specular_scalar(n, path.dir, w_o, material.sample.roughness, opts.eta);
                (sec_shade, g, c, lobe)
            }
        };
        if let Some(s) = &secondary {
            let f_r = material.sample.diffuse / std::f64::consts::PI
                + material.sample.specular * lobe.value;
            value += s.value.mul_comp(f_r) * (gamma * weight * cos_i);
        }
        terms.push(IndirectTerm {
            weight,
            gamma,
            blend_cache,
            secondary,
            lobe,
            cos_i,
        });
    }
    Ok(IndirectShade { value, terms })
}

/// Estimate the indirect term at a primary hit: trace the sampled
/// directions, then run the differentiable estimator over them.
///
/// `material` is the primary-point evaluation shared with the direct term;
/// `samples` comes from [`sample_lobe`] and is a constant of the pass.
/// `blend_roughness` is the (detached) roughness fed to the blending
/// network; callers pass the primary roughness value, and the detachment is
/// explicit in it being a plain number rather than a differentiable chain.
#[allow(clippy::too_many_arguments)]
pub fn indirect_radiance(
    geometry: &SdfScene,
    materials: &MaterialModel,
    light: &PointLight,
    blend: &BlendNet,
    camera: &Camera,
    hit: &SurfaceHit,
    material: &MaterialEval,
    blend_roughness: f64,
    w_o: Vec3,
    samples: &LobeSampleSet,
    opts: &ShadeOptions,
    trace: &TraceOptions,
    t_max: f64,
) -> Result<IndirectShade> {
    let paths = gather_indirect_paths(
        geometry, light, camera, hit.x, hit.n, samples, opts, trace, t_max,
    );
    indirect_radiance_on_paths(
        materials,
        light,
        blend,
        camera,
        hit,
        material,
        blend_roughness,
        w_o,
        &paths,
        samples.requested,
        opts,
        t_max,
    )
}

impl IndirectShade {
    /// Accumulate gradients of `up . f_ir` into the sink.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        geometry: &SdfScene,
        materials: &MaterialModel,
        light: &PointLight,
        blend: &BlendNet,
        camera: &Camera,
        material: &MaterialEval,
        reparam: &ReparamPoint,
        up: Vec3,
        sink: &mut GradSink,
    ) {
        if up == Vec3::ZERO {
            return;
        }
        let sample = &material.sample;
        let mut up_rd = Vec3::ZERO;
        let mut up_rs = Vec3::ZERO;
        let mut up_alpha = 0.0;

        for term in &self.terms {
            let Some(sec) = &term.secondary else { continue };
            let f_r_primary =
                sample.diffuse / std::f64::consts::PI + sample.specular * term.lobe.value;
            let scale = term.gamma * term.weight * term.cos_i;
            // contribution = scale * L_ind (.) f_r_primary
            let u_lind = up.mul_comp(f_r_primary) * scale;
            let u_frp = up.mul_comp(sec.value) * scale;

            // gamma gate (inputs all detached)
            let up_gamma = up.dot(sec.value.mul_comp(f_r_primary)) * term.weight * term.cos_i;
            blend.backward(&term.blend_cache, up_gamma, &mut sink.blend);

            // primary BRDF factors
            up_rd += u_frp / std::f64::consts::PI;
            up_rs += u_frp * term.lobe.value;
            up_alpha += u_frp.dot(sample.specular) * term.lobe.d_alpha;

            // secondary point: materials and light receive gradients,
            // geometry does not (its position and normal are constants)
            let li = sec.light.radiance;
            let cos2 = sec.cos;
            let sscale = li * cos2;
            let s_up_rd = u_lind * (sscale / std::f64::consts::PI);
            let s_up_rs = u_lind * (sscale * sec.lobe.value);
            let s_up_alpha = u_lind.dot(sec.material.sample.specular) * sscale * sec.lobe.d_alpha;
            let _ = sec
                .material
                .backward(materials, s_up_rd, s_up_rs, s_up_alpha, sink);

            let f_r2 = sec.material.sample.diffuse / std::f64::consts::PI
                + sec.material.sample.specular * sec.lobe.value;
            let b = u_lind.dot(f_r2);
            let d_li = b * cos2;
            let d_cos2 = b * li;
            let mut g_wi = sec.lobe.d_wi * (u_lind.dot(sec.material.sample.specular) * li * cos2);
            g_wi += sec.n * d_cos2;
            let w_i = sec.light.w_i;
            let d = sec.light.distance;
            let mut d_light_pos = (g_wi - w_i * g_wi.dot(w_i)) / d;
            d_light_pos += w_i * (d_li * (-2.0 * li / d));
            let d_offset = camera.rotation.transpose().mul_vec(d_light_pos);
            if !sink.light.is_empty() {
                sink.light[0] += d_offset.x;
                sink.light[1] += d_offset.y;
                sink.light[2] += d_offset.z;
                sink.light[3] += d_li / (d * d) * light.intensity_d_raw();
            }
        }

        // one shared material/geometry chain for the primary point
        let dx_material = material.backward(materials, up_rd, up_rs, up_alpha, sink);
        reparam.backward(geometry, dx_material, &mut sink.sdf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::math::vec3;
    use crate::geometry::AnalyticSdf;
    use crate::shading::BrdfSample;
    use std::sync::Arc;

    #[test]
    fn reflect_examples() {
        let n = vec3(0.0, 0.0, 1.0);
        assert!((reflect_dir(n, n).unwrap() - n).norm() < 1e-12);
        let w = vec3(1.0, 0.0, 1.0).normalized();
        let r = reflect_dir(w, n).unwrap();
        assert!((r - vec3(-1.0, 0.0, 1.0).normalized()).norm() < 1e-12);
        assert!(matches!(
            reflect_dir(vec3(1.0, 0.0, 0.0), n),
            Err(Error::ReflectionBelowHorizon { .. })
        ));
    }

    #[test]
    fn lobe_near_delta_concentrates_on_reflection() {
        let mut rng = Rng::new(5);
        let n = vec3(0.0, 0.0, 1.0);
        let w_r = vec3(0.3, 0.1, 0.9).normalized();
        let set = sample_lobe(&mut rng, w_r, n, 1e-3, 64).unwrap();
        assert_eq!(set.dirs.len(), 64);
        for (d, pdf) in &set.dirs {
            let angle = d.dot(w_r).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 2.0, "sample {angle} degrees off the reflection");
            assert!(*pdf > 0.0 && pdf.is_finite());
        }
    }

    #[test]
    fn lobe_mean_converges_to_reflection() {
        // normal incidence: the reflected lobe is azimuthally symmetric
        // around w_r, so the sample mean converges to it
        let mut rng = Rng::new(11);
        let n = vec3(0.0, 0.0, 1.0);
        let w_r = n;
        let set = sample_lobe(&mut rng, w_r, n, 0.2, 100_000).unwrap();
        let mut mean = Vec3::ZERO;
        for (d, _) in &set.dirs {
            mean += *d;
        }
        let mean = mean.normalized();
        let angle = mean.dot(w_r).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 1.0, "mean {angle} degrees off");
    }

    #[test]
    fn lobe_single_sample() {
        let mut rng = Rng::new(2);
        let n = vec3(0.0, 0.0, 1.0);
        let set = sample_lobe(&mut rng, vec3(0.0, 0.4, 0.92).normalized(), n, 0.3, 1).unwrap();
        assert_eq!(set.requested, 1);
        assert_eq!(set.dirs.len(), 1, "this seed's draw is above the horizon");
        assert!(set.dirs[0].1.is_finite());
    }

    #[test]
    fn secondary_hit_between_parallel_planes() {
        // facing planes at z = 0 and z = 1
        let scene = SdfScene::Analytic(AnalyticSdf::Union(vec![
            AnalyticSdf::Plane {
                normal: vec3(0.0, 0.0, 1.0),
                offset: 0.0,
            },
            AnalyticSdf::Complement(Box::new(AnalyticSdf::Plane {
                normal: vec3(0.0, 0.0, 1.0),
                offset: 1.0,
            })),
        ]));
        let x = vec3(0.2, -0.1, 0.0);
        let n = vec3(0.0, 0.0, 1.0);
        let dir = vec3(0.1, 0.0, 1.0).normalized();
        let hit = secondary_hit(&scene, x, n, dir, 1e-3, 5.0, &TraceOptions::default()).unwrap();
        // analytic: z goes from eps to 1 along dir.z
        let t_expect = (1.0 - 1e-3) / dir.z;
        assert!((hit.t - t_expect).abs() < 1e-3, "t = {}", hit.t);
        assert!((hit.x.z - 1.0).abs() < 1e-4);
    }

    #[test]
    fn convex_scene_secondary_rays_miss() {
        let scene = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: Vec3::ZERO,
            radius: 0.5,
        });
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let n = vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            let x = n * 0.5;
            // any outward direction in the upper hemisphere
            let mut d = vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            if d.dot(n) < 0.0 {
                d = -d;
            }
            if d.dot(n) < 1e-3 {
                continue;
            }
            assert!(
                secondary_hit(&scene, x, n, d, 1e-3, 10.0, &TraceOptions::default()).is_none()
            );
        }
    }

    #[test]
    fn concave_bowl_interior_hits_opposite_wall() {
        // hollow sphere shell: inside radius 0.32
        let scene = SdfScene::Analytic(AnalyticSdf::Intersection(vec![
            AnalyticSdf::Sphere {
                center: Vec3::ZERO,
                radius: 0.4,
            },
            AnalyticSdf::Complement(Box::new(AnalyticSdf::Sphere {
                center: Vec3::ZERO,
                radius: 0.32,
            })),
        ]));
        // point on the inner wall, ray across the cavity through the center
        let x = vec3(0.32, 0.0, 0.0);
        let n = vec3(-1.0, 0.0, 0.0); // into the cavity
        let dir = vec3(-1.0, 0.0, 0.0);
        let hit = secondary_hit(&scene, x, n, dir, 1e-3, 5.0, &TraceOptions::default()).unwrap();
        // analytic: the opposite inner wall at x = -0.32
        assert!((hit.x.x + 0.32).abs() < 1e-4, "hit at {:?}", hit.x);
    }

    #[test]
    fn occlusion_examples() {
        let wall = SdfScene::Analytic(AnalyticSdf::Box {
            center: vec3(0.0, 0.0, 0.5),
            half: vec3(1.0, 1.0, 0.05),
        });
        // path crossing the wall
        assert!(secondary_occlusion(
            &wall,
            vec3(0.0, 0.0, 0.0),
            vec3(0.0, 0.0, 1.0),
            1e-3
        ));
        // path beside the wall
        assert!(!secondary_occlusion(
            &wall,
            vec3(2.0, 0.0, 0.0),
            vec3(2.0, 0.0, 1.0),
            1e-3
        ));
        // degenerate path shorter than 2 eps
        assert!(!secondary_occlusion(
            &wall,
            vec3(0.0, 0.0, 0.45),
            vec3(0.0, 0.0, 0.4505),
            1e-3
        ));
    }

    #[test]
    fn gamma_zero_gates_everything() {
        let mut rng = Rng::new(7);
        let blend = BlendNet::new(2, 8, 1e-6, &mut rng);
        // two-plane scene so secondary hits exist
        let scene = SdfScene::Analytic(AnalyticSdf::Union(vec![
            AnalyticSdf::Plane {
                normal: vec3(0.0, 0.0, 1.0),
                offset: 0.0,
            },
            AnalyticSdf::Complement(Box::new(AnalyticSdf::Plane {
                normal: vec3(0.0, 0.0, 1.0),
                offset: 1.0,
            })),
        ]));
        let mats = MaterialModel::Analytic(Arc::new(|_x| BrdfSample {
            diffuse: Vec3::ONE * 0.5,
            specular: Vec3::ONE * 0.3,
            roughness: 0.3,
        }));
        let cam = crate::core::camera::Camera::look_at(
            vec3(0.0, 0.0, 0.4),
            vec3(0.3, 0.0, 0.0),
            vec3(0.0, 1.0, 0.0),
            8,
            8,
            0.6,
        )
        .unwrap();
        let light = PointLight::new(Vec3::ZERO, 1.0);
        let hit = SurfaceHit {
            x: vec3(0.3, 0.0, 0.0),
            n: vec3(0.0, 0.0, 1.0),
            t: 1.0,
            converged: true,
            steps: 1,
        };
        let material = mats.eval_at(hit.x).unwrap();
        let w_o = (cam.origin - hit.x).normalized();
        let w_r = reflect_dir(w_o, hit.n).unwrap();
        let samples = sample_lobe(&mut rng, w_r, hit.n, 0.3, 8).unwrap();
        let opts = ShadeOptions::default();
        let out = indirect_radiance(
            &scene,
            &mats,
            &light,
            &blend,
            &cam,
            &hit,
            &material,
            material.sample.roughness,
            w_o,
            &samples,
            &opts,
            &TraceOptions::default(),
            5.0,
        )
        .unwrap();
        // gamma ~ 1e-6 gates the estimate to ~0
        assert!(out.value.norm() < 1e-4, "f_ir = {:?}", out.value);
    }

    #[test]
    fn all_misses_give_zero() {
        let mut rng = Rng::new(9);
        let blend = BlendNet::new(2, 8, 0.5, &mut rng);
        let scene = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: Vec3::ZERO,
            radius: 0.5,
        });
        let mats = MaterialModel::Analytic(Arc::new(|_x| BrdfSample {
            diffuse: Vec3::ONE * 0.5,
            specular: Vec3::ONE * 0.3,
            roughness: 0.2,
        }));
        let cam = crate::core::camera::Camera::look_at(
            vec3(0.0, 0.0, 2.0),
            Vec3::ZERO,
            vec3(0.0, 1.0, 0.0),
            8,
            8,
            0.6,
        )
        .unwrap();
        let light = PointLight::new(Vec3::ZERO, 1.0);
        let hit = SurfaceHit {
            x: vec3(0.0, 0.0, 0.5),
            n: vec3(0.0, 0.0, 1.0),
            t: 1.5,
            converged: true,
            steps: 1,
        };
        let material = mats.eval_at(hit.x).unwrap();
        let w_o = vec3(0.0, 0.0, 1.0);
        let samples = sample_lobe(&mut rng, w_o, hit.n, 0.2, 16).unwrap();
        let out = indirect_radiance(
            &scene,
            &mats,
            &light,
            &blend,
            &cam,
            &hit,
            &material,
            material.sample.roughness,
            w_o,
            &samples,
            &ShadeOptions::default(),
            &TraceOptions::default(),
            5.0,
        )
        .unwrap();
        assert_eq!(out.value, Vec3::ZERO);
    }
}
