//! Volume-rendering initialization: SDF-to-opacity conversion, alpha
//! compositing along rays, and the init fit that bootstraps geometry and
//! diffuse albedo before surface rendering.

use crate::core::camera::Camera;
use crate::core::error::{Error, Result};
use crate::core::image::ImageBuffer;
use crate::core::math::{sigmoid, vec3, Ray, Vec3};
use crate::core::rng::Rng;
use crate::fields::{Field, FieldCache, ParamBlock};
use crate::geometry::{SdfCache, SdfScene};
use crate::shading::GradSink;
use crate::trainer::AdamState;

/// Logistic-CDF opacity conversion. The sharpness (the inverse logistic
/// scale) is learnable and stored in log scale so it can adapt over orders
/// of magnitude at a fixed learning rate.
#[derive(Debug, Clone)]
pub struct NeusDensity {
    /// Single raw parameter; sharpness = exp(raw).
    pub params: ParamBlock,
    pub samples_per_ray: usize,
}

impl NeusDensity {
    pub fn new(sharpness: f64, samples_per_ray: usize) -> NeusDensity {
        assert!(sharpness > 0.0);
        let mut params = ParamBlock::zeros("density", 1);
        params.values[0] = sharpness.ln();
        NeusDensity {
            params,
            samples_per_ray,
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.params.values[0].clamp(-20.0, 14.0).exp()
    }

    /// d sharpness / d raw.
    pub fn sharpness_d_raw(&self) -> f64 {
        self.sharpness()
    }

    pub fn phi(&self, s: f64) -> f64 {
        sigmoid(self.sharpness() * s)
    }
}

/// Discrete opacity from consecutive SDF samples:
/// `alpha = max((phi(s_i) - phi(s_next)) / phi(s_i), 0)`.
pub fn neus_alpha(s_i: f64, s_next: f64, density: &NeusDensity) -> f64 {
    let k = density.sharpness();
    alpha_from_phis(sigmoid(k * s_i), sigmoid(k * s_next))
}

/// The same conversion on precomputed logistic values.
pub fn alpha_from_phis(phi_i: f64, phi_next: f64) -> f64 {
    ((phi_i - phi_next) / phi_i).max(0.0)
}

/// Partials of `alpha_from_phis` with respect to both inputs (zero in the
/// clamped region).
pub fn alpha_from_phis_grad(phi_i: f64, phi_next: f64) -> (f64, f64) {
    if phi_i - phi_next <= 0.0 {
        (0.0, 0.0)
    } else {
        (phi_next / (phi_i * phi_i), -1.0 / phi_i)
    }
}

/// Residual transmittance `1 - sum_j alpha_j prod_{k<j} (1 - alpha_k)`,
/// the fraction of light surviving the sample sequence.
pub fn residual_transmittance(alphas: &[f64]) -> f64 {
    let mut t = 1.0;
    let mut absorbed = 0.0;
    for &a in alphas {
        absorbed += a * t;
        t *= 1.0 - a;
    }
    1.0 - absorbed
}

/// d residual / d alpha_m = -prod_{j != m} (1 - alpha_j), via prefix/suffix
/// products (no divisions, safe at alpha = 1).
pub fn residual_transmittance_grad(alphas: &[f64]) -> Vec<f64> {
    let n = alphas.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * (1.0 - alphas[i]);
    }
    let mut suffix = vec![1.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] * (1.0 - alphas[i]);
    }
    (0..n).map(|i| -prefix[i] * suffix[i + 1]).collect()
}

// ---------------------------------------------------------------------------
// Radiance head and volume rendering
// ---------------------------------------------------------------------------

/// View-dependent color head `c(x, d, n, f_geo) -> RGB in [0,1]`.
///
/// The wrapped field takes the encoded position plus
/// `3 (direction) + 3 (normal) + f_geo` extra inputs and must produce three
/// sigmoid-activated channels.
#[derive(Debug, Clone)]
pub struct RadianceHead {
    pub field: Field,
}

impl RadianceHead {
    pub fn f_geo_dim(&self) -> usize {
        self.field.spec.extra_input_dim.saturating_sub(6)
    }
}

struct VolumePoint {
    sdf_cache: SdfCache,
    grad: Vec3,
    grad_norm: f64,
    s: f64,
    phi: f64,
    /// color sample (section start points only)
    color: Option<ColorSample>,
}

struct ColorSample {
    value: Vec3,
    cache: FieldCache,
}

/// Alpha-composited color along a ray with backward state.
pub struct VolumeRenderEval {
    pub color: Vec3,
    pub weight_sum: f64,
    /// Per-section compositing weights `T_i alpha_i`.
    pub weights: Vec<f64>,
    points: Vec<VolumePoint>,
    alphas: Vec<f64>,
}

/// Render one ray with `n_samples` sections on `[t_min, t_max]` (n_samples+1
/// uniform sample points, optionally jittered by a shared per-ray offset).
pub fn volume_render(
    geometry: &SdfScene,
    head: &RadianceHead,
    density: &NeusDensity,
    ray: &Ray,
    t_min: f64,
    t_max: f64,
    n_samples: usize,
    rng: Option<&mut Rng>,
) -> Result<VolumeRenderEval> {
    assert!(n_samples >= 1);
    let k = density.sharpness();
    let jitter = rng.map_or(0.5, |r| r.uniform());
    let dt = (t_max - t_min) / (n_samples + 1) as f64;

    let mut points = Vec::with_capacity(n_samples + 1);
    for i in 0..=n_samples {
        let t = t_min + (i as f64 + jitter) * dt;
        let x = ray.at(t);
        let (s, f_geo, grad, sdf_cache) = geometry.eval_jacobian(x);
        let color = if i < n_samples {
            let gn = grad.norm().max(1e-8);
            let n = grad / gn;
            let mut extra = Vec::with_capacity(6 + f_geo.len());
            extra.extend_from_slice(&ray.dir.to_array());
            extra.extend_from_slice(&n.to_array());
            extra.extend_from_slice(&f_geo);
            let (c, cache) = head.field.eval_cached(x, &extra)?;
            Some(ColorSample {
                value: vec3(c[0], c[1], c[2]),
                cache,
            })
        } else {
            None
        };
        points.push(VolumePoint {
            sdf_cache,
            grad,
            grad_norm: grad.norm().max(1e-8),
            s,
            phi: sigmoid(k * s),
            color,
        });
    }

    let alphas: Vec<f64> = (0..n_samples)
        .map(|i| alpha_from_phis(points[i].phi, points[i + 1].phi).min(1.0 - 1e-12))
        .collect();
    let mut color = Vec3::ZERO;
    let mut weights = Vec::with_capacity(n_samples);
    let mut transmittance = 1.0;
    for (i, &a) in alphas.iter().enumerate() {
        let w = transmittance * a;
        color += points[i].color.as_ref().unwrap().value * w;
        weights.push(w);
        transmittance *= 1.0 - a;
    }
    Ok(VolumeRenderEval {
        color,
        weight_sum: weights.iter().sum(),
        weights,
        points,
        alphas,
    })
}

impl VolumeRenderEval {
    /// Accumulate gradients of `up . color + up_wsum * weight_sum` into the
    /// sink (SDF parameters, head parameters, and density sharpness).
    pub fn backward(
        &self,
        geometry: &SdfScene,
        head: &RadianceHead,
        density: &NeusDensity,
        up: Vec3,
        up_wsum: f64,
        sink: &mut GradSink,
    ) {
        if up == Vec3::ZERO && up_wsum == 0.0 {
            return;
        }
        let n_samples = self.alphas.len();
        let k = density.sharpness();
        let f_geo_dim = head.f_geo_dim();

        // suffix sums of u . (w_m c_m) + up_wsum w_m for the alpha chain
        let mut suffix = vec![0.0; n_samples + 1];
        for i in (0..n_samples).rev() {
            let c = self.points[i].color.as_ref().unwrap().value;
            suffix[i] = suffix[i + 1] + (up.dot(c) + up_wsum) * self.weights[i];
        }

        let mut phi_hat = vec![0.0; n_samples + 1];
        let mut transmittance = 1.0;
        for i in 0..n_samples {
            let a = self.alphas[i];
            let point = &self.points[i];
            let c = point.color.as_ref().unwrap();

            // color chain into the head and its normal/feature inputs
            let w = self.weights[i];
            if w > 0.0 && up != Vec3::ZERO {
                let up_c = (up * w).to_array();
                let (_, dextra) = head
                    .field
                    .backward(&c.cache, &up_c, &mut sink.head);
                // extras: [dir(3), n(3), f_geo]
                let g_n = vec3(dextra[3], dextra[4], dextra[5]);
                let g_fgeo = &dextra[6..6 + f_geo_dim];
                // n = g/|g| chain
                let n = point.grad / point.grad_norm;
                let d_grad = (g_n - n * g_n.dot(n)) / point.grad_norm;
                geometry.backward_full(&point.sdf_cache, 0.0, g_fgeo, d_grad, &mut sink.sdf);
            }

            // alpha chain
            let d_alpha = (up.dot(c.value) + up_wsum) * transmittance
                - suffix[i + 1] / (1.0 - a).max(1e-12);
            let (da_dpi, da_dpn) = alpha_from_phis_grad(self.points[i].phi, self.points[i + 1].phi);
            phi_hat[i] += d_alpha * da_dpi;
            phi_hat[i + 1] += d_alpha * da_dpn;
            transmittance *= 1.0 - a;
        }

        let mut k_hat = 0.0;
        for (i, &ph) in phi_hat.iter().enumerate() {
            if ph == 0.0 {
                continue;
            }
            let point = &self.points[i];
            let sig_d = point.phi * (1.0 - point.phi);
            let s_hat = ph * k * sig_d;
            k_hat += ph * point.s * sig_d;
            geometry.backward_full(&point.sdf_cache, s_hat, &[], Vec3::ZERO, &mut sink.sdf);
        }
        if !sink.density.is_empty() {
            sink.density[0] += k_hat * density.sharpness_d_raw();
        }
    }
}

impl VolumeRenderEval {
    /// Space-carving hinge for rays known to see empty space: penalize
    /// `max(margin - s, 0)` at every sample. Unlike the accumulated weight,
    /// this gradient does not saturate once the crossing is opaque.
    pub fn carve_background(
        &self,
        geometry: &SdfScene,
        margin: f64,
        weight: f64,
        sink: &mut GradSink,
    ) -> f64 {
        let inv = weight / self.points.len() as f64;
        let mut loss = 0.0;
        for point in &self.points {
            let gap = margin - point.s;
            if gap > 0.0 {
                loss += inv * gap;
                geometry.backward_value(&point.sdf_cache, -inv, &mut sink.sdf);
            }
        }
        loss
    }
}

// ---------------------------------------------------------------------------
// Init fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InitConfig {
    pub iters: usize,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub eikonal_points: usize,
    pub eikonal_weight: f64,
    /// Weight of the empty-background term: rays whose reference pixel is
    /// black additionally penalize their accumulated weight, which stops the
    /// radiance head from painting silhouette shells black instead of the
    /// geometry carving them away.
    pub background_weight: f64,
    pub lr: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            iters: 2000,
            rays_per_batch: 512,
            samples_per_ray: 64,
            eikonal_points: 64,
            eikonal_weight: 0.1,
            background_weight: 0.3,
            lr: 5e-3,
            t_min: 0.05,
            t_max: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InitReport {
    pub iters_run: usize,
    pub final_loss: f64,
    pub mean_eikonal_residual: f64,
    pub warnings: Vec<String>,
}

/// Optimize the SDF, radiance head, and density sharpness against the input
/// views with an L1 color loss plus Eikonal regularization.
pub fn init_fit(
    geometry: &mut SdfScene,
    head: &mut RadianceHead,
    density: &mut NeusDensity,
    views: &[(Camera, ImageBuffer)],
    cfg: &InitConfig,
) -> Result<InitReport> {
    let mut report = InitReport::default();
    if views.is_empty() {
        return Err(Error::Config {
            reason: "init_fit needs at least one view".into(),
        });
    }
    if views.len() < 2 {
        let msg = "init_fit with a single view is under-constrained".to_string();
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    let sdf_len = geometry.param_len();
    if sdf_len == 0 {
        return Err(Error::Config {
            reason: "init_fit requires learned geometry".into(),
        });
    }

    let mut adam_sdf = AdamState::new(sdf_len, cfg.lr);
    let mut adam_head = AdamState::new(head.field.params.len(), cfg.lr);
    let mut adam_density = AdamState::new(1, cfg.lr * 0.1);
    let root = Rng::new(cfg.seed);

    for iter in 0..cfg.iters {
        let mut rng = root.derive(0x1217, iter as u64);
        let mut sink = GradSink {
            sdf: vec![0.0; sdf_len],
            head: vec![0.0; head.field.params.len()],
            density: vec![0.0; 1],
            ..Default::default()
        };
        let mut loss = 0.0;
        let mut ray_points: Vec<Vec3> = Vec::with_capacity(cfg.eikonal_points / 2 + 1);
        let inv = 1.0 / (cfg.rays_per_batch * 3) as f64;
        for _ in 0..cfg.rays_per_batch {
            let v = rng.uniform_usize(views.len());
            let (cam, img) = &views[v];
            let row = rng.uniform_usize(cam.height);
            let col = rng.uniform_usize(cam.width);
            let ray = cam.pixel_ray(row, col);
            let eval = volume_render(
                geometry,
                head,
                density,
                &ray,
                cfg.t_min,
                cfg.t_max,
                cfg.samples_per_ray,
                Some(&mut rng),
            )?;
            let target = img.get_rgb(row, col);
            let diff = eval.color - target;
            loss += diff.abs().sum() * inv;
            let up = vec3(diff.x.signum(), diff.y.signum(), diff.z.signum()) * inv;
            let is_background = target.abs().max_element() < 1e-6;
            if is_background {
                // a hair above zero: enforce "outside" without inflating
                // distances next to the true silhouette
                loss += eval.carve_background(
                    geometry,
                    0.005,
                    cfg.background_weight * inv * 3.0,
                    &mut sink,
                );
            }
            eval.backward(geometry, head, density, up, 0.0, &mut sink);
            // remember a few sample positions along this ray for the
            // Eikonal term (regularization where the field is exercised)
            if ray_points.len() < cfg.eikonal_points / 2 {
                let t = cfg.t_min + (cfg.t_max - cfg.t_min) * rng.uniform();
                ray_points.push(ray.at(t));
            }
        }

        // Eikonal on ray-region points plus uniform box points; the weight
        // ramps up over the last 40% of the schedule so the carved field
        // settles into a clean distance function while the data terms still
        // anchor the zero set
        let mut pts = ray_points;
        while pts.len() < cfg.eikonal_points {
            pts.push(vec3(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            ));
        }
        let mut eik_sink = GradSink {
            sdf: vec![0.0; sdf_len],
            ..Default::default()
        };
        let eik = crate::losses::eikonal_loss(geometry, &pts, Some(&mut eik_sink));
        let progress = iter as f64 / cfg.iters.max(1) as f64;
        let eik_weight = if progress < 0.6 {
            cfg.eikonal_weight
        } else {
            cfg.eikonal_weight.max(1.0)
        };
        for (g, e) in sink.sdf.iter_mut().zip(eik_sink.sdf.iter()) {
            *g += eik_weight * e;
        }
        loss += eik_weight * eik;

        // far-field prior: everything near the box boundary is empty space
        // (scenes are centered well inside the unit box by construction)
        {
            let field = geometry.field().unwrap();
            let mut far_grads = vec![0.0; sdf_len];
            let mut far_loss = 0.0;
            for _ in 0..16 {
                let dir = vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
                let x = dir * rng.uniform_in(0.88, 1.55);
                let x = vec3(x.x.clamp(-1.0, 1.0), x.y.clamp(-1.0, 1.0), x.z.clamp(-1.0, 1.0));
                if x.norm() < 0.88 {
                    continue;
                }
                let (out, cache) = field.eval_cached(x, &[])?;
                let gap = 0.02 - out[0];
                if gap > 0.0 {
                    far_loss += gap / 16.0;
                    let mut up = vec![0.0; field.spec.output_dim];
                    up[0] = -1.0 / 16.0;
                    field.backward(&cache, &up, &mut far_grads);
                }
            }
            for (g, e) in sink.sdf.iter_mut().zip(far_grads.iter()) {
                *g += e;
            }
            loss += far_loss;
        }

        if !loss.is_finite() {
            return Err(Error::Diverged {
                reason: format!("non-finite init loss at iteration {iter}"),
            });
        }

        let field = geometry.field_mut().unwrap();
        field.params.grads.copy_from_slice(&sink.sdf);
        adam_sdf.step(&mut field.params)?;
        head.field.params.grads.copy_from_slice(&sink.head);
        adam_head.step(&mut head.field.params)?;
        density.params.grads[0] = sink.density[0];
        adam_density.step(&mut density.params)?;

        report.final_loss = loss;
        report.iters_run = iter + 1;
        if iter % 200 == 0 {
            log::info!("init iter {iter}: loss {loss:.5}, eikonal {eik:.5}");
        }
    }

    // report the post-fit Eikonal residual on fresh points
    let mut rng = root.derive(0x1219, 0);
    let pts: Vec<Vec3> = (0..512)
        .map(|_| {
            vec3(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            )
        })
        .collect();
    report.mean_eikonal_residual = crate::losses::eikonal_loss(geometry, &pts, None);
    Ok(report)
}

/// Warm-start the diffuse albedo from the radiance head's head-on response:
/// fit `rho_d(x)` to `c(x, d = -n)` over surface points.
pub fn warm_start_albedo(
    geometry: &SdfScene,
    head: &RadianceHead,
    diffuse: &mut Field,
    surface_points: &[(Vec3, Vec3)],
    iters: usize,
    lr: f64,
) -> Result<()> {
    if surface_points.is_empty() {
        return Ok(());
    }
    let mut targets = Vec::with_capacity(surface_points.len());
    for &(x, n) in surface_points {
        let (_, f_geo) = geometry.eval(x);
        let mut extra = Vec::with_capacity(6 + f_geo.len());
        extra.extend_from_slice(&(-n).to_array());
        extra.extend_from_slice(&n.to_array());
        extra.extend_from_slice(&f_geo);
        let c = head.field.eval(x, &extra)?;
        targets.push((x, vec3(c[0], c[1], c[2])));
    }
    let mut adam = AdamState::new(diffuse.params.len(), lr);
    let inv = 1.0 / targets.len() as f64;
    for _ in 0..iters {
        let mut grads = vec![0.0; diffuse.params.len()];
        for (x, target) in &targets {
            let (out, cache) = diffuse.eval_cached(*x, &[])?;
            let up = [
                2.0 * (out[0] - target.x) * inv,
                2.0 * (out[1] - target.y) * inv,
                2.0 * (out[2] - target.z) * inv,
            ];
            diffuse.backward(&cache, &up, &mut grads);
        }
        diffuse.params.grads.copy_from_slice(&grads);
        adam.step(&mut diffuse.params)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        // matched phis: no crossing
        assert_eq!(alpha_from_phis(0.6, 0.6), 0.0);
        // direct substitution
        assert!((alpha_from_phis(0.8, 0.4) - 0.5).abs() < 1e-12);
        // increasing phi clamps to zero
        assert_eq!(alpha_from_phis(0.4, 0.8), 0.0);
    }

    #[test]
    fn alpha_in_unit_interval_for_all_finite_inputs() {
        let d = NeusDensity::new(50.0, 64);
        let mut rng = crate::core::rng::Rng::new(8);
        for _ in 0..2000 {
            let a = neus_alpha(rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0), &d);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn transmittance_examples() {
        assert_eq!(residual_transmittance(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(residual_transmittance(&[1.0, 0.3]), 0.0);
        assert!((residual_transmittance(&[0.5, 0.5]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn transmittance_monotone_under_added_opacity() {
        let mut rng = crate::core::rng::Rng::new(3);
        for _ in 0..200 {
            let n = 1 + rng.uniform_usize(10);
            let alphas: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let base = residual_transmittance(&alphas);
            let mut extended = alphas.clone();
            extended.push(rng.uniform());
            assert!(residual_transmittance(&extended) <= base + 1e-12);
            assert!((0.0..=1.0).contains(&base));
        }
    }

    #[test]
    fn transmittance_grad_matches_fd() {
        let alphas = [0.1, 0.4, 0.0, 0.7];
        let g = residual_transmittance_grad(&alphas);
        for m in 0..alphas.len() {
            let mut f = |v: f64| {
                let mut a = alphas;
                a[m] = v;
                residual_transmittance(&a)
            };
            let fd = crate::numcheck::central_diff(&mut f, alphas[m], 1e-6);
            assert!((g[m] - fd).abs() < 1e-8, "{m}: {} vs {fd}", g[m]);
        }
    }

    #[test]
    fn sharpness_roundtrip() {
        let d = NeusDensity::new(200.0, 32);
        assert!((d.sharpness() - 200.0).abs() < 1e-9 * 200.0);
    }

    use crate::fields::{Activation, BackendSpec, FieldSpec};
    use crate::geometry::AnalyticSdf;

    fn test_head(f_geo: usize, rng: &mut Rng) -> RadianceHead {
        let spec = FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 2,
                width: 8,
                hidden_beta: 10.0,
            },
            output_dim: 3,
            encoding_freqs: 2,
            extra_input_dim: 6 + f_geo,
            activation: Activation::Sigmoid,
        };
        let mut field = Field::new(spec, "head").unwrap();
        field.init_random(rng);
        RadianceHead { field }
    }

    #[test]
    fn compositing_examples() {
        // hand-built alphas and colors verify the discrete compositing form
        let alphas = [0.5, 1.0];
        let colors = [vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)];
        let mut color = Vec3::ZERO;
        let mut t = 1.0;
        for (a, c) in alphas.iter().zip(colors.iter()) {
            color += *c * (t * a);
            t *= 1.0 - a;
        }
        assert!((color - vec3(0.5, 0.5, 0.0)).norm() < 1e-12);

        // single opaque sample passes its color through
        let mut c1 = Vec3::ZERO;
        let mut t1 = 1.0;
        c1 += vec3(0.2, 0.3, 0.4) * (t1 * 1.0);
        t1 *= 0.0;
        assert!((c1 - vec3(0.2, 0.3, 0.4)).norm() < 1e-12);
        assert_eq!(t1, 0.0);
    }

    #[test]
    fn empty_space_renders_black_with_zero_weight() {
        let mut rng = Rng::new(3);
        let geometry = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: vec3(100.0, 0.0, 0.0),
            radius: 0.1,
        });
        let head = test_head(0, &mut rng);
        let density = NeusDensity::new(80.0, 16);
        let ray = Ray::new(vec3(0.0, 0.0, -2.0), vec3(0.0, 0.0, 1.0));
        let eval =
            volume_render(&geometry, &head, &density, &ray, 0.1, 3.0, 16, None).unwrap();
        assert!(eval.weight_sum < 1e-6, "weight sum {}", eval.weight_sum);
        assert!(eval.color.norm() < 1e-6);
    }

    #[test]
    fn weights_nonnegative_transmittance_nonincreasing() {
        let mut rng = Rng::new(4);
        let spec = FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 2,
                width: 8,
                hidden_beta: 10.0,
            },
            output_dim: 2,
            encoding_freqs: 1,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "sdf").unwrap();
        field.init_sphere(0.5, &mut rng);
        let geometry = SdfScene::Learned(field);
        let head = test_head(1, &mut rng);
        let density = NeusDensity::new(30.0, 16);
        for trial in 0..5 {
            let mut r = Rng::new(trial);
            let ray = Ray::new(
                vec3(0.0, 0.0, -2.0),
                vec3(r.uniform_in(-0.3, 0.3), r.uniform_in(-0.3, 0.3), 1.0),
            );
            let eval =
                volume_render(&geometry, &head, &density, &ray, 0.5, 3.5, 24, Some(&mut r))
                    .unwrap();
            assert!(eval.weights.iter().all(|&w| w >= 0.0));
            assert!(eval.weight_sum <= 1.0 + 1e-9);
            // prefix transmittances never increase
            let mut t = 1.0;
            for (w, a) in eval.weights.iter().zip(eval.alphas.iter()) {
                assert!(*w <= t + 1e-12);
                t *= 1.0 - a;
            }
        }
    }

    #[test]
    fn volume_render_gradients_match_fd() {
        use crate::numcheck::{central_diff_vec, grads_match, FD_REL, FD_STEP};
        let mut rng = Rng::new(6);
        let spec = FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 2,
                width: 6,
                hidden_beta: 10.0,
            },
            output_dim: 2,
            encoding_freqs: 1,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "sdf").unwrap();
        field.init_sphere(0.5, &mut rng);
        let geometry = SdfScene::Learned(field);
        let head = test_head(1, &mut rng);
        let density = NeusDensity::new(25.0, 8);
        let ray = Ray::new(vec3(0.1, -0.2, -1.8), vec3(0.02, 0.05, 1.0));
        let up = vec3(rng.normal(), rng.normal(), rng.normal());
        let n_samples = 12;

        let eval = volume_render(&geometry, &head, &density, &ray, 0.6, 3.0, n_samples, None)
            .unwrap();
        let mut sink = GradSink {
            sdf: vec![0.0; geometry.param_len()],
            head: vec![0.0; head.field.params.len()],
            density: vec![0.0; 1],
            ..Default::default()
        };
        eval.backward(&geometry, &head, &density, up, 0.0, &mut sink);

        let run = |g: &SdfScene, h: &RadianceHead, d: &NeusDensity| {
            let e = volume_render(g, h, d, &ray, 0.6, 3.0, n_samples, None).unwrap();
            up.dot(e.color)
        };
        {
            let base = geometry.field().unwrap().params.values.clone();
            let mut g2 = geometry.clone();
            let mut f = |p: &[f64]| {
                g2.field_mut().unwrap().params.values.copy_from_slice(p);
                run(&g2, &head, &density)
            };
            let fd = central_diff_vec(&mut f, &base, FD_STEP);
            grads_match(&sink.sdf, &fd, FD_REL, 1e-6).unwrap();
        }
        {
            let base = head.field.params.values.clone();
            let mut h2 = head.clone();
            let mut f = |p: &[f64]| {
                h2.field.params.values.copy_from_slice(p);
                run(&geometry, &h2, &density)
            };
            let fd = central_diff_vec(&mut f, &base, FD_STEP);
            grads_match(&sink.head, &fd, FD_REL, 1e-6).unwrap();
        }
        {
            let base = density.params.values.clone();
            let mut d2 = density.clone();
            let mut f = |p: &[f64]| {
                d2.params.values.copy_from_slice(p);
                run(&geometry, &head, &d2)
            };
            let fd = central_diff_vec(&mut f, &base, FD_STEP);
            grads_match(&sink.density, &fd, FD_REL, 1e-6).unwrap();
        }
    }

    #[test]
    fn init_fit_zero_iterations_is_identity() {
        let mut rng = Rng::new(9);
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 8 },
            output_dim: 1,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "sdf").unwrap();
        field.init_sphere(0.5, &mut rng);
        let before = field.params.values.clone();
        let mut geometry = SdfScene::Learned(field);
        let mut head = test_head(0, &mut rng);
        let head_before = head.field.params.values.clone();
        let mut density = NeusDensity::new(30.0, 8);
        let cam = Camera::look_at(
            vec3(0.0, 0.0, -2.0),
            Vec3::ZERO,
            vec3(0.0, 1.0, 0.0),
            8,
            8,
            0.6,
        )
        .unwrap();
        let views = vec![(cam, ImageBuffer::zeros(8, 8, 3))];
        let cfg = InitConfig {
            iters: 0,
            rays_per_batch: 4,
            samples_per_ray: 4,
            ..Default::default()
        };
        let report = init_fit(&mut geometry, &mut head, &mut density, &views, &cfg).unwrap();
        assert_eq!(report.iters_run, 0);
        assert!(!report.warnings.is_empty(), "single view should warn");
        assert_eq!(geometry.field().unwrap().params.values, before);
        assert_eq!(head.field.params.values, head_before);
    }
}
