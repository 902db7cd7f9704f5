//! Feature-field distillation: ingest precomputed per-pixel feature maps,
//! fit a surface feature field by minimizing the squared residual over
//! foreground pixels, then freeze the field and inject it into the specular
//! albedo and roughness networks as a detached extra input.

use std::path::Path;

use crate::core::camera::Camera;
use crate::core::error::{Error, Result};
use crate::core::image::ImageBuffer;
use crate::core::rng::Rng;
use crate::fields::Field;
use crate::geometry::{sphere_trace, SdfScene, TraceOptions};
use crate::shading::MaterialFields;
use crate::trainer::AdamState;

/// Per-view feature maps with consistent dimensionality.
#[derive(Debug, Clone)]
pub struct FeatureMapSet {
    pub maps: Vec<ImageBuffer>,
    pub dim: usize,
}

impl FeatureMapSet {
    /// Feature vector for an image pixel; feature maps may be stored at a
    /// different resolution (e.g. upsampled by two) and are indexed at the
    /// proportional grid position.
    pub fn lookup(&self, view: usize, row: usize, col: usize, img_h: usize, img_w: usize) -> &[f64] {
        let map = &self.maps[view];
        let r = (row * map.height / img_h).min(map.height - 1);
        let c = (col * map.width / img_w).min(map.width - 1);
        map.pixel_slice(r, c)
    }
}

/// Load and validate feature maps for every view.
pub fn ingest_features(paths: &[impl AsRef<Path>], expected_dim: usize) -> Result<FeatureMapSet> {
    let mut maps = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let map = ImageBuffer::read_tnsr(p).map_err(|e| Error::FeatureMap {
            reason: format!("missing or unreadable view `{}`: {e}", p.display()),
        })?;
        if map.channels != expected_dim {
            return Err(Error::FeatureMap {
                reason: format!(
                    "dimension mismatch in `{}`: expected {expected_dim} channels, got {}",
                    p.display(),
                    map.channels
                ),
            });
        }
        if let Some(first) = maps.first() {
            let f: &ImageBuffer = first;
            if f.height != map.height || f.width != map.width {
                return Err(Error::FeatureMap {
                    reason: format!(
                        "resolution mismatch in `{}`: {}x{} vs {}x{}",
                        p.display(),
                        map.height,
                        map.width,
                        f.height,
                        f.width
                    ),
                });
            }
        }
        maps.push(map);
    }
    Ok(FeatureMapSet {
        dim: expected_dim,
        maps,
    })
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub iters: usize,
    pub pixels_per_batch: usize,
    pub lr: f64,
    pub weight: f64,
    pub t_range: (f64, f64),
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            iters: 1000,
            pixels_per_batch: 256,
            lr: 3e-3,
            weight: 1.0,
            t_range: (0.05, 4.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DistillReport {
    pub iters_run: usize,
    pub final_loss: f64,
    pub skipped_batches: usize,
}

/// Fit the feature field over surface points: for each sampled foreground
/// pixel, trace the (frozen) geometry and minimize the mean squared residual
/// between the field at the hit and the 2D feature. Batches with no surface
/// hits are skipped with a warning.
pub fn distill_fit(
    geometry: &SdfScene,
    feature_field: &mut Field,
    features: &FeatureMapSet,
    cameras: &[Camera],
    cfg: &DistillConfig,
) -> Result<DistillReport> {
    if cameras.len() != features.maps.len() {
        return Err(Error::FeatureMap {
            reason: format!(
                "{} cameras but {} feature maps",
                cameras.len(),
                features.maps.len()
            ),
        });
    }
    if feature_field.spec.output_dim != features.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature channels", features.dim),
            got: format!("{}", feature_field.spec.output_dim),
            context: "distill_fit feature field".into(),
        });
    }
    let trace = TraceOptions::default();
    let mut adam = AdamState::new(feature_field.params.len(), cfg.lr);
    let root = Rng::new(cfg.seed);
    let mut report = DistillReport::default();

    for iter in 0..cfg.iters {
        let mut rng = root.derive(0xd157, iter as u64);
        let mut grads = vec![0.0; feature_field.params.len()];
        let mut loss = 0.0;
        let mut hits = 0usize;
        let mut batch = Vec::with_capacity(cfg.pixels_per_batch);
        for _ in 0..cfg.pixels_per_batch {
            let v = rng.uniform_usize(cameras.len());
            let cam = &cameras[v];
            let row = rng.uniform_usize(cam.height);
            let col = rng.uniform_usize(cam.width);
            let ray = cam.pixel_ray(row, col);
            if let Some(hit) = sphere_trace(geometry, &ray, cfg.t_range.0, cfg.t_range.1, &trace) {
                batch.push((v, row, col, hit.x, cam.height, cam.width));
                hits += 1;
            }
        }
        if hits == 0 {
            log::warn!("distill iter {iter}: no surface hits in batch, skipping");
            report.skipped_batches += 1;
            continue;
        }
        let inv = 1.0 / hits as f64;
        for (v, row, col, x, img_h, img_w) in batch {
            let target = features.lookup(v, row, col, img_h, img_w);
            let (out, cache) = feature_field.eval_cached(x, &[])?;
            let mut up = vec![0.0; out.len()];
            for c in 0..out.len() {
                let r = out[c] - target[c];
                loss += cfg.weight * r * r * inv;
                up[c] = cfg.weight * 2.0 * r * inv;
            }
            feature_field.backward(&cache, &up, &mut grads);
        }
        feature_field.params.grads.copy_from_slice(&grads);
        adam.step(&mut feature_field.params)?;
        report.final_loss = loss;
        report.iters_run = iter + 1;
        if iter % 200 == 0 {
            log::info!("distill iter {iter}: loss {loss:.6}");
        }
    }
    Ok(report)
}

/// Attach the frozen feature field to the specular-albedo and roughness
/// networks as a detached extra input; the diffuse field is unchanged.
pub fn inject_features(materials: &mut MaterialFields, feature_field: Field) -> Result<()> {
    let dim = feature_field.spec.output_dim;
    for (f, name) in [
        (&materials.specular, "specular"),
        (&materials.roughness, "roughness"),
    ] {
        if f.spec.extra_input_dim != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("extra input dim {dim}"),
                got: format!("{}", f.spec.extra_input_dim),
                context: format!("feature injection into the {name} field"),
            });
        }
    }
    if materials.diffuse.spec.extra_input_dim != 0 {
        return Err(Error::FieldSpec {
            reason: "the diffuse field does not take injected features".into(),
        });
    }
    materials.feature = Some(feature_field);
    Ok(())
}

/// Checksum of the feature parameters; the frozen contract is that this is
/// bit-identical across the surface-rendering stage.
pub fn feature_checksum(field: &Field) -> u64 {
    field
        .params
        .values
        .iter()
        .fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::math::{vec3, Vec3};
    use crate::core::tensor::tensor_write;
    use crate::fields::{Activation, BackendSpec, FieldSpec};
    use crate::geometry::AnalyticSdf;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("pir-distill-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn write_feature_map(path: &std::path::Path, h: usize, w: usize, d: usize, fill: f32) {
        let data = vec![fill; h * w * d];
        tensor_write(path, &[h as u32, w as u32, d as u32], &data).unwrap();
    }

    #[test]
    fn ingest_validates_dims() {
        let a = tmp("a.tnsr");
        let b = tmp("b.tnsr");
        let c = tmp("c.tnsr");
        write_feature_map(&a, 8, 8, 4, 0.5);
        write_feature_map(&b, 8, 8, 4, 0.25);
        write_feature_map(&c, 4, 4, 4, 0.25);

        let set = ingest_features(&[&a, &b], 4).unwrap();
        assert_eq!(set.maps.len(), 2);

        // channel-count mismatch
        match ingest_features(&[&a], 8) {
            Err(Error::FeatureMap { reason }) => assert!(reason.contains("dimension mismatch")),
            other => panic!("expected FeatureMap error, got {other:?}"),
        }
        // resolution mismatch across views
        match ingest_features(&[&a, &c], 4) {
            Err(Error::FeatureMap { reason }) => assert!(reason.contains("resolution mismatch")),
            other => panic!("expected FeatureMap error, got {other:?}"),
        }
        // missing view
        match ingest_features(&[tmp("missing.tnsr")], 4) {
            Err(Error::FeatureMap { reason }) => assert!(reason.contains("unreadable")),
            other => panic!("expected FeatureMap error, got {other:?}"),
        }
    }

    #[test]
    fn upsampled_maps_index_proportionally() {
        // a 16x16 feature map against an 8x8 image: pixel (r, c) reads (2r, 2c)
        let mut map = ImageBuffer::zeros(16, 16, 2);
        for r in 0..16 {
            for c in 0..16 {
                map.set(r, c, 0, (r * 16 + c) as f64);
            }
        }
        let set = FeatureMapSet {
            maps: vec![map],
            dim: 2,
        };
        assert_eq!(set.lookup(0, 3, 5, 8, 8)[0], (6 * 16 + 10) as f64);
    }

    #[test]
    fn zero_residual_means_zero_update() {
        // targets produced by the field itself: the residual is bit-exact
        // zero, so gradients are zero and parameters stay untouched
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 4 },
            output_dim: 2,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "feat").unwrap();
        for (i, v) in field.params.values.iter_mut().enumerate() {
            *v = 0.3 + 0.01 * i as f64;
        }
        let before = field.params.values.clone();

        let geometry = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: Vec3::ZERO,
            radius: 0.5,
        });
        let cam = Camera::look_at(
            vec3(0.0, 0.0, -2.0),
            Vec3::ZERO,
            vec3(0.0, 1.0, 0.0),
            8,
            8,
            0.5,
        )
        .unwrap();
        let mut map = ImageBuffer::zeros(8, 8, 2);
        for r in 0..8 {
            for c in 0..8 {
                let ray = cam.pixel_ray(r, c);
                if let Some(hit) = sphere_trace(&geometry, &ray, 0.5, 4.0, &TraceOptions::default())
                {
                    let out = field.eval(hit.x, &[]).unwrap();
                    map.set(r, c, 0, out[0]);
                    map.set(r, c, 1, out[1]);
                }
            }
        }
        let features = FeatureMapSet {
            maps: vec![map],
            dim: 2,
        };
        let cfg = DistillConfig {
            iters: 3,
            pixels_per_batch: 16,
            t_range: (0.5, 4.0),
            ..Default::default()
        };
        let report = distill_fit(&geometry, &mut field, &features, &[cam], &cfg).unwrap();
        assert_eq!(report.final_loss, 0.0);
        assert_eq!(field.params.values, before, "zero gradient must not move params");
    }

    #[test]
    fn background_only_batches_are_skipped() {
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 4 },
            output_dim: 1,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "feat").unwrap();
        // geometry far outside every camera ray
        let geometry = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: vec3(100.0, 0.0, 0.0),
            radius: 0.1,
        });
        let map = ImageBuffer::zeros(8, 8, 1);
        let features = FeatureMapSet {
            maps: vec![map],
            dim: 1,
        };
        let cam = Camera::look_at(
            vec3(0.0, 0.0, -2.0),
            Vec3::ZERO,
            vec3(0.0, 1.0, 0.0),
            8,
            8,
            0.5,
        )
        .unwrap();
        let cfg = DistillConfig {
            iters: 2,
            pixels_per_batch: 8,
            t_range: (0.5, 4.0),
            ..Default::default()
        };
        let before = field.params.values.clone();
        let report = distill_fit(&geometry, &mut field, &features, &[cam], &cfg).unwrap();
        assert_eq!(report.skipped_batches, 2);
        assert_eq!(field.params.values, before);
    }

    #[test]
    fn constant_region_targets_are_reproduced() {
        // two-hemisphere constant features on a sphere: after fitting, the
        // field reproduces each constant on region interiors within 0.05
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 16 },
            output_dim: 2,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "feat").unwrap();
        let geometry = SdfScene::Analytic(AnalyticSdf::Sphere {
            center: Vec3::ZERO,
            radius: 0.5,
        });
        // views from both hemispheres
        let mut cameras = Vec::new();
        let mut maps = Vec::new();
        for (i, dir) in [
            vec3(0.0, 0.0, -1.8),
            vec3(0.0, 0.0, 1.8),
            vec3(1.8, 0.0, 0.4),
            vec3(-1.8, 0.0, -0.4),
        ]
        .iter()
        .enumerate()
        {
            let cam = Camera::look_at(
                *dir,
                Vec3::ZERO,
                if i == 1 { vec3(0.0, 1.0, 0.0) } else { vec3(0.0, 1.0, 0.0) },
                16,
                16,
                0.6,
            )
            .unwrap();
            let mut map = ImageBuffer::zeros(16, 16, 2);
            for r in 0..16 {
                for c in 0..16 {
                    let ray = cam.pixel_ray(r, c);
                    if let Some(hit) =
                        sphere_trace(&geometry, &ray, 0.3, 4.0, &TraceOptions::default())
                    {
                        let target = if hit.x.z > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
                        map.set(r, c, 0, target.0);
                        map.set(r, c, 1, target.1);
                    }
                }
            }
            cameras.push(cam);
            maps.push(map);
        }
        let features = FeatureMapSet { maps, dim: 2 };
        let cfg = DistillConfig {
            iters: 400,
            pixels_per_batch: 64,
            lr: 2e-2,
            t_range: (0.3, 4.0),
            ..Default::default()
        };
        distill_fit(&geometry, &mut field, &features, &cameras, &cfg).unwrap();
        // probe region interiors (away from the equator seam)
        for &z in &[0.35f64, -0.35] {
            let r = (0.25f64 - z * z).max(0.0).sqrt();
            let x = vec3(r, 0.0, z);
            let out = field.eval(x, &[]).unwrap();
            let expect = if z > 0.0 { [1.0, 0.0] } else { [0.0, 1.0] };
            for c in 0..2 {
                assert!(
                    (out[c] - expect[c]).abs() < 0.05,
                    "channel {c} at z={z}: {} vs {}",
                    out[c],
                    expect[c]
                );
            }
        }
    }

    #[test]
    fn injection_validates_and_freezes() {
        let mut rng = Rng::new(4);
        let mat_spec = |out, extra| FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 2,
                width: 8,
                hidden_beta: 10.0,
            },
            output_dim: out,
            encoding_freqs: 2,
            extra_input_dim: extra,
            activation: Activation::Sigmoid,
        };
        let feat_spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 4 },
            output_dim: 3,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut materials = MaterialFields {
            diffuse: Field::new(mat_spec(3, 0), "diffuse").unwrap(),
            specular: Field::new(mat_spec(3, 3), "specular").unwrap(),
            roughness: Field::new(mat_spec(1, 3), "roughness").unwrap(),
            feature: None,
        };
        materials.diffuse.init_random(&mut rng);
        materials.specular.init_random(&mut rng);
        materials.roughness.init_random(&mut rng);
        let mut feat = Field::new(feat_spec, "feature").unwrap();
        for v in feat.params.values.iter_mut() {
            *v = rng.normal();
        }
        let checksum = feature_checksum(&feat);
        inject_features(&mut materials, feat).unwrap();

        // determinism: equal features and positions give equal roughness
        use crate::shading::MaterialModel;
        let model = MaterialModel::Fields(materials);
        let x = vec3(0.2, -0.1, 0.3);
        let a = model.eval_at(x).unwrap().sample.roughness;
        let b = model.eval_at(x).unwrap().sample.roughness;
        assert_eq!(a, b);
        let mf = model.fields().unwrap();
        assert_eq!(checksum, feature_checksum(mf.feature.as_ref().unwrap()));

        // dim mismatch is rejected
        let mut materials2 = MaterialFields {
            diffuse: Field::new(mat_spec(3, 0), "diffuse").unwrap(),
            specular: Field::new(mat_spec(3, 5), "specular").unwrap(),
            roughness: Field::new(mat_spec(1, 5), "roughness").unwrap(),
            feature: None,
        };
        let feat2 = Field::new(
            FieldSpec {
                backend: BackendSpec::Grid { resolution: 4 },
                output_dim: 3,
                encoding_freqs: 0,
                extra_input_dim: 0,
                activation: Activation::None,
            },
            "feature",
        )
        .unwrap();
        materials2.diffuse.init_random(&mut rng);
        assert!(inject_features(&mut materials2, feat2).is_err());
    }

    #[test]
    fn zero_dim_injection_behaves_as_before() {
        // fields configured without extra inputs ignore injection entirely
        let mut rng = Rng::new(5);
        let spec = |out| FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 2,
                width: 8,
                hidden_beta: 10.0,
            },
            output_dim: out,
            encoding_freqs: 2,
            extra_input_dim: 0,
            activation: Activation::Sigmoid,
        };
        let mut materials = MaterialFields {
            diffuse: Field::new(spec(3), "diffuse").unwrap(),
            specular: Field::new(spec(3), "specular").unwrap(),
            roughness: Field::new(spec(1), "roughness").unwrap(),
            feature: None,
        };
        materials.diffuse.init_random(&mut rng);
        materials.specular.init_random(&mut rng);
        materials.roughness.init_random(&mut rng);
        use crate::shading::MaterialModel;
        let x = vec3(0.1, 0.1, 0.1);
        let model = MaterialModel::Fields(materials);
        let before = model.eval_at(x).unwrap().sample;
        // no feature field attached: evaluation path identical
        let after = model.eval_at(x).unwrap().sample;
        assert_eq!(before.roughness, after.roughness);
        assert_eq!(before.specular, after.specular);
    }
}
