//! Staged optimization driver: init (volume rendering), feature
//! distillation, and joint physically-based surface rendering, with
//! per-block Adam states, freeze schedules, checkpointing, and a CSV loss
//! log. Stages are resumable: a completed stage is loaded from its
//! checkpoint instead of re-run.

pub mod adam;
pub mod checkpoint;
pub mod eval;

use std::io::Write as _;
use std::path::PathBuf;

pub use adam::AdamState;

use crate::config::{GeometryConfig, SceneConfig};
use crate::core::error::{Error, Result};
use crate::core::image::ImageBuffer;
use crate::core::math::{vec3, Vec3};
use crate::core::rng::Rng;
use crate::distill::{distill_fit, feature_checksum, ingest_features, DistillConfig, FeatureMapSet};
use crate::fields::Field;
use crate::geometry::SdfScene;
use crate::interreflect::BlendNet;
use crate::losses::{
    pyramid_l2_backward, roughness_range_grad, roughness_range_loss, smoothness_loss,
    ssim_backward, total_loss, LossReport, LossTerms,
};
use crate::render::{shade_pixel, RenderOptions, SceneModel};
use crate::scenegen::Dataset;
use crate::shading::{MaterialFields, MaterialModel, PointLight, ShadeOptions};
use crate::volinit::{init_fit, warm_start_albedo, InitConfig, NeusDensity, RadianceHead};

pub const PYRAMID_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Distill,
    Pbr,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Distill => "distill",
            Stage::Pbr => "pbr",
        }
    }
}

struct OptStates {
    sdf: AdamState,
    diffuse: AdamState,
    specular: AdamState,
    roughness: AdamState,
    light: AdamState,
    density: AdamState,
    blend: AdamState,
    head: AdamState,
    feature: AdamState,
}

/// Everything a run needs: config, dataset, model, optimizer states.
pub struct Workspace {
    pub cfg: SceneConfig,
    pub dataset: Dataset,
    pub scene: SceneModel,
    /// Standalone feature field (owner); a frozen clone is injected into the
    /// materials once distillation completes.
    pub feature_field: Option<Field>,
    pub feature_distilled: bool,
    images: Vec<ImageBuffer>,
    feature_maps: Option<FeatureMapSet>,
    opt: OptStates,
}

impl Workspace {
    /// Build a fresh workspace: load the dataset, construct and seed every
    /// learnable block from the config.
    pub fn create(cfg: SceneConfig) -> Result<Workspace> {
        cfg.validate()?;
        let dataset = Dataset::load(&cfg.dataset)?;
        let mut rng = Rng::new(cfg.seed ^ 0x5ce0e);

        let geometry = match &cfg.geometry {
            GeometryConfig::Analytic => dataset.preset().geometry(),
            GeometryConfig::Learned { sdf, init_radius } => {
                let mut field = Field::new(sdf.clone(), "sdf")?;
                field.init_sphere(*init_radius, &mut rng);
                SdfScene::Learned(field)
            }
        };

        let mut diffuse = Field::new(cfg.fields.diffuse.clone(), "diffuse")?;
        let mut specular = Field::new(cfg.fields.specular.clone(), "specular")?;
        let mut roughness = Field::new(cfg.fields.roughness.clone(), "roughness")?;
        diffuse.init_random(&mut rng);
        specular.init_random(&mut rng);
        roughness.init_random(&mut rng);
        let materials = MaterialFields {
            diffuse,
            specular,
            roughness,
            feature: None,
        };
        materials.validate()?;

        let feature_field = match &cfg.fields.feature {
            Some(spec) => {
                let mut f = Field::new(spec.clone(), "feature")?;
                f.init_random(&mut rng);
                Some(f)
            }
            None => None,
        };

        let head = if matches!(cfg.geometry, GeometryConfig::Learned { .. })
            && cfg.schedule.init_iters > 0
        {
            let f_geo = geometry.f_geo_dim();
            let spec = cfg.fields.radiance_head.clone().unwrap_or_else(|| {
                crate::fields::FieldSpec {
                    backend: crate::fields::BackendSpec::Mlp {
                        layers: 3,
                        width: 32,
                        hidden_beta: 100.0,
                    },
                    output_dim: 3,
                    encoding_freqs: 4,
                    extra_input_dim: 6 + f_geo,
                    activation: crate::fields::Activation::Sigmoid,
                }
            });
            if spec.extra_input_dim != 6 + f_geo {
                return Err(Error::Config {
                    reason: format!(
                        "radiance head extra_input_dim must be {} (dir + normal + f_geo)",
                        6 + f_geo
                    ),
                });
            }
            let mut f = Field::new(spec, "head")?;
            f.init_random(&mut rng);
            Some(RadianceHead { field: f })
        } else {
            None
        };

        let light = PointLight::new(
            Vec3::from_array(cfg.light.offset_init),
            cfg.light.intensity_init,
        );
        let density = NeusDensity::new(cfg.render.sharpness_init, cfg.sampling.volume_samples);
        let blend = BlendNet::new(
            cfg.fields.blend_layers,
            cfg.fields.blend_width,
            cfg.render.gamma_init,
            &mut rng,
        );

        let mut images = Vec::with_capacity(dataset.view_count());
        for v in 0..dataset.view_count() {
            images.push(dataset.image(v)?);
        }
        let feature_maps = if cfg.render.features_enabled {
            let paths: Vec<PathBuf> = dataset
                .meta
                .views
                .iter()
                .map(|v| dataset.root.join(&v.features))
                .collect();
            Some(ingest_features(&paths, dataset.meta.feature_dim)?)
        } else {
            None
        };

        let lr = cfg.schedule.lr;
        let opt = OptStates {
            sdf: AdamState::new(geometry.param_len(), lr),
            diffuse: AdamState::new(materials.diffuse.params.len(), lr),
            specular: AdamState::new(materials.specular.params.len(), lr),
            roughness: AdamState::new(materials.roughness.params.len(), lr),
            light: AdamState::new(4, lr),
            density: AdamState::new(1, lr),
            blend: AdamState::new(blend.params.len(), lr),
            head: AdamState::new(head.as_ref().map_or(0, |h| h.field.params.len()), lr),
            feature: AdamState::new(feature_field.as_ref().map_or(0, |f| f.params.len()), lr),
        };

        Ok(Workspace {
            scene: SceneModel {
                geometry,
                materials: MaterialModel::Fields(materials),
                light,
                density,
                blend,
                head,
            },
            cfg,
            dataset,
            feature_field,
            feature_distilled: false,
            images,
            feature_maps,
            opt,
        })
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            shade: ShadeOptions {
                visibility_samples: self.cfg.sampling.visibility_samples,
                surface_eps: self.cfg.render.surface_eps,
                eta: self.cfg.render.eta,
                enable_visibility: self.cfg.render.enable_visibility,
            },
            trace: Default::default(),
            lobe_samples: self.cfg.sampling.lobe_samples,
            enable_interreflect: self.cfg.render.enable_interreflect,
            t_min: self.dataset.meta.t_range[0],
            t_max: self.dataset.meta.t_range[1],
            seed: self.cfg.seed,
        }
    }

    fn checkpoint_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.out_dir.join("checkpoints").join(stage.name())
    }

    pub fn stage_done(&self, stage: Stage) -> bool {
        checkpoint::exists(&self.checkpoint_dir(stage))
    }

    /// Save the full model state for a stage. Live parameters are rounded to
    /// the checkpoint precision so resumed runs continue bit-identically.
    pub fn save_checkpoint(&mut self, stage: Stage, iter: usize) -> Result<()> {
        let dir = self.checkpoint_dir(stage);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut meta = checkpoint::CheckpointMeta {
            stage: stage.name().to_string(),
            iter,
            feature_distilled: self.feature_distilled,
            adam_steps: Default::default(),
            specs: Default::default(),
        };

        if let Some(field) = self.scene.geometry.field_mut() {
            checkpoint::save_block(&dir, "sdf", &mut field.params, &mut self.opt.sdf)?;
            meta.adam_steps.insert("sdf".into(), self.opt.sdf.step);
            meta.specs.insert("sdf".into(), field.spec.clone());
        }
        {
            let mf = self.scene.materials.fields_mut().expect("field materials");
            checkpoint::save_block(&dir, "diffuse", &mut mf.diffuse.params, &mut self.opt.diffuse)?;
            checkpoint::save_block(
                &dir,
                "specular",
                &mut mf.specular.params,
                &mut self.opt.specular,
            )?;
            checkpoint::save_block(
                &dir,
                "roughness",
                &mut mf.roughness.params,
                &mut self.opt.roughness,
            )?;
            meta.adam_steps.insert("diffuse".into(), self.opt.diffuse.step);
            meta.adam_steps
                .insert("specular".into(), self.opt.specular.step);
            meta.adam_steps
                .insert("roughness".into(), self.opt.roughness.step);
            meta.specs.insert("diffuse".into(), mf.diffuse.spec.clone());
            meta.specs.insert("specular".into(), mf.specular.spec.clone());
            meta.specs
                .insert("roughness".into(), mf.roughness.spec.clone());
        }
        checkpoint::save_block(&dir, "light", &mut self.scene.light.params, &mut self.opt.light)?;
        checkpoint::save_block(
            &dir,
            "density",
            &mut self.scene.density.params,
            &mut self.opt.density,
        )?;
        checkpoint::save_block(&dir, "blend", &mut self.scene.blend.params, &mut self.opt.blend)?;
        meta.adam_steps.insert("light".into(), self.opt.light.step);
        meta.adam_steps
            .insert("density".into(), self.opt.density.step);
        meta.adam_steps.insert("blend".into(), self.opt.blend.step);
        if let Some(head) = &mut self.scene.head {
            checkpoint::save_block(&dir, "head", &mut head.field.params, &mut self.opt.head)?;
            meta.adam_steps.insert("head".into(), self.opt.head.step);
            meta.specs.insert("head".into(), head.field.spec.clone());
        }
        if let Some(feat) = &mut self.feature_field {
            checkpoint::save_block(&dir, "feature", &mut feat.params, &mut self.opt.feature)?;
            meta.adam_steps
                .insert("feature".into(), self.opt.feature.step);
            meta.specs.insert("feature".into(), feat.spec.clone());
        }
        // snapping may have touched the owner; keep the injected copy in sync
        if self.feature_distilled {
            self.inject_feature_clone()?;
        }
        checkpoint::save_meta(&dir, &meta)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, stage: Stage) -> Result<()> {
        let dir = self.checkpoint_dir(stage);
        let meta = checkpoint::load_meta(&dir)?;
        if let Some(field) = self.scene.geometry.field_mut() {
            if meta.specs.get("sdf") != Some(&field.spec) {
                return Err(Error::Checkpoint {
                    reason: "sdf field spec mismatch".into(),
                });
            }
            checkpoint::load_block(&dir, "sdf", &mut field.params, &mut self.opt.sdf)?;
            self.opt.sdf.step = meta.adam_steps.get("sdf").copied().unwrap_or(0);
        }
        {
            let mf = self.scene.materials.fields_mut().expect("field materials");
            for (name, spec) in [
                ("diffuse", &mf.diffuse.spec),
                ("specular", &mf.specular.spec),
                ("roughness", &mf.roughness.spec),
            ] {
                if meta.specs.get(name) != Some(spec) {
                    return Err(Error::Checkpoint {
                        reason: format!("{name} field spec mismatch"),
                    });
                }
            }
            checkpoint::load_block(&dir, "diffuse", &mut mf.diffuse.params, &mut self.opt.diffuse)?;
            checkpoint::load_block(
                &dir,
                "specular",
                &mut mf.specular.params,
                &mut self.opt.specular,
            )?;
            checkpoint::load_block(
                &dir,
                "roughness",
                &mut mf.roughness.params,
                &mut self.opt.roughness,
            )?;
            self.opt.diffuse.step = meta.adam_steps.get("diffuse").copied().unwrap_or(0);
            self.opt.specular.step = meta.adam_steps.get("specular").copied().unwrap_or(0);
            self.opt.roughness.step = meta.adam_steps.get("roughness").copied().unwrap_or(0);
        }
        checkpoint::load_block(&dir, "light", &mut self.scene.light.params, &mut self.opt.light)?;
        checkpoint::load_block(
            &dir,
            "density",
            &mut self.scene.density.params,
            &mut self.opt.density,
        )?;
        checkpoint::load_block(&dir, "blend", &mut self.scene.blend.params, &mut self.opt.blend)?;
        self.opt.light.step = meta.adam_steps.get("light").copied().unwrap_or(0);
        self.opt.density.step = meta.adam_steps.get("density").copied().unwrap_or(0);
        self.opt.blend.step = meta.adam_steps.get("blend").copied().unwrap_or(0);
        if let Some(head) = &mut self.scene.head {
            checkpoint::load_block(&dir, "head", &mut head.field.params, &mut self.opt.head)?;
            self.opt.head.step = meta.adam_steps.get("head").copied().unwrap_or(0);
        }
        if let Some(feat) = &mut self.feature_field {
            checkpoint::load_block(&dir, "feature", &mut feat.params, &mut self.opt.feature)?;
            self.opt.feature.step = meta.adam_steps.get("feature").copied().unwrap_or(0);
        }
        self.feature_distilled = meta.feature_distilled;
        if self.feature_distilled {
            self.inject_feature_clone()?;
        }
        Ok(())
    }

    fn inject_feature_clone(&mut self) -> Result<()> {
        let Some(feat) = &self.feature_field else {
            return Ok(());
        };
        let clone = feat.clone();
        let mf = self.scene.materials.fields_mut().expect("field materials");
        if mf.specular.spec.extra_input_dim == clone.spec.output_dim {
            mf.feature = None;
            crate::distill::inject_features(mf, clone)?;
        }
        Ok(())
    }

    // -----------------------------------------------------------------
    // Stages
    // -----------------------------------------------------------------

    /// Geometry + radiance initialization through volume rendering, followed
    /// by the diffuse-albedo warm start.
    pub fn run_init(&mut self) -> Result<()> {
        if !matches!(self.cfg.geometry, GeometryConfig::Learned { .. })
            || self.cfg.schedule.init_iters == 0
        {
            log::info!("init stage skipped (analytic geometry or zero iterations)");
            self.save_checkpoint(Stage::Init, 0)?;
            return Ok(());
        }
        let views: Vec<_> = (0..self.dataset.view_count())
            .map(|v| (self.dataset.camera(v).clone(), self.images[v].clone()))
            .collect();
        let cfg = InitConfig {
            iters: self.cfg.schedule.init_iters,
            rays_per_batch: self.cfg.sampling.init_rays_per_batch,
            samples_per_ray: self.cfg.sampling.volume_samples,
            eikonal_points: self.cfg.sampling.eikonal_points,
            eikonal_weight: 0.1,
            background_weight: 0.3,
            lr: self.cfg.schedule.init_lr,
            t_min: self.dataset.meta.t_range[0],
            t_max: self.dataset.meta.t_range[1],
            seed: self.cfg.seed ^ 0x1217,
        };
        let head = self.scene.head.as_mut().expect("init stage needs a head");
        let report = init_fit(
            &mut self.scene.geometry,
            head,
            &mut self.scene.density,
            &views,
            &cfg,
        )?;
        log::info!(
            "init done: loss {:.5}, eikonal residual {:.5}",
            report.final_loss,
            report.mean_eikonal_residual
        );

        // diffuse warm start from the head's head-on response
        let opts = self.render_options();
        let cams: Vec<_> = views.iter().map(|(c, _)| c.clone()).collect();
        let pts = crate::render::trace_surface_points(&self.scene.geometry, &cams, &opts, 4, 512);
        let head = self.scene.head.as_ref().unwrap();
        let geometry = &self.scene.geometry;
        if let MaterialModel::Fields(mf) = &mut self.scene.materials {
            warm_start_albedo(geometry, head, &mut mf.diffuse, &pts, 200, 3e-3)?;
        }

        self.save_checkpoint(Stage::Init, self.cfg.schedule.init_iters)?;
        Ok(())
    }

    /// Fit the feature field to the ingested maps over the current geometry,
    /// then freeze it and inject it into the material networks.
    pub fn run_distill(&mut self) -> Result<()> {
        let enabled = self.cfg.render.features_enabled
            && self.feature_field.is_some()
            && self.cfg.schedule.distill_iters > 0;
        if !enabled {
            log::info!("distill stage skipped");
            self.save_checkpoint(Stage::Distill, 0)?;
            return Ok(());
        }
        let features = self.feature_maps.as_ref().expect("feature maps loaded");
        let cameras: Vec<_> = (0..self.dataset.view_count())
            .map(|v| self.dataset.camera(v).clone())
            .collect();
        let cfg = DistillConfig {
            iters: self.cfg.schedule.distill_iters,
            pixels_per_batch: self.cfg.sampling.distill_pixels_per_batch,
            lr: self.cfg.schedule.distill_lr,
            weight: self.cfg.schedule.distill_feature_weight,
            t_range: (self.dataset.meta.t_range[0], self.dataset.meta.t_range[1]),
            seed: self.cfg.seed ^ 0xd157,
        };
        let field = self.feature_field.as_mut().unwrap();
        let report = distill_fit(&self.scene.geometry, field, features, &cameras, &cfg)?;
        log::info!(
            "distill done: loss {:.6} over {} iterations ({} skipped batches)",
            report.final_loss,
            report.iters_run,
            report.skipped_batches
        );
        self.feature_distilled = true;
        self.inject_feature_clone()?;
        self.save_checkpoint(Stage::Distill, self.cfg.schedule.distill_iters)?;
        Ok(())
    }

    /// Joint physically-based surface rendering: warmup with geometry and
    /// light frozen, then full joint optimization with the blending network
    /// enabled at its scheduled iteration.
    pub fn run_pbr(&mut self, start_iter: usize) -> Result<()> {
        let total = self.cfg.schedule.pbr_iters;
        let log_path = self.cfg.out_dir.join("logs").join("pbr.csv");
        if let Some(parent) = log_path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let mut log_file = std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(start_iter > 0)
                .truncate(start_iter == 0)
                .write(true)
                .open(&log_path)
                .map_err(|e| Error::io(format!("opening {}", log_path.display()), e))?,
        );
        if start_iter == 0 {
            writeln!(
                log_file,
                "iter,rgb,ssim,eikonal,roughness_range,smoothness,feature,total"
            )
            .map_err(|e| Error::io("writing loss log", e))?;
        }

        // frozen-feature contract across the whole stage
        let feature_sum_before = self.feature_field.as_ref().map(feature_checksum);

        for iter in start_iter..total {
            let report = self.pbr_iteration(iter)?;
            writeln!(
                log_file,
                "{iter},{},{},{},{},{},{},{}",
                report.terms.rgb,
                report.terms.ssim,
                report.terms.eikonal,
                report.terms.roughness_range,
                report.terms.smoothness,
                report.terms.feature,
                report.total
            )
            .map_err(|e| Error::io("writing loss log", e))?;
            if iter % 200 == 0 {
                log::info!("pbr iter {iter}/{total}: total {:.6}", report.total);
            }
        }
        drop(log_file);

        if let (Some(before), Some(field)) = (feature_sum_before, self.feature_field.as_ref()) {
            assert_eq!(
                before,
                feature_checksum(field),
                "frozen feature field must not change during surface rendering"
            );
        }
        self.save_checkpoint(Stage::Pbr, total)?;
        Ok(())
    }

    fn pbr_iteration(&mut self, iter: usize) -> Result<LossReport> {
        let sched = self.cfg.schedule.clone();
        let weights = self.cfg.loss_weights;
        let patch = sched.patch.min(self.dataset.meta.resolution[0]);
        let root = Rng::new(self.cfg.seed);
        let mut rng = root.derive(0x9b12, iter as u64);
        let nviews = self.dataset.view_count();
        let view = rng.uniform_usize(nviews);
        let camera = self.dataset.camera(view).clone();
        let img = &self.images[view];
        let row0 = rng.uniform_usize(camera.height - patch + 1);
        let col0 = rng.uniform_usize(camera.width - patch + 1);
        let opts = self.render_options();
        let pixel_tag = 0x9b13u64 ^ ((iter as u64) << 20);
        let pixel_index =
            |row: usize, col: usize| ((view * camera.height + row) * camera.width + col) as u64;

        // reference patch
        let mut reference = ImageBuffer::zeros(patch, patch, 3);
        for pr in 0..patch {
            for pc in 0..patch {
                reference.set_rgb(pr, pc, img.get_rgb(row0 + pr, col0 + pc));
            }
        }

        // pass A: forward values; background pixels copy the reference so
        // they contribute zero residual and zero gradient
        let mut pred = reference.clone();
        let mut hit_mask = vec![false; patch * patch];
        for pr in 0..patch {
            for pc in 0..patch {
                let (row, col) = (row0 + pr, col0 + pc);
                let mut prng = root.derive(pixel_tag, pixel_index(row, col));
                if let Some(px) = shade_pixel(&self.scene, &camera, row, col, &opts, &mut prng)? {
                    pred.set_rgb(pr, pc, px.radiance);
                    hit_mask[pr * patch + pc] = true;
                }
            }
        }
        let n_hits = hit_mask.iter().filter(|&&h| h).count();

        let (rgb_value, rgb_grad) = pyramid_l2_backward(&pred, &reference, PYRAMID_LEVELS)?;
        let (ssim_value, ssim_grad) = ssim_backward(&pred, &reference)?;
        let ssim_loss = 1.0 - ssim_value;

        // pass B: per-pixel backward with the patch-loss upstream
        let mut sink = self.scene.new_sink();
        let mut rough_vals = Vec::with_capacity(n_hits);
        let mut surface_pts = Vec::with_capacity(n_hits);
        let mut feature_term = 0.0;
        let lambda_feat = if self.feature_distilled {
            weights.feature
        } else {
            0.0
        };
        for pr in 0..patch {
            for pc in 0..patch {
                if !hit_mask[pr * patch + pc] {
                    continue;
                }
                let (row, col) = (row0 + pr, col0 + pc);
                let mut prng = root.derive(pixel_tag, pixel_index(row, col));
                let px = shade_pixel(&self.scene, &camera, row, col, &opts, &mut prng)?
                    .expect("pass B must reproduce pass A hits");
                let up = vec3(
                    rgb_grad.get(pr, pc, 0) - ssim_grad.get(pr, pc, 0),
                    rgb_grad.get(pr, pc, 1) - ssim_grad.get(pr, pc, 1),
                    rgb_grad.get(pr, pc, 2) - ssim_grad.get(pr, pc, 2),
                );
                px.backward(&self.scene, &camera, up, &mut sink);

                // roughness range hinge at this surface point (detached pos)
                let r = px.roughness();
                rough_vals.push(r);
                let g = weights.roughness_range * roughness_range_grad(r) / n_hits as f64;
                if g != 0.0 {
                    px.material().backward(
                        &self.scene.materials,
                        Vec3::ZERO,
                        Vec3::ZERO,
                        g,
                        &mut sink,
                    );
                }
                surface_pts.push((px.hit.x, px.hit.n));

                // feature alignment on the differentiable surface point; the
                // feature field itself is frozen, geometry still sees it
                if lambda_feat > 0.0 {
                    let feat = self.scene.materials.fields().and_then(|m| m.feature.as_ref());
                    if let (Some(feat), Some(maps)) = (feat, self.feature_maps.as_ref()) {
                        let target = maps.lookup(view, row, col, camera.height, camera.width);
                        let x_theta = px.reparam().value;
                        let (out, jac, _) = feat.eval_with_jacobian(x_theta, &[])?;
                        let mut up_x = Vec3::ZERO;
                        for c in 0..out.len() {
                            let rres = out[c] - target[c];
                            feature_term += rres * rres / n_hits as f64;
                            let s = 2.0 * lambda_feat * rres / n_hits as f64;
                            up_x += Vec3::from_array(jac[c]) * s;
                        }
                        px.reparam()
                            .backward(&self.scene.geometry, up_x, &mut sink.sdf);
                    }
                }
            }
        }
        let range_value = if rough_vals.is_empty() {
            0.0
        } else {
            roughness_range_loss(&rough_vals)
        };

        // smoothness on a subset of this patch's surface points
        let smooth_value = if surface_pts.is_empty() {
            0.0
        } else {
            let take = surface_pts.len().min(16);
            let pts: Vec<Vec3> = (0..take)
                .map(|i| surface_pts[i * surface_pts.len() / take].0)
                .collect();
            let mut srng = root.derive(0x500f, iter as u64);
            let mut ssink = self.scene.new_sink();
            let sigma = 0.01 * self.dataset.meta.scene_radius;
            let v = smoothness_loss(
                &self.scene.materials,
                &pts,
                sigma,
                &mut srng,
                Some(&mut ssink),
            );
            sink.merge_scaled(&ssink, weights.smoothness);
            v
        };

        // Eikonal on box + near-surface points
        let eik_value = {
            let mut pts: Vec<Vec3> = Vec::with_capacity(self.cfg.sampling.eikonal_points);
            let mut erng = root.derive(0xe1c0, iter as u64);
            for _ in 0..self.cfg.sampling.eikonal_points / 2 {
                pts.push(vec3(
                    erng.uniform_in(-1.0, 1.0),
                    erng.uniform_in(-1.0, 1.0),
                    erng.uniform_in(-1.0, 1.0),
                ));
            }
            if !surface_pts.is_empty() {
                for _ in 0..self.cfg.sampling.eikonal_points / 2 {
                    let (x, n) = surface_pts[erng.uniform_usize(surface_pts.len())];
                    pts.push(x + n * (erng.normal() * 0.05));
                }
            }
            if pts.is_empty() {
                0.0
            } else if self.scene.geometry.param_len() > 0 {
                let mut esink = self.scene.new_sink();
                let v = crate::losses::eikonal_loss(&self.scene.geometry, &pts, Some(&mut esink));
                sink.merge_scaled(&esink, weights.eikonal);
                v
            } else {
                crate::losses::eikonal_loss(&self.scene.geometry, &pts, None)
            }
        };

        let terms = LossTerms {
            rgb: rgb_value,
            ssim: ssim_loss,
            eikonal: eik_value,
            roughness_range: range_value,
            smoothness: smooth_value,
            feature: feature_term,
        };
        let report = total_loss(&terms, &weights)?;

        // optimizer steps under the stage freeze rules
        let in_warmup = iter < sched.warmup_iters;
        {
            let mf = self.scene.materials.fields_mut().expect("field materials");
            mf.diffuse.params.grads.copy_from_slice(&sink.diffuse);
            self.opt.diffuse.step(&mut mf.diffuse.params)?;
            mf.specular.params.grads.copy_from_slice(&sink.specular);
            self.opt.specular.step(&mut mf.specular.params)?;
            mf.roughness.params.grads.copy_from_slice(&sink.roughness);
            self.opt.roughness.step(&mut mf.roughness.params)?;
        }
        if !in_warmup {
            if let Some(field) = self.scene.geometry.field_mut() {
                field.params.grads.copy_from_slice(&sink.sdf);
                self.opt.sdf.step(&mut field.params)?;
            }
            if self.cfg.light.optimize {
                self.scene.light.params.grads.copy_from_slice(&sink.light);
                self.opt.light.step(&mut self.scene.light.params)?;
            }
            self.scene
                .density
                .params
                .grads
                .copy_from_slice(&sink.density);
            self.opt.density.step(&mut self.scene.density.params)?;
        }
        if iter >= sched.blend_start_iter {
            self.scene.blend.params.grads.copy_from_slice(&sink.blend);
            self.opt.blend.step(&mut self.scene.blend.params)?;
        }
        Ok(report)
    }

    /// Run all stages in order, loading any already-completed stage from its
    /// checkpoint (the resumability contract). `force` re-runs everything.
    pub fn run_pipeline(&mut self, force: bool) -> Result<()> {
        for stage in [Stage::Init, Stage::Distill, Stage::Pbr] {
            if !force && self.stage_done(stage) {
                log::info!("stage {} already complete; loading checkpoint", stage.name());
                self.load_checkpoint(stage)?;
                continue;
            }
            match stage {
                Stage::Init => self.run_init()?,
                Stage::Distill => self.run_distill()?,
                Stage::Pbr => self.run_pbr(0)?,
            }
        }
        Ok(())
    }

    /// Load the latest completed stage's checkpoint (pbr > distill > init).
    pub fn load_latest(&mut self) -> Result<Stage> {
        for stage in [Stage::Pbr, Stage::Distill, Stage::Init] {
            if self.stage_done(stage) {
                self.load_checkpoint(stage)?;
                return Ok(stage);
            }
        }
        Err(Error::Checkpoint {
            reason: format!(
                "no checkpoints under {}",
                self.cfg.out_dir.join("checkpoints").display()
            ),
        })
    }
}
