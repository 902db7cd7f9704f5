use pir::core::math::{vec3};
use pir::core::rng::Rng;
use pir::fields::{Activation, BackendSpec, Field, FieldSpec};
use pir::geometry::{extract_mesh, SdfScene};
use pir::scenegen::{generate_dataset, PresetKind};
use pir::volinit::{init_fit, volume_render, InitConfig, NeusDensity, RadianceHead};

#[test]
fn dbg() {
    let dir = std::env::temp_dir().join(format!("pir-dbginit-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let ds = generate_dataset(PresetKind::TwoMaterialSphere, 10, 32, 4, 21, &dir).unwrap();

    let mut rng = Rng::new(3);
    let spec = FieldSpec {
        backend: BackendSpec::Grid { resolution: 32 },
        output_dim: 1,
        encoding_freqs: 0,
        extra_input_dim: 0,
        activation: Activation::None,
    };
    let mut sdf = Field::new(spec, "sdf").unwrap();
    sdf.init_sphere(0.7, &mut rng);
    let mut geometry = SdfScene::Learned(sdf);
    let head_spec = FieldSpec {
        backend: BackendSpec::Mlp { layers: 3, width: 32, hidden_beta: 100.0 },
        output_dim: 3,
        encoding_freqs: 4,
        extra_input_dim: 6,
        activation: Activation::Sigmoid,
    };
    let mut hf = Field::new(head_spec, "head").unwrap();
    hf.init_random(&mut rng);
    let mut head = RadianceHead { field: hf };
    let mut density = NeusDensity::new(30.0, 48);
    let views: Vec<_> = (0..ds.view_count())
        .map(|v| (ds.camera(v).clone(), ds.image(v).unwrap()))
        .collect();

    for round in 0..4 {
        let cfg = InitConfig {
            iters: 300,
            rays_per_batch: 256,
            samples_per_ray: 48,
            eikonal_points: 32,
            eikonal_weight: 0.1,
            background_weight: 25.0,
            lr: 1e-2,
            t_min: ds.meta.t_range[0],
            t_max: ds.meta.t_range[1],
            seed: 11 + round,
        };
        let report = init_fit(&mut geometry, &mut head, &mut density, &views, &cfg).unwrap();
        // radial SDF profile along +x
        let mut zero_r = 0.0;
        for i in 0..200 {
            let r = i as f64 / 100.0;
            if geometry.value(vec3(r, 0.0, 0.0)) > 0.0 {
                zero_r = r;
                break;
            }
        }
        // background ray weight sum
        let cam = ds.camera(0);
        let ray = cam.pixel_ray(1, 1);
        let bg = volume_render(&geometry, &head, &density, &ray, ds.meta.t_range[0], ds.meta.t_range[1], 48, None).unwrap();
        // center ray
        let rayc = cam.pixel_ray(16, 16);
        let fg = volume_render(&geometry, &head, &density, &rayc, ds.meta.t_range[0], ds.meta.t_range[1], 48, None).unwrap();
        println!(
            "round {round}: loss {:.4} eik {:.3} sharp {:.1} zero_x {:.3} bg_wsum {:.4} bg_c {:.3} fg_wsum {:.3} fg_c ({:.2},{:.2},{:.2}) ref ({:.2},{:.2},{:.2})",
            report.final_loss, report.mean_eikonal_residual, density.sharpness(), zero_r,
            bg.weight_sum, bg.color.norm(), fg.weight_sum,
            fg.color.x, fg.color.y, fg.color.z,
            views[0].1.get_rgb(16,16).x, views[0].1.get_rgb(16,16).y, views[0].1.get_rgb(16,16).z,
        );
    }
    let mesh = extract_mesh(&geometry, 48).unwrap();
    let radii: Vec<f64> = mesh.positions.iter().map(|p| p.norm()).collect();
    let rmin = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = radii.iter().cloned().fold(0.0f64, f64::max);
    let rmean = radii.iter().sum::<f64>() / radii.len() as f64;
    println!("mesh {} verts: r mean {:.4} min {:.4} max {:.4}", radii.len(), rmean, rmin, rmax);
}
