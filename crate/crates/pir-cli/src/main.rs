//! `pir`: photometric inverse rendering pipeline.
//!
//! Subcommands map onto the pipeline stages plus utilities:
//! `scenegen` writes a synthetic dataset, `init`/`distill`/`optimize` run
//! the training stages (resumable; `--force` re-runs), `render` and `eval`
//! operate on the latest checkpoint, `export-mesh` extracts the geometry.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pir::config::SceneConfig;
use pir::geometry::extract_mesh;
use pir::scenegen::{generate_dataset, PresetKind};
use pir::trainer::eval::evaluate;
use pir::trainer::{Stage, Workspace};

#[derive(Parser)]
#[command(name = "pir", version, about = "Photometric inverse rendering pipeline")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Scene configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Re-run the stage even if its checkpoint exists.
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with the brute-force reference renderer.
    Scenegen {
        /// Preset name (two_material_sphere, concave_bowl, plane_pair,
        /// offset_light_sphere, sphere_over_plane).
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Stratified hemisphere directions for the indirect term.
        #[arg(long, default_value_t = 64)]
        spp: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Volume-rendering initialization of geometry and diffuse albedo.
    Init(ConfigArgs),
    /// Distill feature maps onto the surface and freeze the feature field.
    Distill(ConfigArgs),
    /// Run the full pipeline (init, distill, surface rendering), resuming
    /// completed stages from their checkpoints.
    Optimize(ConfigArgs),
    /// Render a view with the latest checkpoint.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Output PNG path (defaults to <out_dir>/renders/<view>.png).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute image and material metrics against the dataset ground truth.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate a single view (all views when omitted).
        #[arg(long)]
        view: Option<usize>,
    },
    /// Extract the zero level set as an OBJ mesh.
    ExportMesh {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Output OBJ path (defaults to <out_dir>/mesh.obj).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("pir: failed to configure {} threads: {e}", cli.threads);
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pir: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_workspace(config: &PathBuf) -> Result<Workspace> {
    let cfg = SceneConfig::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    Workspace::create(cfg).context("building workspace")
}

fn clear_stage(ws: &Workspace, stage: Stage) -> Result<()> {
    let dir = ws
        .cfg
        .out_dir
        .join("checkpoints")
        .join(stage.name());
    if dir.exists() {
        std::fs::remove_dir_all(&dir)
            .with_context(|| format!("clearing checkpoint {}", dir.display()))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Scenegen {
            preset,
            views,
            resolution,
            spp,
            seed,
            out,
        } => {
            let kind = PresetKind::parse(&preset)?;
            let ds = generate_dataset(kind, views, resolution, spp, seed, &out)
                .with_context(|| format!("generating dataset in {}", out.display()))?;
            println!(
                "wrote {} views of {} at {}x{} to {}",
                ds.view_count(),
                kind.name(),
                resolution,
                resolution,
                out.display()
            );
            Ok(())
        }
        Command::Init(args) => {
            let mut ws = load_workspace(&args.config)?;
            if ws.stage_done(Stage::Init) && !args.force {
                println!("init stage already complete (use --force to re-run)");
                return Ok(());
            }
            if args.force {
                clear_stage(&ws, Stage::Init)?;
            }
            ws.run_init().context("init stage")?;
            println!("init stage complete");
            Ok(())
        }
        Command::Distill(args) => {
            let mut ws = load_workspace(&args.config)?;
            if ws.stage_done(Stage::Distill) && !args.force {
                println!("distill stage already complete (use --force to re-run)");
                return Ok(());
            }
            if ws.stage_done(Stage::Init) {
                ws.load_checkpoint(Stage::Init)?;
            }
            if args.force {
                clear_stage(&ws, Stage::Distill)?;
            }
            ws.run_distill().context("distill stage")?;
            println!("distill stage complete");
            Ok(())
        }
        Command::Optimize(args) => {
            let mut ws = load_workspace(&args.config)?;
            if args.force {
                for stage in [Stage::Init, Stage::Distill, Stage::Pbr] {
                    clear_stage(&ws, stage)?;
                }
            }
            ws.run_pipeline(false).context("pipeline")?;
            println!("optimization complete");
            Ok(())
        }
        Command::Render { config, view, out } => {
            let mut ws = load_workspace(&config)?;
            let stage = ws.load_latest().context("loading checkpoint")?;
            log::info!("rendering with the {} checkpoint", stage.name());
            let opts = ws.render_options();
            let camera = ws.dataset.camera(view).clone();
            let (img, _) = pir::render::render_image(&ws.scene, &camera, &opts)?;
            let png = out.unwrap_or_else(|| {
                ws.cfg.out_dir.join("renders").join(format!("{view:04}.png"))
            });
            img.write_png(&png)?;
            img.write_tnsr(png.with_extension("tnsr"))?;
            println!("wrote {}", png.display());
            Ok(())
        }
        Command::Eval { config, view } => {
            let mut ws = load_workspace(&config)?;
            ws.load_latest().context("loading checkpoint")?;
            let opts = ws.render_options();
            let views: Vec<usize> = match view {
                Some(v) => vec![v],
                None => (0..ws.dataset.view_count()).collect(),
            };
            let report = evaluate(&ws.scene, &ws.dataset, &views, &opts)?;
            let json = serde_json::to_string_pretty(&report)?;
            let path = ws.cfg.out_dir.join("eval.json");
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, &json)?;
            println!("{json}");
            Ok(())
        }
        Command::ExportMesh {
            config,
            resolution,
            out,
        } => {
            let mut ws = load_workspace(&config)?;
            // a fresh analytic-geometry workspace needs no checkpoint
            if ws.scene.geometry.param_len() > 0 {
                ws.load_latest().context("loading checkpoint")?;
            }
            let mesh = extract_mesh(&ws.scene.geometry, resolution)?;
            let path = out.unwrap_or_else(|| ws.cfg.out_dir.join("mesh.obj"));
            mesh.write_obj(&path)?;
            println!(
                "wrote {} ({} vertices, {} triangles)",
                path.display(),
                mesh.positions.len(),
                mesh.triangles.len()
            );
            Ok(())
        }
    }
}
